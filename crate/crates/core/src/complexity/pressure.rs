//! Growth rates of `Q̂_n`: pressure, entropy, the threshold `t_*`, and the
//! sparse-recurrence statistic.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{survey, SamplingPlan, Survey};
use crate::billiard_map::{step, PhasePoint};
use crate::error::EstimateError;
use crate::geometry::TableGeometry;
use crate::rng::child_rng;

/// Growth-rate estimators for one sequence `log Q̂_1, …, log Q̂_{n_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub log_q: Vec<f64>,
    /// `inf_n (1/n) log Q̂_n`.
    pub inf_estimate: f64,
    /// Least-squares slope of `log Q̂_n` against `n` over `fit_from..=n_max`.
    pub fit_estimate: f64,
    /// `(1/n_max) log Q̂_{n_max}`.
    pub last_estimate: f64,
    pub fit_from: usize,
    /// Point estimate (the slope fit).
    pub estimate: f64,
    /// Largest minus smallest of the three estimators.
    pub spread: f64,
}

impl GrowthEstimate {
    pub fn from_log_q(log_q: Vec<f64>) -> Self {
        let n_max = log_q.len();
        let inf_estimate = log_q.iter().enumerate().map(|(i, l)| l / (i + 1) as f64).fold(f64::INFINITY, f64::min);
        let last_estimate = log_q[n_max - 1] / n_max as f64;
        let fit_from = if n_max >= 3 { 2 } else { 1 };
        let xs: Vec<f64> = (fit_from..=n_max).map(|n| n as f64).collect();
        let ys = &log_q[fit_from - 1..];
        let fit_estimate = if xs.len() < 2 {
            last_estimate
        } else {
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            sxy / sxx
        };
        let all = [inf_estimate, fit_estimate, last_estimate];
        let spread = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - all.iter().cloned().fold(f64::INFINITY, f64::min);
        Self { log_q, inf_estimate, fit_estimate, last_estimate, fit_from, estimate: fit_estimate, spread }
    }

    /// `(min, max)` of `log Q̂_n - n P̂` over `n ∈ [2, n_max]`.
    pub fn growth_band(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, l) in self.log_q.iter().enumerate().skip(1) {
            let r = l - (i + 1) as f64 * self.estimate;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressurePoint {
    pub t: f64,
    pub n_max: usize,
    pub growth: GrowthEstimate,
    /// Estimated number of cells at `n_max`.
    pub classes: f64,
    pub warnings: Vec<String>,
}

impl PressurePoint {
    pub fn estimate(&self) -> f64 {
        self.growth.estimate
    }

    pub fn spread(&self) -> f64 {
        self.growth.spread
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub n_max: usize,
    pub points: Vec<PressurePoint>,
}

impl PressureCurve {
    pub fn from_survey(s: &Survey, ts: &[f64]) -> Self {
        let points = ts
            .iter()
            .map(|&t| PressurePoint {
                t,
                n_max: s.n_max,
                growth: GrowthEstimate::from_log_q((1..=s.n_max).map(|n| s.log_q(n, t)).collect()),
                classes: s.class_count(s.n_max),
                warnings: s.meta.warnings.clone(),
            })
            .collect();
        Self { n_max: s.n_max, points }
    }

    /// Curve from given point estimates and spreads (no complexity data).
    pub fn from_values(ts: &[f64], values: &[f64], spreads: &[f64]) -> Self {
        let points = ts
            .iter()
            .zip(values)
            .zip(spreads)
            .map(|((&t, &p), &s)| PressurePoint {
                t,
                n_max: 0,
                growth: GrowthEstimate {
                    log_q: Vec::new(),
                    inf_estimate: p,
                    fit_estimate: p,
                    last_estimate: p,
                    fit_from: 0,
                    estimate: p,
                    spread: s,
                },
                classes: 0.0,
                warnings: Vec::new(),
            })
            .collect();
        Self { n_max: 0, points }
    }

    pub fn at(&self, t: f64) -> Option<&PressurePoint> {
        self.points.iter().find(|p| (p.t - t).abs() < 1e-12)
    }

    /// Largest `P̂((t+t')/2) - (P̂(t) + P̂(t'))/2` over consecutive equally spaced triples.
    pub fn convexity_defect(&self) -> f64 {
        self.points
            .windows(3)
            .filter(|w| ((w[1].t - w[0].t) - (w[2].t - w[1].t)).abs() < 1e-9)
            .map(|w| w[1].estimate() - 0.5 * (w[0].estimate() + w[2].estimate()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,P_star_inf,P_star_fit,spread,n_max,classes")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{:.10},{:.10},{:.10},{},{:.0}",
                p.t, p.growth.inf_estimate, p.growth.fit_estimate, p.growth.spread, p.n_max, p.classes
            )?;
        }
        Ok(())
    }
}

/// `P̂_*(t)` from `Q̂_1 … Q̂_{n_max}`.
pub fn estimate_pressure(table: &TableGeometry, t: f64, n_max: usize, plan: &SamplingPlan) -> Result<PressurePoint, EstimateError> {
    Ok(pressure_curve(table, &[t], n_max, plan)?.points.remove(0))
}

/// Pressure estimates on a grid of `t` from a single survey.
pub fn pressure_curve(table: &TableGeometry, ts: &[f64], n_max: usize, plan: &SamplingPlan) -> Result<PressureCurve, EstimateError> {
    if n_max < 4 {
        return Err(EstimateError::Parameter(format!("n_max must be at least 4, got {n_max}")));
    }
    if ts.iter().any(|t| !(*t > 0.0)) {
        return Err(EstimateError::Parameter("t must be positive".into()));
    }
    let s = survey(table, n_max, None, plan)?;
    Ok(PressureCurve::from_survey(&s, ts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Estimated `log #M₀ⁿ` for `n = 1..=n_max`.
    pub growth: GrowthEstimate,
    pub warnings: Vec<String>,
}

/// `ĥ_*` from counts of the plain itinerary partition (no strips).
pub fn estimate_h_star(table: &TableGeometry, n_max: usize, plan: &SamplingPlan) -> Result<EntropyEstimate, EstimateError> {
    if n_max < 4 {
        return Err(EstimateError::Parameter(format!("n_max must be at least 4, got {n_max}")));
    }
    let plan = SamplingPlan { with_strips: false, importance_t: vec![0.0], ..plan.clone() };
    let s = survey(table, n_max, None, &plan)?;
    let log_q = (1..=n_max).map(|n| s.class_count(n).ln()).collect();
    Ok(EntropyEstimate { growth: GrowthEstimate::from_log_q(log_q), warnings: s.meta.warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TStar {
    /// Root of `P̂(t) + t log Λ` with the interval from the spreads.
    Bounded { t: f64, lo: f64, hi: f64 },
    /// No sign change on the grid; `t_*` exceeds `lower`.
    Unbounded { lower: f64 },
}

/// Lower convex envelope of `(t, value)` points sorted by `t`.
fn convex_envelope(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn interp(hull: &[(f64, f64)], t: f64) -> f64 {
    let i = hull.partition_point(|p| p.0 <= t).clamp(1, hull.len() - 1);
    let (a, b) = (hull[i - 1], hull[i]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// First root of the convex interpolant of `P + shift + t log Λ`, by bisection.
fn root(curve: &PressureCurve, log_lambda: f64, shift: impl Fn(&PressurePoint) -> f64) -> Result<f64, f64> {
    let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.t, p.estimate() + shift(p) + p.t * log_lambda)).collect();
    let hull = convex_envelope(&pts);
    let f = |t: f64| interp(&hull, t);
    let mut lower = hull[0].0;
    for w in hull.windows(2) {
        if w[0].1 > 0.0 && w[1].1 <= 0.0 {
            let (mut a, mut b) = (w[0].0, w[1].0);
            for _ in 0..200 {
                let c = 0.5 * (a + b);
                if f(c) > 0.0 {
                    a = c;
                } else {
                    b = c;
                }
            }
            return Ok(0.5 * (a + b));
        }
        if w[1].1 > 0.0 {
            lower = w[1].0;
        }
    }
    Err(lower)
}

/// `t̂_*`: root of `P̂_*(t) + t log Λ = 0`.
pub fn estimate_t_star(curve: &PressureCurve, lambda: f64) -> Result<TStar, EstimateError> {
    if curve.points.len() < 2 {
        return Err(EstimateError::Insufficient("need at least two pressure points".into()));
    }
    let ll = lambda.ln();
    match root(curve, ll, |_| 0.0) {
        Ok(t) => {
            let lo = root(curve, ll, |p| -p.spread()).unwrap_or_else(|l| l);
            let hi = root(curve, ll, |p| p.spread()).unwrap_or(f64::INFINITY);
            Ok(TStar::Bounded { t, lo: lo.min(t), hi: hi.max(t) })
        }
        Err(lower) => Ok(TStar::Unbounded { lower }),
    }
}

/// Fraction of the first `n0` collisions of `x` with `|phi| > phi0`, or `None`
/// if the orbit hits a near-tangential collision.
pub fn segment_fraction(table: &TableGeometry, x: &PhasePoint, phi0: f64, n0: usize) -> Option<f64> {
    let mut y = *x;
    let mut hits = 0;
    for j in 0..n0 {
        if y.phi.abs() > phi0 {
            hits += 1;
        }
        if j + 1 < n0 {
            y = step(table, &y).ok()?.to;
        }
    }
    Some(hits as f64 / n0 as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRecurrence {
    pub phi0: f64,
    pub n0: usize,
    pub s0: f64,
    pub segments: usize,
    pub skipped: usize,
    /// `ĥ_* - spread > ŝ₀ log 2`, when an entropy estimate was supplied.
    pub verdict: Option<bool>,
    pub margin: Option<f64>,
}

/// Largest fraction of near-tangential collisions over `orbit_samples` orbit
/// segments of length `n0` started from the invariant measure `cos φ dr dφ`.
pub fn sparse_recurrence_statistic(
    table: &TableGeometry,
    phi0: f64,
    n0: usize,
    orbit_samples: usize,
    seed: u64,
    h_star: Option<&EntropyEstimate>,
) -> Result<SparseRecurrence, EstimateError> {
    if !(phi0 > 0.0 && phi0 < std::f64::consts::FRAC_PI_2) || n0 == 0 {
        return Err(EstimateError::Parameter("need 0 < phi0 < π/2 and n0 >= 1".into()));
    }
    let chunk = 4096;
    let chunks = orbit_samples.div_ceil(chunk);
    let parts: Vec<(f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = child_rng(seed, c as u64);
            let count = chunk.min(orbit_samples - c * chunk);
            let (mut best, mut skipped) = (0.0f64, 0);
            for _ in 0..count {
                let x = liouville_point(table, &mut rng);
                match segment_fraction(table, &x, phi0, n0) {
                    Some(f) => best = best.max(f),
                    None => skipped += 1,
                }
            }
            (best, skipped)
        })
        .collect();
    let s0 = parts.iter().map(|p| p.0).fold(0.0, f64::max);
    let skipped = parts.iter().map(|p| p.1).sum();
    let margin = h_star.map(|h| h.growth.estimate - h.growth.spread - s0 * std::f64::consts::LN_2);
    Ok(SparseRecurrence { phi0, n0, s0, segments: orbit_samples, skipped, verdict: margin.map(|m| m > 0.0), margin })
}

/// Point drawn from the normalized measure `cos φ dr dφ`.
pub fn liouville_point(table: &TableGeometry, rng: &mut impl Rng) -> PhasePoint {
    let total: f64 = (0..table.scatterer_count()).map(|s| table.perimeter(s)).sum();
    let mut u = rng.random_range(0.0..total);
    let mut s = 0;
    while s + 1 < table.scatterer_count() && u >= table.perimeter(s) {
        u -= table.perimeter(s);
        s += 1;
    }
    let sin: f64 = rng.random_range(-1.0..1.0);
    PhasePoint::new(s, u, sin.asin())
}
