//! Stable curves and their backward evolution `T^{-n} W`, cut into weakly
//! homogeneous pieces.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::Rng;

use serde::{Deserialize, Serialize};

use super::tracer::{splitmix, MAX_DEPTH};
use super::liouville_point;
use crate::billiard_map::{pull_slope, stable_cone, step, step_inverse, PhasePoint, TangentVector};
use crate::error::EstimateError;
use crate::geometry::TableGeometry;
use crate::singularity::{signed_strip, StripParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableCurve {
    pub scatterer: usize,
    /// `(r, phi)` vertices, `r` unwrapped.
    pub vertices: Vec<[f64; 2]>,
    /// Tangent slope at each vertex.
    pub slopes: Vec<f64>,
    /// True when all vertices lie in one homogeneity strip.
    pub homogeneous: bool,
}

impl StableCurve {
    /// Straight segment of the given slope and length centred at `center`.
    pub fn segment(table: &TableGeometry, scatterer: usize, center: [f64; 2], slope: f64, length: f64) -> Self {
        let h = 0.5 * length / (1.0 + slope * slope).sqrt();
        let vertices = vec![[center[0] - h, center[1] - slope * h], [center[0] + h, center[1] + slope * h]];
        let p = StripParams::of(table);
        let homogeneous = signed_strip(vertices[0][1], &p) == signed_strip(vertices[1][1], &p);
        Self { scatterer, vertices, slopes: vec![slope; 2], homogeneous }
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
    }

    /// Checks the cone condition on every chord and tangent, the length bound,
    /// and a bound on the turning of consecutive chords per unit length.
    pub fn check(&self, table: &TableGeometry, delta: f64, curvature_bound: f64) -> Result<(), EstimateError> {
        let (lo, hi) = stable_cone(table);
        let inside = |v: f64| v >= lo - 1e-9 && v <= hi + 1e-9;
        if !self.slopes.iter().all(|&v| inside(v)) {
            return Err(EstimateError::Parameter("tangent outside the stable cone".into()));
        }
        let chords: Vec<f64> = self.vertices.windows(2).map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).collect();
        if !chords.iter().all(|&v| inside(v)) {
            return Err(EstimateError::Parameter("chord outside the stable cone".into()));
        }
        if self.length() > delta {
            return Err(EstimateError::Parameter(format!("length {} exceeds {delta}", self.length())));
        }
        for (i, w) in chords.windows(2).enumerate() {
            let turn = (w[1].atan() - w[0].atan()).abs();
            let a = self.vertices[i];
            let c = self.vertices[i + 2];
            let span = (c[0] - a[0]).hypot(c[1] - a[1]);
            if span > 0.0 && turn / span > curvature_bound {
                return Err(EstimateError::Parameter("curvature bound exceeded".into()));
            }
        }
        Ok(())
    }

    /// Point and unit tangent at arclength fraction `u ∈ [0, 1]`.
    fn at(&self, u: f64) -> ([f64; 2], [f64; 2]) {
        let mut target = u.clamp(0.0, 1.0) * self.length();
        let last = self.vertices.len() - 2;
        for (i, w) in self.vertices.windows(2).enumerate() {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if target <= d || i == last {
                let f = if d > 0.0 { (target / d).min(1.0) } else { 0.0 };
                let tangent = [(w[1][0] - w[0][0]) / d, (w[1][1] - w[0][1]) / d];
                return ([w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])], tangent);
            }
            target -= d;
        }
        unreachable!("curve with fewer than two vertices")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOptions {
    pub strips: StripParams,
    /// Length on `W` below which a cut is no longer bisected.
    pub cut_length: f64,
    /// Largest gap between images of adjacent samples, as a fraction of `delta`.
    pub spacing_fraction: f64,
    pub eval_budget: usize,
}

impl EvolutionOptions {
    pub fn for_table(table: &TableGeometry) -> Self {
        Self { strips: StripParams::of(table), cut_length: 1e-12, spacing_fraction: 0.125, eval_budget: 2_000_000 }
    }
}

#[derive(Clone)]
struct CurveSample {
    u: f64,
    valid: usize,
    hash: [u64; MAX_DEPTH],
    strip: [i64; MAX_DEPTH],
    img: [PhasePoint; MAX_DEPTH],
    tangent: [TangentVector; MAX_DEPTH],
    /// `log J_W Tᵏ⁺¹` in the Euclidean metric at `T^{-k-1}` of the sample.
    log_j: [f64; MAX_DEPTH],
    /// One-step Jacobian in the adapted metric.
    log_j_adapted: f64,
}

struct Evolver<'a> {
    table: &'a TableGeometry,
    curve: &'a StableCurve,
    opts: EvolutionOptions,
    depth: usize,
    spacing: f64,
    evals: usize,
}

impl Evolver<'_> {
    fn evaluate(&mut self, u: f64) -> CurveSample {
        self.evals += 1;
        let (p, t) = self.curve.at(u);
        let x = PhasePoint::new(self.curve.scatterer, p[0], p[1]);
        let mut w = TangentVector::from_slope(t[1] / t[0]);
        let w0 = w;
        let mut out = CurveSample {
            u,
            valid: 0,
            hash: [0; MAX_DEPTH],
            strip: [0; MAX_DEPTH],
            img: [x; MAX_DEPTH],
            tangent: [w; MAX_DEPTH],
            log_j: [0.0; MAX_DEPTH],
            log_j_adapted: 0.0,
        };
        let mut y = x;
        let mut h = 0x1357_9BDF_2468_ACE0u64;
        for k in 0..self.depth {
            let Ok(st) = step_inverse(self.table, &y) else { break };
            let strip = signed_strip(st.to.phi, &self.opts.strips);
            let code = (st.to.scatterer as u64)
                | ((y.scatterer as u64) << 8)
                | (((st.offset[0] + 128) as u64 & 0xff) << 16)
                | (((st.offset[1] + 128) as u64 & 0xff) << 24)
                | ((strip + (1 << 30)) as u64) << 32;
            h = splitmix(h ^ code);
            w = w.apply(&st.dt);
            if k == 0 {
                out.log_j_adapted = w0.adapted_norm(self.table.curvature(y.scatterer)).ln()
                    - w.adapted_norm(self.table.curvature(st.to.scatterer)).ln();
            }
            out.hash[k] = h;
            out.strip[k] = strip;
            out.img[k] = st.to;
            out.tangent[k] = w;
            out.log_j[k] = -w.euclid_norm().ln();
            out.valid = k + 1;
            y = st.to;
        }
        out
    }

    fn gap(&self, a: &PhasePoint, b: &PhasePoint) -> f64 {
        if a.scatterer != b.scatterer {
            return f64::INFINITY;
        }
        let p = self.table.perimeter(a.scatterer);
        let mut dr = (a.r - b.r).rem_euclid(p);
        if dr > 0.5 * p {
            dr -= p;
        }
        dr.hypot(a.phi - b.phi)
    }

    fn should_split(&self, a: &CurveSample, b: &CurveSample, length: f64) -> bool {
        if (b.u - a.u) * length < self.opts.cut_length || self.evals >= self.opts.eval_budget {
            return false;
        }
        let n = self.depth;
        match (0..n).find(|&k| k >= a.valid || k >= b.valid || a.hash[k] != b.hash[k]) {
            None => self.gap(&a.img[n - 1], &b.img[n - 1]) > self.spacing,
            Some(_) => true,
        }
    }

    fn refine(&mut self, a: CurveSample, b: CurveSample, length: f64, out: &mut Vec<CurveSample>) {
        if !self.should_split(&a, &b, length) {
            out.push(b);
            return;
        }
        let m = self.evaluate(0.5 * (a.u + b.u));
        self.refine(a, m.clone(), length, out);
        self.refine(m, b, length, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePiece {
    pub generation: usize,
    pub piece_id: usize,
    /// The piece `W_i ⊂ T^{-n} W`.
    pub curve: StableCurve,
    /// `|W_i|`, polyline length.
    pub length: f64,
    /// `|Tⁿ W_i|`, the length of the part of `W` it comes from.
    pub image_length: f64,
    /// `log |J_{W_i} Tⁿ|_{C⁰}` (Euclidean).
    pub sup_log_j: f64,
    /// `log |J_{W_i} T|_{C⁰,*}` in the adapted metric (generation 1 only).
    pub sup_log_j_adapted: f64,
    /// Strip of `W_i` (of its first vertex).
    pub strip: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEvolution {
    pub generation: usize,
    pub pieces: Vec<CurvePiece>,
    pub source_length: f64,
    /// False when the evaluation budget ran out.
    pub complete: bool,
    pub evaluations: usize,
}

impl CurveEvolution {
    pub fn total_image_length(&self) -> f64 {
        self.pieces.iter().map(|p| p.image_length).sum()
    }

    /// `Σ_i |J_{W_i}Tⁿ|^t_{C⁰}` in the Euclidean metric.
    pub fn weighted_sum(&self, t: f64) -> f64 {
        self.pieces.iter().map(|p| (t * p.sup_log_j).exp()).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "generation,piece_id,length,sup_logJs")?;
        for p in &self.pieces {
            writeln!(out, "{},{},{:.12e},{:.12e}", p.generation, p.piece_id, p.length, p.sup_log_j)?;
        }
        Ok(())
    }
}

/// Preimages `T^{-n} W` cut at the strip boundaries and tangencies met along
/// the way; with `subdivide`, components longer than `delta` are split into
/// pieces of length in `[delta/2, delta]`.
pub fn evolve_stable_curve_with(
    table: &TableGeometry,
    w: &StableCurve,
    n: usize,
    delta: f64,
    subdivide: bool,
    opts: EvolutionOptions,
) -> Result<CurveEvolution, EstimateError> {
    if n == 0 || n > MAX_DEPTH {
        return Err(EstimateError::Parameter(format!("n must lie in 1..={MAX_DEPTH}")));
    }
    if w.vertices.len() < 2 || !(delta > 0.0) {
        return Err(EstimateError::Parameter("need a curve with two vertices and delta > 0".into()));
    }
    let length = w.length();
    let mut ev = Evolver { table, curve: w, opts, depth: n, spacing: opts.spacing_fraction * delta, evals: 0 };
    let coarse = 16;
    let seeds: Vec<CurveSample> = (0..=coarse).map(|i| ev.evaluate(i as f64 / coarse as f64)).collect();
    let mut samples = vec![seeds[0].clone()];
    for win in seeds.windows(2) {
        ev.refine(win[0].clone(), win[1].clone(), length, &mut samples);
    }
    let complete = ev.evals < opts.eval_budget;

    let mut pieces = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if samples[i].valid < n {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < samples.len() && samples[j].valid >= n && samples[j].hash[n - 1] == samples[i].hash[n - 1] {
            j += 1;
        }
        let run = &samples[i..j];
        let mut cum = vec![0.0];
        for pair in run.windows(2) {
            let g = ev.gap(&pair[0].img[n - 1], &pair[1].img[n - 1]);
            cum.push(cum.last().unwrap() + g);
        }
        let total = *cum.last().unwrap();
        let parts = if subdivide && total > delta && run.len() > 1 { (total / delta).ceil() as usize } else { 1 };
        let scatterer = run[0].img[n - 1].scatterer;
        let verts = unwrap_r(run.iter().map(|s| [s.img[n - 1].r, s.img[n - 1].phi]).collect(), table.perimeter(scatterer));
        let last = run.len().saturating_sub(2);
        // Segment index and fraction of the point at polyline length `c`.
        let locate = |c: f64| {
            let k = cum.partition_point(|&x| x <= c).saturating_sub(1).min(last);
            let d = cum.get(k + 1).map_or(0.0, |e| e - cum[k]);
            (k, if d > 0.0 { ((c - cum[k]) / d).clamp(0.0, 1.0) } else { 0.0 })
        };
        let lerp = |a: f64, b: f64, f: f64| a + f * (b - a);
        let at = |k: usize, f: f64| {
            let b = verts.get(k + 1).unwrap_or(&verts[k]);
            [lerp(verts[k][0], b[0], f), lerp(verts[k][1], b[1], f)]
        };
        let u_at = |k: usize, f: f64| lerp(run[k].u, run.get(k + 1).map_or(run[k].u, |s| s.u), f);
        let slope_at = |k: usize, f: f64| run[if f < 0.5 { k } else { (k + 1).min(run.len() - 1) }].tangent[n - 1].slope();
        for p in 0..parts {
            let (c1, c2) = if parts == 1 { (0.0, total) } else { (total * p as f64 / parts as f64, total * (p + 1) as f64 / parts as f64) };
            let ((k1, f1), (k2, f2)) = if parts == 1 { ((0, 0.0), (last, if run.len() > 1 { 1.0 } else { 0.0 })) } else { (locate(c1), locate(c2)) };
            let mut vertices = vec![at(k1, f1)];
            let mut slopes = vec![slope_at(k1, f1)];
            for k in k1 + 1..=k2 {
                if cum[k] > c1 && cum[k] < c2 {
                    vertices.push(verts[k]);
                    slopes.push(run[k].tangent[n - 1].slope());
                }
            }
            vertices.push(at(k2, f2));
            slopes.push(slope_at(k2, f2));
            let bracket = &run[k1..=(k2 + 1).min(run.len() - 1)];
            pieces.push(CurvePiece {
                generation: n,
                piece_id: pieces.len(),
                length: c2 - c1,
                image_length: (u_at(k2, f2) - u_at(k1, f1)) * length,
                sup_log_j: bracket.iter().map(|s| s.log_j[n - 1]).fold(f64::NEG_INFINITY, f64::max),
                sup_log_j_adapted: bracket.iter().map(|s| s.log_j_adapted).fold(f64::NEG_INFINITY, f64::max),
                strip: run[0].strip[n - 1],
                curve: StableCurve { scatterer, vertices, slopes, homogeneous: true },
            });
        }
        i = j;
    }
    Ok(CurveEvolution { generation: n, pieces, source_length: length, complete, evaluations: ev.evals })
}

fn unwrap_r(mut v: Vec<[f64; 2]>, p: f64) -> Vec<[f64; 2]> {
    for i in 1..v.len() {
        let d = v[i][0] - v[i - 1][0];
        v[i][0] -= p * (d / p).round();
    }
    v
}

/// `𝒢_n(W)` with pieces subdivided to lengths in `[delta/2, delta]`.
pub fn evolve_stable_curve(table: &TableGeometry, w: &StableCurve, n: usize, delta: f64) -> Result<CurveEvolution, EstimateError> {
    evolve_stable_curve_with(table, w, n, delta, true, EvolutionOptions::for_table(table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepSum {
    pub t: f64,
    /// `Σ_i |J_{V_i}T|^t_{C⁰,*}`.
    pub sum: f64,
    /// `sum^{1/t}`.
    pub theta_hat: f64,
    pub components: usize,
    pub largest_log_j: f64,
}

/// One-step expansion sum over the maximal weakly homogeneous components of
/// `T^{-1} W`, with homogeneity strips given by `strips`.
pub fn one_step_expansion_sum_with(
    table: &TableGeometry,
    w: &StableCurve,
    t: f64,
    strips: StripParams,
) -> Result<OneStepSum, EstimateError> {
    if !(t > 0.0) {
        return Err(EstimateError::Parameter("t must be positive".into()));
    }
    let opts = EvolutionOptions { strips, cut_length: (w.length() * 1e-9).max(1e-17), ..EvolutionOptions::for_table(table) };
    let ev = evolve_stable_curve_with(table, w, 1, 1.0, false, opts)?;
    let sum = ev.pieces.iter().map(|p| (t * p.sup_log_j_adapted).exp()).sum::<f64>();
    Ok(OneStepSum {
        t,
        sum,
        theta_hat: sum.powf(1.0 / t),
        components: ev.pieces.len(),
        largest_log_j: ev.pieces.iter().map(|p| p.sup_log_j_adapted).fold(f64::NEG_INFINITY, f64::max),
    })
}

/// One-step expansion sum with the table's homogeneity strips.
pub fn one_step_expansion_sum(table: &TableGeometry, w: &StableCurve, t: f64) -> Result<OneStepSum, EstimateError> {
    one_step_expansion_sum_with(table, w, t, StripParams::of(table))
}

/// Share of `Σ |J_{W_i}Tⁿ|^t` carried by pieces of `𝒢_n^{δ₁}(W)` shorter than
/// `δ₁/3`; equal to 1 when no long piece exists.
pub fn short_piece_fraction(table: &TableGeometry, w: &StableCurve, n: usize, delta1: f64, t: f64) -> Result<f64, EstimateError> {
    if w.length() < delta1 / 3.0 {
        return Err(EstimateError::Parameter("need |W| >= delta1/3".into()));
    }
    let ev = evolve_stable_curve(table, w, n, delta1)?;
    let mut short = 0.0;
    let mut total = 0.0;
    for p in &ev.pieces {
        let x = (t * p.sup_log_j).exp();
        total += x;
        if p.length < delta1 / 3.0 {
            short += x;
        }
    }
    Ok(if total > 0.0 { short / total } else { 1.0 })
}

/// Random straight stable curve of the given length with slope uniform in the
/// stable cone. With `straddle` the curve is centred on a crossing of the
/// singularity set of `T^{-1}`, located by bisection along the curve.
pub fn random_stable_curve(table: &TableGeometry, rng: &mut impl Rng, length: f64, straddle: bool) -> StableCurve {
    let (lo, hi) = stable_cone(table);
    loop {
        let slope = rng.random_range(lo..hi);
        if !straddle {
            let x = liouville_point(table, rng);
            if x.phi.cos() > 1e-3 {
                return StableCurve::segment(table, x.scatterer, [x.r, x.phi], slope, length);
            }
            continue;
        }
        let s = rng.random_range(0..table.scatterer_count());
        let r = rng.random_range(0.0..table.perimeter(s));
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let Ok(st) = step(table, &PhasePoint::new(s, r, sign * (FRAC_PI_2 - 1e-6))) else { continue };
        let x = st.to;
        if x.phi.cos() < 1e-3 {
            continue;
        }
        let c = 1.0 / (1.0 + slope * slope).sqrt();
        let label = |u: f64| {
            step_inverse(table, &PhasePoint::new(x.scatterer, x.r + u * c, x.phi + u * slope * c))
                .ok()
                .map(|b| (b.to.scatterer, b.offset))
        };
        let (mut a, mut b) = (-1e-4, 1e-4);
        let la = label(a);
        if la.is_none() || label(b).is_none() || la == label(b) {
            continue;
        }
        while b - a > 1e-15 {
            let m = 0.5 * (a + b);
            if label(m) == la {
                a = m;
            } else {
                b = m;
            }
        }
        let u = 0.5 * (a + b);
        return StableCurve::segment(table, x.scatterer, [x.r + u * c, x.phi + u * slope * c], slope, length);
    }
}

/// Strip parameters and length scale for which the one-step expansion sum is
/// bounded by `θ^t` for every `t ≥ t0`, together with the fitted constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepParameters {
    pub t0: f64,
    pub theta: f64,
    pub strips: StripParams,
    pub delta0: f64,
    /// Fitted `C` in `|J_V T|_* ≤ C cos φ` on `V`.
    pub c_strip: f64,
    /// Fitted `C'` in `|T^{-1}W| ≤ C' |W|^{1/2}`.
    pub c_length: f64,
    pub tau_ratio: f64,
    /// `Λ^{-t0} + (τ_max/τ_min) Σ_{|k|≥k0} C^{t0} k^{-q t0}` at the chosen `k0`.
    pub bound: f64,
}

fn strip_tail(s: f64, k0: u32) -> f64 {
    let head: f64 = (k0..k0 + 2000).map(|k| (k as f64).powf(-s)).sum();
    let end = (k0 + 2000) as f64 - 0.5;
    head + end.powf(1.0 - s) / (s - 1.0)
}

/// Chooses `q > 2/t0`, `k0` and `delta0` as in the one-step expansion
/// argument, with `C` and `C'` fitted on `samples` random points and curves.
/// Among integer `q` up to 32 the one giving the largest `delta0` is kept.
pub fn one_step_parameters(
    table: &TableGeometry,
    t0: f64,
    theta: f64,
    samples: usize,
    seed: u64,
) -> Result<OneStepParameters, EstimateError> {
    let lambda = table.lambda();
    if !(t0 > 0.0 && t0 < 1.0) || !(theta > 1.0 / lambda && theta < 1.0) {
        return Err(EstimateError::Parameter("need t0 in (0,1) and theta in (1/Lambda, 1)".into()));
    }
    let tau_max = table
        .derived()
        .tau_max
        .ok_or_else(|| EstimateError::Parameter("tau_max unknown; validate the table first".into()))?;
    let tau_ratio = tau_max / table.tau_min();
    let mut rng = crate::rng::child_rng(seed, 0);
    let (lo, hi) = stable_cone(table);

    let mut c_strip: f64 = 0.0;
    for i in 0..samples {
        let mut y = liouville_point(table, &mut rng);
        if i % 2 == 1 {
            let d = 10f64.powf(rng.random_range(-8.0..0.0)).min(FRAC_PI_2 - 1e-3);
            y = PhasePoint::new(y.scatterer, y.r, y.phi.signum() * (FRAC_PI_2 - d));
        }
        let Ok(st) = step(table, &y) else { continue };
        let w = TangentVector::from_slope(pull_slope(&st.dt, rng.random_range(lo..hi)));
        let j = w.apply(&st.dt).adapted_norm(table.curvature(st.to.scatterer)) / w.adapted_norm(table.curvature(y.scatterer));
        c_strip = c_strip.max(j / y.phi.cos());
    }

    let opts = EvolutionOptions::for_table(table);
    let mut c_length: f64 = 0.0;
    for i in 0..samples.div_ceil(20) {
        let len = 10f64.powi(-4 - (i % 5) as i32);
        let w = random_stable_curve(table, &mut rng, len, true);
        let ev = evolve_stable_curve_with(table, &w, 1, 1.0, false, opts)?;
        let total: f64 = ev.pieces.iter().map(|p| p.length).sum();
        c_length = c_length.max(total / len.sqrt());
    }

    let target = theta.powf(t0);
    let mut best: Option<OneStepParameters> = None;
    for q in (2.0 / t0).floor() as u32 + 1..=32 {
        let q = q as f64;
        let s = q * t0;
        let lhs = |k0: u32| lambda.powf(-t0) + tau_ratio * 2.0 * c_strip.powf(t0) * strip_tail(s, k0);
        let Some(k0) = (1..100_000u32).find(|&k| lhs(k) < target) else { continue };
        let delta0 = ((k0 as f64).powf(-q) / c_length).powi(2);
        if best.as_ref().is_none_or(|b| delta0 > b.delta0) {
            best = Some(OneStepParameters {
                t0,
                theta,
                strips: StripParams { q, k0 },
                delta0,
                c_strip,
                c_length,
                tau_ratio,
                bound: lhs(k0),
            });
        }
    }
    best.ok_or_else(|| EstimateError::Insufficient("no admissible strip parameters".into()))
}
