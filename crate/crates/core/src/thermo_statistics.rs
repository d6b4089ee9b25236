//! Measure-theoretic checks on the equilibrium states: sampling, adaptedness,
//! neighbourhood scaling, entropy identities, Bowen balls and the CLT.

use std::f64::consts::{FRAC_PI_2, LN_2};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::billiard_map::{
    stable_direction, stable_orbit, step, step_inverse, unstable_direction, unstable_orbit, PhasePoint, DEFAULT_DEPTH,
};
use crate::complexity::liouville_point;
use crate::error::{MapError, StatisticsError};
use crate::geometry::TableGeometry;
use crate::rng::child_rng;
use crate::singularity::SingularityIndex;
use crate::transfer_spectrum::{sample_points, slope_fit, DerivativeEstimate, EquilibriumMeasure, UlamGrid, BURN_IN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    UlamCells,
    TrajectoryReweighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    pub t: f64,
    pub points: Vec<PhasePoint>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub source: SampleSource,
}

impl MeasureSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fraction of the sample in every cell of `grid`.
    pub fn cell_histogram(&self, grid: &UlamGrid) -> Vec<f64> {
        let mut h = vec![0.0; grid.len()];
        let total: f64 = self.weights.iter().sum();
        for (x, w) in self.points.iter().zip(&self.weights) {
            h[grid.cell_of(x)] += w / total;
        }
        h
    }
}

/// Points drawn from the cellwise `μ̂_t`.
pub fn sample_measure(measure: &EquilibriumMeasure, count: usize, seed: u64) -> MeasureSample {
    MeasureSample {
        t: measure.t,
        points: sample_points(measure, count, seed),
        weights: vec![1.0; count],
        seed,
        source: SampleSource::UlamCells,
    }
}

/// `μ_SRB` sample from one long orbit, keeping every `spacing`-th point after a
/// burn-in; restarts from a Liouville point after a tangency.
pub fn trajectory_sample(table: &TableGeometry, count: usize, spacing: usize, seed: u64) -> MeasureSample {
    let mut rng = child_rng(seed, 1);
    let mut x = liouville_point(table, &mut rng);
    let mut points = Vec::with_capacity(count);
    let mut k = 0usize;
    while points.len() < count {
        match step(table, &x) {
            Ok(s) => {
                x = s.to;
                k += 1;
                if k > BURN_IN && k % spacing.max(1) == 0 {
                    points.push(x);
                }
            }
            Err(_) => {
                x = liouville_point(table, &mut rng);
                k = 0;
            }
        }
    }
    MeasureSample { t: 1.0, weights: vec![1.0; count], points, seed, source: SampleSource::TrajectoryReweighting }
}

/// Pearson χ² of a sample histogram against cell probabilities; cells with
/// expected count below 5 are pooled. Returns `(statistic, dof, p-value)`.
pub fn chi_square(observed: &[f64], expected: &[f64], n: usize) -> (f64, usize, f64) {
    let nf = n as f64;
    let (mut stat, mut bins) = (0.0, 0usize);
    let (mut po, mut pe) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        let (o, e) = (o * nf, e * nf);
        if e < 5.0 {
            po += o;
            pe += e;
            continue;
        }
        stat += (o - e) * (o - e) / e;
        bins += 1;
    }
    if pe > 0.0 {
        stat += (po - pe) * (po - pe) / pe;
        bins += 1;
    }
    let dof = bins.saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    (stat, dof, p)
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_tail((s + 0.12 + 0.11 / s) * d)
}

/// Two-sample Kolmogorov–Smirnov distance and p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    (d, ks_p_value(d, na * nb / (na + nb)))
}

/// One-sample Kolmogorov–Smirnov distance to `Normal(0, variance)` and p-value.
pub fn ks_normal(values: &[f64], variance: f64) -> (f64, f64) {
    let normal = Normal::new(0.0, variance.sqrt()).unwrap();
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in v.iter().enumerate() {
        let c = normal.cdf(*x);
        d = d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
    }
    (d, ks_p_value(d, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    /// Distances in `[lo, hi)`.
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
    /// Shell contribution to `∫|log d| dμ`.
    pub contribution: f64,
    /// False below the curve resolution.
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptednessReport {
    pub estimate: f64,
    /// Plain sample mean of `|log d|`, unresolved shells included.
    pub raw_estimate: f64,
    pub se: f64,
    pub shells: Vec<Shell>,
    /// Fitted `a` in `mass(shell k) ∝ 2^{-a k}` over the deepest resolved shells.
    pub mass_exponent: f64,
    /// Running totals over the shells, outermost first.
    pub partial_sums: Vec<f64>,
    pub converged: bool,
    /// Unresolved shells were replaced by the fitted geometric tail.
    pub tail_extrapolated: bool,
    pub resolution: f64,
}

fn shell_of(d: f64) -> usize {
    if d >= 1.0 {
        0
    } else {
        ((-d.log2()).floor() as usize).min(200)
    }
}

/// `∫|log d(x, S)| dμ` over dyadic shells `2^{-(k+1)} ≤ d < 2^{-k}`, where `S`
/// is the indexed singular set.
pub fn adaptedness_integral(sample: &MeasureSample, index: &SingularityIndex) -> AdaptednessReport {
    let res = index.resolution();
    let total: f64 = sample.weights.iter().sum();
    let d: Vec<f64> = sample.points.par_iter().map(|x| index.distance(x)).collect();
    let deepest = d.iter().map(|&v| shell_of(v.max(1e-300))).max().unwrap_or(0);
    let mut shells: Vec<Shell> = (0..=deepest)
        .map(|k| {
            let hi = if k == 0 { f64::INFINITY } else { 2f64.powi(-(k as i32)) };
            let lo = 2f64.powi(-(k as i32 + 1));
            Shell { lo, hi, mass: 0.0, contribution: 0.0, resolved: lo >= res }
        })
        .collect();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for (v, w) in d.iter().zip(&sample.weights) {
        let l = v.max(1e-300).ln().abs();
        let s = &mut shells[shell_of(v.max(1e-300))];
        s.mass += w / total;
        s.contribution += w * l / total;
        sum += w * l / total;
        sum2 += w * l * l / total;
    }
    let se = ((sum2 - sum * sum).max(0.0) / sample.len().max(1) as f64).sqrt();

    // Mass decay over the deepest populated resolved shells past the mass peak.
    let peak = (0..shells.len()).fold(0, |b, k| if shells[k].mass > shells[b].mass { k } else { b });
    let fit: Vec<(f64, f64)> = shells
        .iter()
        .enumerate()
        .filter(|(k, s)| s.resolved && s.mass > 0.0 && *k > peak)
        .map(|(k, s)| (k as f64, s.mass.log2()))
        .collect();
    let tail_fit = &fit[fit.len().saturating_sub(5)..];
    let mass_exponent = if tail_fit.len() >= 2 {
        let xs: Vec<f64> = tail_fit.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = tail_fit.iter().map(|p| p.1).collect();
        -slope_fit(&xs, &ys)
    } else {
        0.0
    };
    let first_unresolved = shells.iter().position(|s| !s.resolved);
    let unresolved_mass: f64 = shells.iter().filter(|s| !s.resolved).map(|s| s.mass).sum();
    let tail_extrapolated = unresolved_mass > 0.0;
    let mut estimate: f64 = shells.iter().filter(|s| s.resolved).map(|s| s.contribution).sum();
    if let Some(k0) = first_unresolved {
        // Geometric tail from the last resolved mass, `|log d| ≈ (k + ½) ln 2`.
        if mass_exponent > 0.0 && k0 > 0 {
            let m_last = shells[k0 - 1].mass;
            let q = 2f64.powf(-mass_exponent);
            let mut m = m_last;
            for k in k0..k0 + 400 {
                m *= q;
                estimate += m * (k as f64 + 0.5) * LN_2;
            }
        } else {
            estimate += shells[k0..].iter().map(|s| s.contribution).sum::<f64>();
        }
    }
    let mut partial_sums = Vec::with_capacity(shells.len());
    let mut acc = 0.0;
    for s in &shells {
        acc += s.contribution;
        partial_sums.push(acc);
    }
    let resolved: Vec<f64> = shells.iter().filter(|s| s.resolved && s.mass > 0.0).map(|s| s.contribution).collect();
    let n = resolved.len();
    let decaying = n >= 3 && resolved[n - 1] < resolved[n - 3];
    AdaptednessReport {
        estimate,
        raw_estimate: sum,
        se,
        shells,
        mass_exponent,
        partial_sums,
        converged: mass_exponent > 0.0 && decaying && estimate.is_finite(),
        tail_extrapolated,
        resolution: res,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub epsilons: Vec<f64>,
    pub mass: Vec<f64>,
    /// Whether each `ε` entered the fit.
    pub usable: Vec<bool>,
    pub slope: f64,
    pub intercept: f64,
    pub positive: bool,
}

/// Sample mass of `N_ε(S)` for each `ε`, with a log-log slope over the `ε`
/// that clear the curve resolution and hold at least 10 points.
pub fn neighborhood_scaling(
    sample: &MeasureSample,
    index: &SingularityIndex,
    epsilons: &[f64],
) -> Result<ScalingFit, StatisticsError> {
    let d: Vec<f64> = sample.points.par_iter().map(|x| index.distance(x)).collect();
    let total: f64 = sample.weights.iter().sum();
    let floor = 2.0 * index.resolution();
    let mut mass = Vec::new();
    let mut usable = Vec::new();
    for &e in epsilons {
        let (mut m, mut c) = (0.0, 0usize);
        for (v, w) in d.iter().zip(&sample.weights) {
            if *v < e {
                m += w;
                c += 1;
            }
        }
        mass.push(m / total);
        usable.push(e >= floor && c >= 10);
    }
    let xs: Vec<f64> = epsilons.iter().zip(&usable).filter(|p| *p.1).map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = mass.iter().zip(&usable).filter(|p| *p.1).map(|p| p.0.ln()).collect();
    if xs.len() < 3 {
        return Err(StatisticsError::InsufficientRange(format!("{} usable epsilons above {floor:.2e}", xs.len())));
    }
    let slope = slope_fit(&xs, &ys);
    let intercept = ys.iter().sum::<f64>() / ys.len() as f64 - slope * xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(ScalingFit { epsilons: epsilons.to_vec(), mass, usable, slope, intercept, positive: slope > 0.0 })
}

/// Birkhoff average of `log JᵘT` along one orbit with a batch-means standard error.
pub fn birkhoff_lyapunov(table: &TableGeometry, steps: usize, seed: u64) -> Result<(f64, f64), StatisticsError> {
    const CHUNK: usize = 1000;
    let mut rng = child_rng(seed, 2);
    let mut x = liouville_point(table, &mut rng);
    let mut means = Vec::new();
    while means.len() * CHUNK < steps.max(2 * CHUNK) {
        match unstable_orbit(table, &x, CHUNK, DEFAULT_DEPTH, 1e-10) {
            Ok(o) => {
                means.push(o.log_ju.iter().sum::<f64>() / CHUNK as f64);
                x = o.steps.last().unwrap().to;
            }
            Err(_) => x = liouville_point(table, &mut rng),
        }
    }
    let n = means.len() as f64;
    let m = means.iter().sum::<f64>() / n;
    let v = means.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    Ok((m, (v / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub t: f64,
    /// `ĥ_{μ_t} = log λ̂_t − t P̂₁`.
    pub entropy: f64,
    /// `−P̂₁ = ∫log JᵘT dμ_t`.
    pub lyapunov: f64,
    pub chi_u: Option<(f64, f64)>,
    /// `|ĥ − χ̂ᵘ| / χ̂ᵘ`, at `t = 1` only.
    pub pesin_residual: Option<f64>,
    pub h_star: Option<(f64, f64)>,
    /// `ĥ_{μ_t} ≤ ĥ_* + spread`.
    pub below_h_star: Option<bool>,
}

/// Entropy and Lyapunov exponent of `μ̂_t`; `chi_u` is an independent Birkhoff
/// average used for the Pesin residual at `t = 1`.
pub fn entropy_identities(
    t: f64,
    log_lambda: f64,
    derivatives: &DerivativeEstimate,
    chi_u: Option<(f64, f64)>,
    h_star: Option<(f64, f64)>,
) -> EntropyReport {
    let entropy = log_lambda - t * derivatives.p1;
    let pesin_residual = if (t - 1.0).abs() < 1e-12 { chi_u.map(|(c, _)| (entropy - c).abs() / c.abs()) } else { None };
    EntropyReport {
        t,
        entropy,
        lyapunov: -derivatives.p1,
        chi_u,
        pesin_residual,
        h_star,
        below_h_star: h_star.map(|(h, s)| entropy <= h + s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowenBall {
    pub center: PhasePoint,
    pub n: usize,
    pub epsilon: f64,
}

/// Euclidean `(r, φ)` distance with `r` periodic; points on different scatterers are infinitely far apart.
pub fn phase_distance(table: &TableGeometry, a: &PhasePoint, b: &PhasePoint) -> f64 {
    if a.scatterer != b.scatterer {
        return f64::INFINITY;
    }
    let p = table.perimeter(a.scatterer);
    let mut dr = (a.r - b.r).rem_euclid(p);
    if dr > 0.5 * p {
        dr -= p;
    }
    dr.hypot(a.phi - b.phi)
}

impl BowenBall {
    /// Number of backward steps `j ≤ n` for which `y` stays within `ε` of the
    /// centre's orbit, plus one; `n + 1` means membership.
    pub fn depth(&self, table: &TableGeometry, orbit: &[PhasePoint], y: &PhasePoint) -> usize {
        let mut z = *y;
        for (j, c) in orbit.iter().enumerate().take(self.n + 1) {
            if phase_distance(table, &z, c) > self.epsilon {
                return j;
            }
            if j == self.n {
                break;
            }
            z = match step_inverse(table, &z) {
                Ok(s) => s.to,
                Err(_) => return j + 1,
            };
        }
        self.n + 1
    }

    pub fn contains(&self, table: &TableGeometry, y: &PhasePoint) -> bool {
        let mut orbit = vec![self.center];
        let mut c = self.center;
        for _ in 0..self.n {
            match step_inverse(table, &c) {
                Ok(s) => {
                    c = s.to;
                    orbit.push(c);
                }
                Err(_) => return false,
            }
        }
        self.depth(table, &orbit, y) > self.n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenParams {
    pub trials: usize,
    pub n_max: usize,
    pub epsilon: f64,
    /// Local sample points per ball.
    pub local_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenPair {
    pub center: usize,
    pub n: usize,
    pub mass: f64,
    pub hits: usize,
    /// `−n P + t Σ_{k=1}^{n} log JˢT(T^{-k}x)`.
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenReport {
    pub pairs: Vec<BowenPair>,
    /// Smallest `A` covering the pairs with `n ≤ fit_n`.
    pub a_fit: f64,
    pub fit_n: usize,
    /// Pairs with `n > fit_n` whose mass, reduced by two Poisson standard
    /// errors, still exceeds `A e^{exponent}`.
    pub violations: usize,
    pub violation_rate: f64,
    /// Balls without a single hit.
    pub skipped: usize,
    pub centres: usize,
    /// Per centre: fitted slope of `log μ̂(B_n)` in `n` and the predicted slope.
    pub slopes: Vec<(f64, f64)>,
}

impl BowenReport {
    /// Median of `|measured − predicted| / |predicted|` over centres.
    pub fn median_slope_error(&self) -> f64 {
        let mut e: Vec<f64> = self.slopes.iter().map(|(m, p)| (m - p).abs() / p.abs()).collect();
        if e.is_empty() {
            return f64::NAN;
        }
        e.sort_by(f64::total_cmp);
        e[e.len() / 2]
    }
}

struct CentreData {
    orbit: Vec<PhasePoint>,
    log_js: Vec<f64>,
    u: f64,
    v: f64,
}

fn centre_data(table: &TableGeometry, x: &PhasePoint, n: usize) -> Result<CentreData, MapError> {
    let mut orbit = vec![*x];
    let mut log_js = Vec::with_capacity(n);
    let mut c = *x;
    for _ in 0..n {
        let s = step_inverse(table, &c)?;
        c = s.to;
        orbit.push(c);
        log_js.push(stable_orbit(table, &c, 1, DEFAULT_DEPTH, 1e-10)?.log_js[0]);
    }
    let u = unstable_direction(table, x, DEFAULT_DEPTH, 1e-10)?.slope;
    let v = stable_direction(table, x, DEFAULT_DEPTH, 1e-10)?.slope;
    Ok(CentreData { orbit, log_js, u, v })
}

/// `μ̂_t(B_n(x, ε))` estimated by sampling `μ̂_t` restricted to a parallelogram
/// around `x` spanned by the unstable and stable directions. The stable side
/// is shrunk with `n` following the stable Jacobian and re-widened whenever
/// members come close to its edge, so the parallelogram always contains the ball.
fn ball_masses(
    table: &TableGeometry,
    measure: &EquilibriumMeasure,
    data: &CentreData,
    epsilon: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Vec<(f64, usize)> {
    let density: Vec<f64> = measure.mu_cells.iter().zip(&measure.grid.mu).map(|(a, b)| a / b).collect();
    let boundary = table.derived().boundary_length;
    let x = data.orbit[0];
    let unit = |s: f64| {
        let n = (1.0 + s * s).sqrt();
        [1.0 / n, s / n]
    };
    let (eu, es) = (unit(data.u), unit(data.v));
    let sin_angle = (eu[0] * es[1] - eu[1] * es[0]).abs();
    let half = epsilon / sin_angle;
    let n_max = data.log_js.len();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut s_n = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            s_n += data.log_js[n - 1];
        }
        let ball = BowenBall { center: x, n, epsilon };
        let mut width = (4.0 * epsilon * s_n.exp() / sin_angle).min(half);
        loop {
            let (mut acc, mut hits, mut edge) = (0.0, 0usize, false);
            for _ in 0..samples {
                let a = (2.0 * rng.random::<f64>() - 1.0) * half;
                let b = (2.0 * rng.random::<f64>() - 1.0) * width;
                let phi = x.phi + a * eu[1] + b * es[1];
                if phi.abs() >= FRAC_PI_2 {
                    continue;
                }
                let y = PhasePoint::new(x.scatterer, x.r + a * eu[0] + b * es[0], phi);
                if ball.depth(table, &data.orbit, &y) > n {
                    hits += 1;
                    acc += density[measure.grid.cell_of(&y)] * y.cos_phi / (2.0 * boundary);
                    edge |= b.abs() > 0.8 * width;
                }
            }
            if edge && width < half {
                width = (2.0 * width).min(half);
                continue;
            }
            let area = 4.0 * half * width * sin_angle;
            out.push((area * acc / samples as f64, hits));
            break;
        }
    }
    out
}

/// `μ̂_t(B_n(x, ε))` and the number of local sample points that landed in the ball.
pub fn bowen_ball_mass(
    table: &TableGeometry,
    measure: &EquilibriumMeasure,
    ball: &BowenBall,
    samples: usize,
    seed: u64,
) -> Result<(f64, usize), StatisticsError> {
    let data = centre_data(table, &ball.center, ball.n)?;
    let mut rng = child_rng(seed, 0);
    Ok(*ball_masses(table, measure, &data, ball.epsilon, samples, &mut rng).last().unwrap())
}

/// Compares `μ̂_t(B_n(x, ε))` with `A e^{−nP + tΣ_{k=1}^{n} log JˢT(T^{-k}x)}`.
/// `A` is fitted on `n ≤ fit_n` and the bound is checked for larger `n`.
pub fn bowen_ball_check(
    table: &TableGeometry,
    measure: &EquilibriumMeasure,
    pressure: f64,
    params: &BowenParams,
    fit_n: usize,
) -> Result<BowenReport, StatisticsError> {
    if params.epsilon >= table.delta0 {
        return Err(StatisticsError::Parameter(format!("epsilon {} is not below delta0 {}", params.epsilon, table.delta0)));
    }
    if fit_n >= params.n_max {
        return Err(StatisticsError::Parameter("fit_n must be below n_max".into()));
    }
    let t = measure.t;
    let centres = sample_points(measure, params.trials * 2, params.seed);
    let data: Vec<CentreData> =
        centres.iter().filter_map(|x| centre_data(table, x, params.n_max).ok()).take(params.trials).collect();
    let masses: Vec<Vec<(f64, usize)>> = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = child_rng(params.seed, 1000 + i as u64);
            ball_masses(table, measure, d, params.epsilon, params.local_samples, &mut rng)
        })
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    let mut slopes = Vec::new();
    for (i, (d, m)) in data.iter().zip(&masses).enumerate() {
        let mut s_n = 0.0;
        let (mut xs, mut ys, mut zs) = (Vec::new(), Vec::new(), Vec::new());
        for (n, &(mass, hits)) in m.iter().enumerate().skip(1) {
            s_n += d.log_js[n - 1];
            let exponent = -(n as f64) * pressure + t * s_n;
            if hits == 0 {
                skipped += 1;
                continue;
            }
            pairs.push(BowenPair { center: i, n, mass, hits, exponent });
            if hits >= 20 {
                xs.push(n as f64);
                ys.push(mass.ln());
                zs.push(exponent);
            }
        }
        if xs.len() >= 3 {
            let fit = slope_fit;
            slopes.push((fit(&xs, &ys), fit(&xs, &zs)));
        }
    }
    let a_fit = pairs.iter().filter(|p| p.n <= fit_n).map(|p| p.mass / p.exponent.exp()).fold(0.0, f64::max);
    let tested: Vec<&BowenPair> = pairs.iter().filter(|p| p.n > fit_n).collect();
    let violations = tested
        .iter()
        .filter(|p| {
            let low = p.mass * (1.0 - 2.0 / (p.hits as f64).sqrt()).max(0.0);
            low > a_fit * p.exponent.exp()
        })
        .count();
    Ok(BowenReport {
        violation_rate: if tested.is_empty() { 0.0 } else { violations as f64 / tested.len() as f64 },
        pairs,
        a_fit,
        fit_n,
        violations,
        skipped,
        centres: data.len(),
        slopes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub t: f64,
    pub n_block: usize,
    pub blocks: usize,
    pub centre: f64,
    /// `P̂₂` the limit is compared with.
    pub variance: f64,
    /// Sample variance of `S_k/√k`.
    pub block_variance: f64,
    pub block_mean: f64,
    pub ks_distance: f64,
    pub p_value: f64,
    pub pass: bool,
    pub truncated_fraction: f64,
    pub skipped: Option<String>,
    pub warnings: Vec<String>,
}

/// Normalized block sums `(1/√k) Σ_{j<k} (log JˢT − centre)∘T^j` from
/// `μ̂_t`-started trajectories after a burn-in, tested against `Normal(0, P̂₂)`.
#[allow(clippy::too_many_arguments)]
pub fn clt_check(
    table: &TableGeometry,
    measure: &EquilibriumMeasure,
    centre: f64,
    p2: f64,
    n_block: usize,
    m_samples: usize,
    alpha: f64,
    seed: u64,
) -> CltReport {
    let mut report = CltReport {
        t: measure.t,
        n_block,
        blocks: 0,
        centre,
        variance: p2,
        block_variance: 0.0,
        block_mean: 0.0,
        ks_distance: 0.0,
        p_value: 1.0,
        pass: true,
        truncated_fraction: 0.0,
        skipped: None,
        warnings: Vec::new(),
    };
    if !(p2 > 1e-8) {
        report.skipped = Some(format!(
            "variance {p2:.3e} is numerically zero: log JˢT may be cohomologous to a constant, the limit is degenerate"
        ));
        return report;
    }
    let starts = sample_points(measure, m_samples, seed);
    let sums: Vec<Option<f64>> = starts
        .par_iter()
        .map(|x0| {
            let mut x = *x0;
            for _ in 0..BURN_IN {
                x = step(table, &x).ok()?.to;
            }
            let o = stable_orbit(table, &x, n_block, DEFAULT_DEPTH, 1e-10).ok()?;
            Some(o.log_js.iter().map(|f| f - centre).sum::<f64>() / (n_block as f64).sqrt())
        })
        .collect();
    let values: Vec<f64> = sums.iter().flatten().cloned().collect();
    report.blocks = values.len();
    report.truncated_fraction = 1.0 - values.len() as f64 / m_samples.max(1) as f64;
    if report.truncated_fraction > 0.01 {
        report.warnings.push(format!("{:.1}% of blocks cut by tangencies", 100.0 * report.truncated_fraction));
    }
    let n = values.len() as f64;
    if n < 2.0 {
        report.pass = false;
        report.warnings.push("no complete blocks".into());
        return report;
    }
    report.block_mean = values.iter().sum::<f64>() / n;
    report.block_variance = values.iter().map(|v| v * v).sum::<f64>() / n;
    let (d, p) = ks_normal(&values, p2);
    report.ks_distance = d;
    report.p_value = p;
    report.pass = p >= alpha;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub t: f64,
    pub seed: u64,
    pub version: String,
    pub sample_size: usize,
    pub adaptedness: Option<AdaptednessReport>,
    pub scaling: Option<ScalingFit>,
    pub entropy: Option<EntropyReport>,
    pub bowen: Option<BowenReport>,
    pub clt: Option<CltReport>,
}
