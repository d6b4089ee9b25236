use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{collect_samples, CsrMatrix, EquilibriumMeasure, GridSpec, LeadingTriple, UlamOperator};
use crate::billiard_map::{step, PhasePoint};
use crate::complexity::GridObservable;
use crate::error::SpectrumError;
use crate::geometry::TableGeometry;
use crate::rng::child_rng;

/// Forward steps discarded before a trajectory started from `μ̂_t` is used.
pub const BURN_IN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPressure {
    pub grid: GridSpec,
    pub cells: usize,
    pub log_lambda: Vec<f64>,
    /// Monte Carlo standard error of `log λ̂_t`.
    pub se: Vec<f64>,
    pub gap: Vec<f64>,
}

/// `log λ̂_t` over a grid ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPressure {
    pub ts: Vec<f64>,
    pub levels: Vec<LevelPressure>,
}

impl SpectralPressure {
    pub fn finest(&self) -> &LevelPressure {
        self.levels.last().expect("ladder has at least one level")
    }

    /// Change from the second finest to the finest level.
    pub fn trend(&self) -> Vec<f64> {
        let n = self.levels.len();
        if n < 2 {
            return vec![0.0; self.ts.len()];
        }
        let (a, b) = (&self.levels[n - 2], &self.levels[n - 1]);
        b.log_lambda.iter().zip(&a.log_lambda).map(|(f, c)| f - c).collect()
    }

    /// First-order Richardson extrapolation `2 fine − coarse` (error linear in cell size).
    pub fn extrapolated(&self) -> Vec<f64> {
        let f = &self.finest().log_lambda;
        f.iter().zip(self.trend()).map(|(v, d)| v + d).collect()
    }

    /// Refinement change plus two standard errors at the finest level.
    pub fn spread(&self) -> Vec<f64> {
        self.trend().iter().zip(&self.finest().se).map(|(d, s)| d.abs() + 2.0 * s).collect()
    }

    pub fn at(&self, t: f64) -> Option<usize> {
        self.ts.iter().position(|&s| (s - t).abs() < 1e-9)
    }
}

/// `log λ̂_t` for every `t`, with standard error and gap, on each grid of the ladder.
pub fn pressure_from_spectrum(
    table: &TableGeometry,
    ts: &[f64],
    ladder: &[GridSpec],
    samples_per_cell: usize,
    seed: u64,
    tol: f64,
) -> Result<SpectralPressure, SpectrumError> {
    if ladder.is_empty() || ts.is_empty() {
        return Err(SpectrumError::Parameter("need at least one grid and one t".into()));
    }
    let mut levels = Vec::new();
    for (k, &spec) in ladder.iter().enumerate() {
        let samples = collect_samples(table, spec, samples_per_cell, seed.wrapping_add(k as u64))?;
        let mut level = LevelPressure { grid: spec, cells: samples.grid.len(), log_lambda: vec![], se: vec![], gap: vec![] };
        for &t in ts {
            let op = UlamOperator::from_samples(&samples, t)?;
            let triple = super::leading_triple(&op, tol, 20_000)?;
            level.log_lambda.push(triple.lambda.ln());
            level.se.push(log_lambda_se(&op, &triple));
            level.gap.push(super::second_eigenvalue(&op, &triple).ratio);
        }
        levels.push(level);
    }
    Ok(SpectralPressure { ts: ts.to_vec(), levels })
}

/// Delta-method standard error of `log λ̂`.
pub fn log_lambda_se(op: &UlamOperator, triple: &LeadingTriple) -> f64 {
    op.pairing_se(&triple.nu_tilde, &triple.nu, &op.m_w2, &op.matrix.vals) / triple.lambda
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub t: f64,
    /// `d log λ̂/dt`, the `μ̂_t` integral of `log JˢT`.
    pub p1: f64,
    pub p1_se: f64,
    /// Cruder cellwise integral using within-cell `w`-weighted means only.
    pub p1_cellwise: f64,
    /// Autocorrelation sum `C(0) + 2 Σ_{k≥1} C(k)` of `log JˢT` along the
    /// discretized chain, truncated at `terms.len() − 1`.
    pub p2: f64,
    /// `terms[0] = C(0)`, `terms[k] = 2 C(k)`.
    pub terms: Vec<f64>,
    /// Geometric tail bound `|terms[K]| υ/(1 − υ)` from the gap ratio `υ`.
    pub p2_tail_bound: f64,
    pub warnings: Vec<String>,
}

impl DerivativeEstimate {
    /// Error attached to `p2`.
    pub fn p2_error(&self) -> f64 {
        self.p2_tail_bound
    }
}

/// First and second `t`-derivatives of `log λ̂_t`. With `A = L/λ`,
/// `A' = (dL/dt)/λ` and `g₀ = (A' − P1) nu`, the lag-`k` term is
/// `2⟨nu_tilde, A' A^{k−1} g₀⟩`.
pub fn pressure_derivatives(
    op: &UlamOperator,
    measure: &EquilibriumMeasure,
    k_trunc: usize,
) -> Result<DerivativeEstimate, SpectrumError> {
    if k_trunc < 10 {
        return Err(SpectrumError::Parameter(format!("k_trunc = {k_trunc} is below 10")));
    }
    let m = &op.matrix;
    let (nu, nt, lambda) = (&measure.nu, &measure.nu_tilde, measure.lambda);
    let norm = m.pair(nu, nt);
    let dl = op.matrix_with(&op.m_wf);
    let p1 = m.pair(nt, &dl.apply(nu)) / (lambda * norm);
    let p1_se = op.pairing_se(nt, nu, &op.m_w2f2, &op.m_wf) / (lambda * norm);

    let p1_cellwise = (0..m.dim())
        .map(|i| {
            let r = m.row_ptr[i]..m.row_ptr[i + 1];
            let w: f64 = m.vals[r.clone()].iter().sum();
            let wf: f64 = op.m_wf[r].iter().sum();
            if w > 0.0 {
                measure.mu_cells[i] * wf / w
            } else {
                0.0
            }
        })
        .sum();

    let d2 = op.matrix_with(&op.m_wf2);
    let c0 = m.pair(nt, &d2.apply(nu)) / (lambda * norm) - p1 * p1;
    let mut terms = vec![c0];
    let mut g: Vec<f64> = dl.apply(nu).iter().zip(nu).map(|(a, n)| a / lambda - p1 * n).collect();
    for _ in 1..=k_trunc {
        let ag = dl.apply(&g);
        terms.push(2.0 * (m.pair(nt, &ag) / lambda - p1 * m.pair(nt, &g)) / norm);
        g = m.apply(&g);
        g.iter_mut().for_each(|x| *x /= lambda);
        let c = m.pair(&g, nt) / norm;
        g.iter_mut().zip(nu).for_each(|(x, n)| *x -= c * n);
    }
    let p2: f64 = terms.iter().sum();
    let upsilon = measure.gap.ratio.min(0.999);
    let last = terms.last().unwrap().abs();
    let p2_tail_bound = last * upsilon / (1.0 - upsilon);
    let mut warnings = Vec::new();
    if last > 0.1 * p2.abs() {
        warnings.push(format!("heavy tail: lag-{k_trunc} term {last:.3e} exceeds 10% of the partial sum"));
    }
    if let Some(w) = &measure.gap.warning {
        warnings.push(w.clone());
    }
    Ok(DerivativeEstimate { t: op.t, p1, p1_se, p1_cellwise, p2, terms, p2_tail_bound, warnings })
}

impl UlamOperator {
    pub(crate) fn matrix_with(&self, values: &[f64]) -> CsrMatrix {
        CsrMatrix { vals: values.to_vec(), ..self.matrix.clone() }
    }
}

/// Points drawn from `μ̂_t`: a cell with probability `mu_cells`, then uniformly
/// in `(r, sin φ)` inside it.
pub fn sample_points(measure: &EquilibriumMeasure, count: usize, seed: u64) -> Vec<PhasePoint> {
    let mut cdf = Vec::with_capacity(measure.mu_cells.len());
    let mut acc = 0.0;
    for &p in &measure.mu_cells {
        acc += p;
        cdf.push(acc);
    }
    let mut rng = child_rng(seed, 0);
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let mut cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            // Never land on an empty cell through rounding at the boundary.
            while measure.mu_cells[cell] == 0.0 && cell > 0 {
                cell -= 1;
            }
            measure.grid.sample_in(cell, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    /// `Ĉ(k)` for `k = 0..=k_max`.
    pub c: Vec<f64>,
    pub se: Vec<f64>,
    pub mean_f: f64,
    pub mean_h: f64,
    pub trajectories: usize,
    pub discarded: usize,
    /// Largest grid difference quotients of `f` and `h`.
    pub holder: (f64, f64),
    /// Fitted `|Ĉ(k)| ∝ rate^k`.
    pub rate: Option<f64>,
    pub fit_lags: usize,
    pub refusal: Option<String>,
}

/// `Ĉ(k) = ∫(f∘T^k) h dμ_t − ∫f dμ_t ∫h dμ_t` from forward trajectories started
/// in `μ̂_t` after a burn-in.
pub fn correlation(
    table: &TableGeometry,
    measure: &EquilibriumMeasure,
    f: &GridObservable,
    h: &GridObservable,
    k_max: usize,
    trajectories: usize,
    seed: u64,
) -> Result<CorrelationCurve, SpectrumError> {
    if trajectories < 2 {
        return Err(SpectrumError::Parameter("need at least two trajectories".into()));
    }
    let starts = sample_points(measure, trajectories, seed);
    let runs: Vec<Option<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|x0| {
            let mut x = *x0;
            for _ in 0..BURN_IN {
                x = step(table, &x).ok()?.to;
            }
            let h0 = h.eval(table, &x);
            let mut fs = Vec::with_capacity(k_max + 1);
            fs.push(f.eval(table, &x));
            for _ in 0..k_max {
                x = step(table, &x).ok()?.to;
                fs.push(f.eval(table, &x));
            }
            Some((h0, fs))
        })
        .collect();
    let runs: Vec<(f64, Vec<f64>)> = runs.into_iter().flatten().collect();
    let n = runs.len();
    if n < 2 {
        return Err(SpectrumError::Parameter("all trajectories were cut by tangencies".into()));
    }
    let nf = n as f64;
    let mean_h = runs.iter().map(|r| r.0).sum::<f64>() / nf;
    let mean_f = runs.iter().map(|r| r.1[0]).sum::<f64>() / nf;
    let mut c = Vec::with_capacity(k_max + 1);
    let mut se = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let mf = runs.iter().map(|r| r.1[k]).sum::<f64>() / nf;
        let prods: Vec<f64> = runs.iter().map(|(h0, fs)| (fs[k] - mf) * (h0 - mean_h)).collect();
        let m = prods.iter().sum::<f64>() / nf;
        let v = prods.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (nf - 1.0);
        c.push(m);
        se.push((v / nf).sqrt());
    }
    let mut fit_lags = 0;
    for k in 1..=k_max {
        if c[k].abs() > 2.0 * se[k] {
            fit_lags = k;
        } else {
            break;
        }
    }
    let (rate, refusal) = if fit_lags >= 2 {
        let xs: Vec<f64> = (1..=fit_lags).map(|k| k as f64).collect();
        let ys: Vec<f64> = (1..=fit_lags).map(|k| c[k].abs().ln()).collect();
        (Some(slope_fit(&xs, &ys).exp()), None)
    } else {
        (None, Some(format!("error band exceeds the signal from lag {}", fit_lags + 1)))
    };
    Ok(CorrelationCurve {
        c,
        se,
        mean_f,
        mean_h,
        trajectories: n,
        discarded: trajectories - n,
        holder: (f.gradient_bound(table), h.gradient_bound(table)),
        rate,
        fit_lags,
        refusal,
    })
}

/// Least-squares slope.
pub fn slope_fit(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub t: f64,
    pub cells: usize,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub lambda: f64,
    pub log_lambda: f64,
    pub log_lambda_se: f64,
    pub gap: f64,
    pub gap_warning: Option<String>,
    pub p1: f64,
    pub p1_se: f64,
    pub p1_cellwise: f64,
    pub p2: f64,
    pub p2_tail_bound: f64,
    pub rayleigh_residual: f64,
    pub cesaro_deviation: f64,
    pub deflation_leakage: f64,
    pub invariance_residual: f64,
    pub flagged_cells: usize,
    pub warnings: Vec<String>,
}

impl SpectrumReport {
    pub fn new(op: &UlamOperator, triple: &LeadingTriple, measure: &EquilibriumMeasure, d: &DerivativeEstimate) -> Self {
        Self {
            t: op.t,
            cells: op.dim(),
            samples_per_cell: op.samples_per_cell,
            seed: op.seed,
            lambda: triple.lambda,
            log_lambda: triple.lambda.ln(),
            log_lambda_se: log_lambda_se(op, triple),
            gap: measure.gap.ratio,
            gap_warning: measure.gap.warning.clone(),
            p1: d.p1,
            p1_se: d.p1_se,
            p1_cellwise: d.p1_cellwise,
            p2: d.p2,
            p2_tail_bound: d.p2_tail_bound,
            rayleigh_residual: triple.residual,
            cesaro_deviation: triple.cesaro_deviation,
            deflation_leakage: measure.gap.leakage,
            invariance_residual: measure.invariance_residual,
            flagged_cells: op.flagged.len(),
            warnings: d.warnings.clone(),
        }
    }
}
