use serde::{Deserialize, Serialize};

use super::{preimage_cells, CsrMatrix, UlamGrid, UlamOperator};
use crate::billiard_map::PhasePoint;
use crate::error::SpectrumError;
use crate::geometry::TableGeometry;
use crate::rng::unit_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadingTriple {
    pub lambda: f64,
    /// Right eigenvector, normalized to `⟨nu, 1⟩ = 1`.
    pub nu: Vec<f64>,
    /// Left eigenvector for the `μ` pairing, normalized to `⟨nu, nu_tilde⟩ = 1`.
    pub nu_tilde: Vec<f64>,
    pub iterations: usize,
    /// `‖L nu − λ nu‖₁ / (λ ‖nu‖₁)` at exit, the larger of both sides.
    pub residual: f64,
    /// `‖·‖₁` distance between `nu` and the normalized Cesàro average
    /// `(1/N) Σ_{k<N} λ^{-k} L^k 1`.
    pub cesaro_deviation: f64,
}

fn l1(m: &CsrMatrix, v: &[f64]) -> f64 {
    v.iter().zip(&m.mu).map(|(a, w)| a.abs() * w).sum()
}

fn scale(v: &mut [f64], c: f64) {
    v.iter_mut().for_each(|x| *x *= c);
}

struct PowerRun {
    lambda: f64,
    v: Vec<f64>,
    iterations: usize,
    residual: f64,
}

fn power(m: &CsrMatrix, apply: &dyn Fn(&[f64]) -> Vec<f64>, tol: f64, max_iters: usize) -> Result<PowerRun, SpectrumError> {
    let mut v = vec![1.0; m.dim()];
    let n0 = l1(m, &v);
    scale(&mut v, 1.0 / n0);
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let w = apply(&v);
        let lambda = l1(m, &w);
        if !(lambda > 0.0) {
            return Err(SpectrumError::Parameter("operator annihilates the positive cone".into()));
        }
        residual = w.iter().zip(&v).zip(&m.mu).map(|((a, b), mu)| (a - lambda * b).abs() * mu).sum::<f64>() / lambda;
        let change = (lambda - prev).abs() / lambda;
        v = w;
        scale(&mut v, 1.0 / lambda);
        if change < tol && residual < tol {
            return Ok(PowerRun { lambda, v, iterations: it, residual });
        }
        prev = lambda;
    }
    Err(SpectrumError::NotConverged { iterations: max_iters, residual })
}

fn check_sign(v: &[f64], tol: f64) -> Result<(), SpectrumError> {
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let low = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if low < -tol * scale {
        return Err(SpectrumError::NegativeEigenvector(low / scale));
    }
    Ok(())
}

/// Leading eigenvalue with right and left eigenvectors by power iteration on
/// `L` and its `μ`-adjoint, started from the constant density.
pub fn leading_triple(op: &UlamOperator, tol: f64, max_iters: usize) -> Result<LeadingTriple, SpectrumError> {
    let m = &op.matrix;
    if m.dim() == 0 {
        return Err(SpectrumError::Parameter("empty operator".into()));
    }
    let right = power(m, &|v| m.apply(v), tol, max_iters)?;
    let left = power(m, &|v| m.apply_adjoint(v), tol, max_iters)?;
    let lambda = right.lambda;
    check_sign(&right.v, tol)?;
    check_sign(&left.v, tol)?;
    let mut nu = right.v;
    let mut nu_tilde = left.v;
    let c = m.pair(&nu, &vec![1.0; m.dim()]);
    scale(&mut nu, 1.0 / c);
    let p = m.pair(&nu, &nu_tilde);
    scale(&mut nu_tilde, 1.0 / p);

    // Cesàro average with the converged eigenvalue.
    let n = right.iterations.max(left.iterations).max(1);
    let mut u = vec![1.0; m.dim()];
    let mut avg = vec![0.0; m.dim()];
    for _ in 0..n {
        avg.iter_mut().zip(&u).for_each(|(a, x)| *a += x);
        u = m.apply(&u);
        scale(&mut u, 1.0 / lambda);
    }
    let c = m.pair(&avg, &vec![1.0; m.dim()]);
    scale(&mut avg, 1.0 / c);
    let cesaro_deviation = avg.iter().zip(&nu).zip(&m.mu).map(|((a, b), w)| (a - b).abs() * w).sum();

    Ok(LeadingTriple {
        lambda,
        nu,
        nu_tilde,
        iterations: n,
        residual: right.residual.max(left.residual),
        cesaro_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// `|λ₂| / λ`.
    pub ratio: f64,
    pub iterations: usize,
    /// Largest relative component along `nu` removed after a deflated step.
    pub leakage: f64,
    pub warning: Option<String>,
    /// Last deflated iterate, normalized in `‖·‖₁`; dominated by the second
    /// eigenvector when its eigenvalue is real.
    #[serde(skip)]
    pub vector: Vec<f64>,
}

/// `|λ₂|/λ` by power iteration on `L − λ nu ⊗ nu_tilde`. The growth rate is a
/// geometric mean over a window, which also handles complex pairs.
pub fn second_eigenvalue(op: &UlamOperator, triple: &LeadingTriple) -> GapEstimate {
    const WINDOW: usize = 40;
    const MAX_ITERS: usize = 4000;
    let m = &op.matrix;
    let (nu, nt, lambda) = (&triple.nu, &triple.nu_tilde, triple.lambda);
    let project = |v: &mut Vec<f64>| -> f64 {
        let c = m.pair(v, nt);
        let before = l1(m, v);
        v.iter_mut().zip(nu).for_each(|(x, n)| *x -= c * n);
        if before > 0.0 {
            (c.abs() * l1(m, nu) / before).min(1.0)
        } else {
            0.0
        }
    };
    let mut v: Vec<f64> = (0..m.dim()).map(|i| unit_hash(0x5eed, i as u64) - 0.5).collect();
    project(&mut v);
    let mut leakage: f64 = 0.0;
    let mut logs = vec![0.0];
    let mut log_norm = 0.0;
    let mut last = f64::NAN;
    let mut ratio = 0.0;
    let mut it = 0;
    while it < MAX_ITERS {
        it += 1;
        let mut w = m.apply(&v);
        if it > 1 {
            leakage = leakage.max(project(&mut w));
        } else {
            project(&mut w);
        }
        let n = l1(m, &w);
        if n == 0.0 || !n.is_finite() {
            return GapEstimate { ratio: 0.0, iterations: it, leakage, warning: None, vector: v };
        }
        log_norm += n.ln();
        logs.push(log_norm);
        scale(&mut w, 1.0 / n);
        v = w;
        if it >= 2 * WINDOW && it % WINDOW == 0 {
            ratio = ((logs[it] - logs[it - WINDOW]) / WINDOW as f64).exp() / lambda;
            if (ratio - last).abs() < 1e-4 {
                break;
            }
            last = ratio;
        }
    }
    if it < 2 * WINDOW {
        ratio = ((logs[it] - logs[0]) / it as f64).exp() / lambda;
    }
    let mut warning = None;
    if leakage > 1e-6 {
        warning = Some(format!("deflation leakage {leakage:.2e}; gap unreliable"));
    } else if it >= MAX_ITERS {
        warning = Some("growth rate still drifting at the iteration cap".into());
    }
    GapEstimate { ratio: ratio.min(1.0), iterations: it, leakage, warning, vector: v }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMeasure {
    pub t: f64,
    pub lambda: f64,
    pub nu: Vec<f64>,
    pub nu_tilde: Vec<f64>,
    /// `μ_t` of every cell, summing to 1.
    pub mu_cells: Vec<f64>,
    pub gap: GapEstimate,
    /// Total variation between `μ_t` and its image under `T`, cellwise.
    pub invariance_residual: f64,
    pub grid: UlamGrid,
}

impl EquilibriumMeasure {
    /// Smallest `μ_t(cell)/μ_SRB(cell)`.
    pub fn min_density(&self) -> f64 {
        self.mu_cells.iter().zip(&self.grid.mu).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min)
    }
}

/// `μ_t(cell_i) ∝ nu_i nu_tilde_i μ_SRB(cell_i)`, with the gap and the
/// invariance residual on the operator's own grid.
pub fn equilibrium_measure(
    table: &TableGeometry,
    op: &UlamOperator,
    triple: &LeadingTriple,
) -> Result<EquilibriumMeasure, SpectrumError> {
    let m = &op.matrix;
    if triple.nu.len() != m.dim() || triple.nu_tilde.len() != m.dim() {
        return Err(SpectrumError::Parameter("eigenvectors do not match the operator".into()));
    }
    let mut mu_cells: Vec<f64> = (0..m.dim()).map(|i| triple.nu[i] * triple.nu_tilde[i] * m.mu[i]).collect();
    let total: f64 = mu_cells.iter().sum();
    mu_cells.iter_mut().for_each(|x| *x /= total);
    let mut measure = EquilibriumMeasure {
        t: op.t,
        lambda: triple.lambda,
        nu: triple.nu.clone(),
        nu_tilde: triple.nu_tilde.clone(),
        mu_cells,
        gap: second_eigenvalue(op, triple),
        invariance_residual: 0.0,
        grid: op.grid.clone(),
    };
    measure.invariance_residual =
        invariance_residual(table, &measure, &op.grid, op.samples_per_cell.max(16), op.seed ^ 0x1f0a_77c3_9d2e_b801);
    Ok(measure)
}

/// `½ Σ_J |T_*μ_t(J) − μ_t(J)|` over the cells `J` of `partition`, which may be
/// coarser than the measure's grid. The image is evaluated on a fresh sample
/// stream: `T_*μ_t` has density at `x` equal to the density of `μ_t` at `T⁻¹x`,
/// averaged over `per_cell` points `x` of every fine cell.
pub fn invariance_residual(
    table: &TableGeometry,
    measure: &EquilibriumMeasure,
    partition: &UlamGrid,
    per_cell: usize,
    seed: u64,
) -> f64 {
    let grid = &measure.grid;
    let pre = preimage_cells(table, grid, per_cell, seed);
    let density: Vec<f64> = measure.mu_cells.iter().zip(&grid.mu).map(|(a, b)| a / b).collect();
    let mut diff = vec![0.0; partition.len()];
    for (j, cells) in pre.iter().enumerate() {
        let (s, r, sn) = grid.bounds(j);
        let centre = PhasePoint::new(s, 0.5 * (r[0] + r[1]), (0.5 * (sn[0] + sn[1])).asin());
        let pushed = if cells.is_empty() {
            0.0
        } else {
            cells.iter().map(|&c| density[c as usize]).sum::<f64>() / cells.len() as f64
        };
        diff[partition.cell_of(&centre)] += pushed * grid.mu[j] - measure.mu_cells[j];
    }
    0.5 * diff.iter().map(|d| d.abs()).sum::<f64>()
}
