//! Weighted Ulam discretization of the transfer operator
//! `L_t f = (f ∘ T⁻¹) / (|JˢT|^{1-t} ∘ T⁻¹)` and its leading spectral data.
//!
//! Cells are rectangles in `(r, sin φ)`, where `μ_SRB` is uniform, so drawing a
//! point uniformly in a cell draws it from `μ_SRB` restricted to that cell.
//! Densities are always taken with respect to `μ_SRB`, and the pairing is
//! `⟨f, g⟩ = Σ f_i g_i μ_SRB(cell_i)`.

mod cache;
mod eigen;
mod pressure;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::billiard_map::{stable_orbit, step_inverse, PhasePoint, DEFAULT_DEPTH};
use crate::error::{MapError, SpectrumError};
use crate::geometry::TableGeometry;
use crate::rng::child_rng;

pub use cache::{read_operator_cache, write_operator_cache, CACHE_VERSION};
pub use eigen::{
    equilibrium_measure, invariance_residual, leading_triple, second_eigenvalue, EquilibriumMeasure, GapEstimate, LeadingTriple};
pub use pressure::{
    correlation, log_lambda_se, pressure_derivatives, pressure_from_spectrum, sample_points, slope_fit, CorrelationCurve, DerivativeEstimate, LevelPressure,
    SpectralPressure, SpectrumReport, BURN_IN,
};

/// Stable-slope accuracy used when weighting preimages.
const SLOPE_TOL: f64 = 1e-9;
/// Redraws allowed per sample slot before the slot counts as rejected.
const RETRY_CAP: usize = 8;

/// Grid resolution: `nr` cells along the longest scatterer, proportionally
/// fewer on shorter ones, and `ns` cells in `sin φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub nr: usize,
    pub ns: usize,
}

impl GridSpec {
    pub fn new(nr: usize, ns: usize) -> Self {
        Self { nr, ns }
    }

    /// Doubles both resolutions.
    pub fn refined(&self) -> Self {
        Self { nr: 2 * self.nr, ns: 2 * self.ns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamGrid {
    pub spec: GridSpec,
    /// Per scatterer: first cell index, number of `r` cells and perimeter.
    pub blocks: Vec<(usize, usize, f64)>,
    /// `μ_SRB` of every cell.
    pub mu: Vec<f64>,
}

impl UlamGrid {
    pub fn new(table: &TableGeometry, spec: GridSpec) -> Result<Self, SpectrumError> {
        if spec.nr == 0 || spec.ns == 0 {
            return Err(SpectrumError::Parameter("grid resolutions must be positive".into()));
        }
        let perimeters: Vec<f64> = (0..table.scatterer_count()).map(|s| table.perimeter(s)).collect();
        let pmax = perimeters.iter().cloned().fold(0.0, f64::max);
        let total: f64 = perimeters.iter().sum();
        let mut blocks = Vec::new();
        let mut mu = Vec::new();
        for &p in &perimeters {
            let nr = ((spec.nr as f64 * p / pmax).round() as usize).max(1);
            blocks.push((mu.len(), nr, p));
            let m = (p / nr as f64) * (2.0 / spec.ns as f64) / (2.0 * total);
            mu.extend(std::iter::repeat(m).take(nr * spec.ns));
        }
        Ok(Self { spec, blocks, mu })
    }

    /// Grid with `n` abstract cells of equal mass; used for operators built by hand.
    pub fn abstract_cells(n: usize) -> Self {
        Self { spec: GridSpec { nr: n, ns: 1 }, blocks: vec![(0, n, 1.0)], mu: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn cell_of(&self, x: &PhasePoint) -> usize {
        let (start, nr, p) = self.blocks[x.scatterer];
        let ns = self.spec.ns;
        let u = x.r.rem_euclid(p) / p * nr as f64;
        let i = (u.floor() as usize).min(nr - 1);
        let j = (((x.phi.sin() + 1.0) * 0.5 * ns as f64).floor() as usize).min(ns - 1);
        start + i * ns + j
    }

    /// Scatterer, `r` range and `sin φ` range of a cell.
    pub fn bounds(&self, cell: usize) -> (usize, [f64; 2], [f64; 2]) {
        let s = self.blocks.iter().rposition(|b| b.0 <= cell).unwrap_or(0);
        let (start, nr, p) = self.blocks[s];
        let ns = self.spec.ns;
        let k = cell - start;
        let (i, j) = (k / ns, k % ns);
        let dr = p / nr as f64;
        let ds = 2.0 / ns as f64;
        (s, [i as f64 * dr, (i + 1) as f64 * dr], [-1.0 + j as f64 * ds, -1.0 + (j + 1) as f64 * ds])
    }

    /// Point drawn from `μ_SRB` restricted to `cell`.
    pub fn sample_in(&self, cell: usize, rng: &mut impl Rng) -> PhasePoint {
        let (s, r, sn) = self.bounds(cell);
        let r = r[0] + (r[1] - r[0]) * rng.random::<f64>();
        let v = sn[0] + (sn[1] - sn[0]) * rng.random::<f64>();
        PhasePoint::new(s, r, v.clamp(-1.0, 1.0).asin())
    }
}

/// Preimage data drawn once per grid and reweighted for every `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamSamples {
    pub grid: UlamGrid,
    pub seed: u64,
    pub samples_per_cell: usize,
    /// Samples of cell `i` occupy `start[i]..start[i + 1]`, sorted by target cell.
    pub start: Vec<usize>,
    /// Cell of `T⁻¹x`.
    pub target: Vec<u32>,
    /// `log JˢT(T⁻¹x)`.
    pub log_js: Vec<f64>,
    pub rejected: Vec<u32>,
}

impl UlamSamples {
    /// Cells where more than half of the sample slots were rejected.
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| 2 * self.rejected[i] as usize > self.samples_per_cell).collect()
    }

    pub fn accepted(&self, cell: usize) -> usize {
        self.start[cell + 1] - self.start[cell]
    }
}

fn preimage_log_js(table: &TableGeometry, x: &PhasePoint) -> Result<(PhasePoint, f64), MapError> {
    let y = step_inverse(table, x)?.to;
    let orbit = stable_orbit(table, &y, 1, DEFAULT_DEPTH, SLOPE_TOL)?;
    Ok((y, orbit.log_js[0]))
}

/// Draws `samples_per_cell` points in every cell and records where their
/// preimages land together with `log JˢT` there.
pub fn collect_samples(
    table: &TableGeometry,
    spec: GridSpec,
    samples_per_cell: usize,
    seed: u64,
) -> Result<UlamSamples, SpectrumError> {
    if samples_per_cell < 16 {
        return Err(SpectrumError::Parameter(format!("samples_per_cell = {samples_per_cell} is below 16")));
    }
    let grid = UlamGrid::new(table, spec)?;
    let per_cell: Vec<(Vec<(u32, f64)>, u32)> = (0..grid.len())
        .into_par_iter()
        .map(|cell| {
            let mut rng = child_rng(seed, cell as u64);
            let mut out = Vec::with_capacity(samples_per_cell);
            let mut rejected = 0;
            for _ in 0..samples_per_cell {
                let hit = (0..RETRY_CAP).find_map(|_| preimage_log_js(table, &grid.sample_in(cell, &mut rng)).ok());
                match hit {
                    Some((y, f)) => out.push((grid.cell_of(&y) as u32, f)),
                    None => rejected += 1,
                }
            }
            out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            (out, rejected)
        })
        .collect();
    let mut start = Vec::with_capacity(grid.len() + 1);
    let mut target = Vec::new();
    let mut log_js = Vec::new();
    let mut rejected = Vec::with_capacity(grid.len());
    start.push(0);
    for (v, rej) in per_cell {
        for (j, f) in v {
            target.push(j);
            log_js.push(f);
        }
        start.push(target.len());
        rejected.push(rej);
    }
    Ok(UlamSamples { grid, seed, samples_per_cell, start, target, log_js, rejected })
}

/// Sparse row-compressed matrix together with the cell masses defining the pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
    pub mu: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense(rows: &[Vec<f64>], mu: Vec<f64>) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(j as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals, mu }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply_values(&self.vals, v)
    }

    /// `Σ_j values[ij] v_j` for another value array sharing this sparsity pattern.
    pub fn apply_values(&self, values: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .into_par_iter()
            .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| values[k] * v[self.cols[k] as usize]).sum())
            .collect()
    }

    /// Adjoint for the `μ` pairing: `(L*g)_j = Σ_i L_ij μ_i g_i / μ_j`.
    pub fn apply_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            let a = self.mu[i] * g[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k] as usize] += self.vals[k] * a;
            }
        }
        for (o, m) in out.iter_mut().zip(&self.mu) {
            *o /= m;
        }
        out
    }

    pub fn pair(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.mu).map(|((a, b), m)| a * b * m).sum()
    }

    pub fn sparsity(&self) -> (&[usize], &[u32]) {
        (&self.row_ptr, &self.cols)
    }
}

/// `L_t` on an Ulam grid. Besides the entries `E[w; i → j]` it carries the
/// moments needed for standard errors and `t`-derivatives, with
/// `w = |JˢT(T⁻¹x)|^{t-1}` and `f = log JˢT(T⁻¹x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    pub t: f64,
    pub seed: u64,
    pub samples_per_cell: usize,
    pub grid: UlamGrid,
    pub matrix: CsrMatrix,
    /// `E[w²; i → j]`.
    pub m_w2: Vec<f64>,
    /// `E[w f; i → j]`, the entries of `dL/dt`.
    pub m_wf: Vec<f64>,
    /// `E[w f²; i → j]`, the entries of `d²L/dt²`.
    pub m_wf2: Vec<f64>,
    /// `E[w² f²; i → j]`.
    pub m_w2f2: Vec<f64>,
    /// Accepted samples per cell.
    pub counts: Vec<u32>,
    pub flagged: Vec<usize>,
}

impl UlamOperator {
    /// Reweights collected samples for the parameter `t`.
    pub fn from_samples(samples: &UlamSamples, t: f64) -> Result<Self, SpectrumError> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(SpectrumError::Parameter(format!("t = {t} must be positive")));
        }
        let n = samples.grid.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut moments: [Vec<f64>; 5] = Default::default();
        let mut counts = Vec::with_capacity(n);
        row_ptr.push(0);
        for i in 0..n {
            let (a, b) = (samples.start[i], samples.start[i + 1]);
            let norm = 1.0 / (b - a).max(1) as f64;
            let mut k = a;
            while k < b {
                let j = samples.target[k];
                let mut acc = [0.0; 5];
                while k < b && samples.target[k] == j {
                    let f = samples.log_js[k];
                    let w = ((t - 1.0) * f).exp();
                    acc[0] += w;
                    acc[1] += w * w;
                    acc[2] += w * f;
                    acc[3] += w * f * f;
                    acc[4] += w * w * f * f;
                    k += 1;
                }
                cols.push(j);
                for (m, v) in moments.iter_mut().zip(acc) {
                    m.push(v * norm);
                }
            }
            row_ptr.push(cols.len());
            counts.push((b - a) as u32);
        }
        let [vals, m_w2, m_wf, m_wf2, m_w2f2] = moments;
        Ok(Self {
            t,
            seed: samples.seed,
            samples_per_cell: samples.samples_per_cell,
            grid: samples.grid.clone(),
            matrix: CsrMatrix { row_ptr, cols, vals, mu: samples.grid.mu.clone() },
            m_w2,
            m_wf,
            m_wf2,
            m_w2f2,
            counts,
            flagged: samples.flagged(),
        })
    }

    /// Operator built from a dense matrix on abstract equal-mass cells.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let grid = UlamGrid::abstract_cells(n);
        let matrix = CsrMatrix::from_dense(rows, grid.mu.clone());
        let zeros = vec![0.0; matrix.nnz()];
        Self {
            t: 1.0,
            seed: 0,
            samples_per_cell: 0,
            grid,
            m_w2: matrix.vals.iter().map(|v| v * v).collect(),
            m_wf: zeros.clone(),
            m_wf2: zeros.clone(),
            m_w2f2: zeros,
            matrix,
            counts: vec![0; n],
            flagged: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Monte Carlo standard error of `⟨g, L v⟩` from the per-row sample spread.
    pub(crate) fn pairing_se(&self, g: &[f64], v: &[f64], second: &[f64], first: &[f64]) -> f64 {
        let m = &self.matrix;
        let mut var = 0.0;
        for i in 0..self.dim() {
            let s = self.counts[i] as f64;
            if s < 2.0 {
                continue;
            }
            let (mut e2, mut e1) = (0.0, 0.0);
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                let vj = v[m.cols[k] as usize];
                e2 += second[k] * vj * vj;
                e1 += first[k] * vj;
            }
            let a = g[i] * m.mu[i];
            var += a * a * (e2 - e1 * e1).max(0.0) / (s - 1.0);
        }
        var.sqrt()
    }
}

/// Draws the samples and assembles `L_t`.
pub fn assemble_ulam(
    table: &TableGeometry,
    t: f64,
    grid_spec: GridSpec,
    samples_per_cell: usize,
    seed: u64,
) -> Result<UlamOperator, SpectrumError> {
    let samples = collect_samples(table, grid_spec, samples_per_cell, seed)?;
    UlamOperator::from_samples(&samples, t)
}

/// Cell of `T⁻¹x` for fresh `μ_SRB` points, `per_cell` per cell, from an
/// independent stream. Row `i` lists the preimage cells of cell `i`.
pub fn preimage_cells(
    table: &TableGeometry,
    grid: &UlamGrid,
    per_cell: usize,
    seed: u64,
) -> Vec<Vec<u32>> {
    (0..grid.len())
        .into_par_iter()
        .map(|cell| {
            let mut rng = child_rng(seed, cell as u64);
            (0..per_cell)
                .filter_map(|_| {
                    (0..RETRY_CAP).find_map(|_| step_inverse(table, &grid.sample_in(cell, &mut rng)).ok())
                })
                .map(|s| grid.cell_of(&s.to) as u32)
                .collect()
        })
        .collect()
}
