//! Partition complexity `Q_n(t, g)`, the pressure `P_*(t)`, the entropy `h_*`,
//! and growth diagnostics for stable curves.
//!
//! `Q_n(t, g)` sums, over the cells `A` of the forward itinerary partition of
//! length `n` (homogeneity strips included), the supremum over `A` of
//! `|JˢTⁿ|^t e^{S_n g}`. Cells are found by [`survey`]: up to a fixed depth every
//! cell crossed by a family of unstable segments is enumerated; deeper levels
//! follow a random subset of those cells with inclusion probabilities
//! proportional to their weight, and sums are reweighted by the inverse
//! probabilities.

mod curves;
mod pressure;
mod tracer;

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::billiard_map::{stable_orbit, unstable_cone, PhasePoint, DEFAULT_DEPTH};
use crate::error::EstimateError;
use crate::geometry::TableGeometry;
use crate::rng::unit_hash;
use crate::singularity::StripParams;

pub use curves::*;
pub use pressure::*;
pub(crate) use tracer::splitmix;
use tracer::{runs, Line, Sample, TraceParams, Tracer, MAX_DEPTH};

/// Largest supported itinerary length.
pub const MAX_ITINERARY: usize = MAX_DEPTH;

/// Bounded observable on a regular `(r, phi)` grid per scatterer, bilinearly
/// interpolated and periodic in `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridObservable {
    pub nr: usize,
    pub nphi: usize,
    /// `values[s][i * nphi + j]` at `r = P_s i / nr`, `phi = -π/2 + π j / (nphi - 1)`.
    pub values: Vec<Vec<f64>>,
}

impl GridObservable {
    pub fn from_fn(table: &TableGeometry, nr: usize, nphi: usize, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        let values = (0..table.scatterer_count())
            .map(|s| {
                let p = table.perimeter(s);
                let mut v = Vec::with_capacity(nr * nphi);
                for i in 0..nr {
                    for j in 0..nphi {
                        v.push(f(s, p * i as f64 / nr as f64, -FRAC_PI_2 + PI * j as f64 / (nphi - 1) as f64));
                    }
                }
                v
            })
            .collect();
        Self { nr, nphi, values }
    }

    pub fn eval(&self, table: &TableGeometry, x: &PhasePoint) -> f64 {
        let p = table.perimeter(x.scatterer);
        let u = table.reduce_r(x.scatterer, x.r) / p * self.nr as f64;
        let w = ((x.phi + FRAC_PI_2) / PI * (self.nphi - 1) as f64).clamp(0.0, (self.nphi - 1) as f64);
        let i0 = (u.floor() as usize).min(self.nr - 1);
        let j0 = (w.floor() as usize).min(self.nphi - 2);
        let (fu, fw) = (u - i0 as f64, w - j0 as f64);
        let i1 = (i0 + 1) % self.nr;
        let v = &self.values[x.scatterer];
        let at = |i: usize, j: usize| v[i * self.nphi + j];
        (1.0 - fu) * ((1.0 - fw) * at(i0, j0) + fw * at(i0, j0 + 1)) + fu * ((1.0 - fw) * at(i1, j0) + fw * at(i1, j0 + 1))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest grid difference quotient in either coordinate.
    pub fn gradient_bound(&self, table: &TableGeometry) -> f64 {
        let mut g: f64 = 0.0;
        let hp = PI / (self.nphi - 1) as f64;
        for (s, v) in self.values.iter().enumerate() {
            let hr = table.perimeter(s) / self.nr as f64;
            for i in 0..self.nr {
                for j in 0..self.nphi {
                    let here = v[i * self.nphi + j];
                    g = g.max((v[((i + 1) % self.nr) * self.nphi + j] - here).abs() / hr);
                    if j + 1 < self.nphi {
                        g = g.max((v[i * self.nphi + j + 1] - here).abs() / hp);
                    }
                }
            }
        }
        g
    }
}

/// Default contraction factor for the growth diagnostics: the midpoint of
/// `(Λ^{-1}, Λ^{-1/2})`.
pub fn default_theta(table: &TableGeometry) -> f64 {
    let l = table.lambda();
    0.5 * (1.0 / l + 1.0 / l.sqrt())
}

/// How the partition cells are located.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingPlan {
    /// Upper bound on the `r`-spacing of the unstable segments; the actual
    /// spacing is the perimeter over a power of two.
    pub line_spacing: f64,
    /// Uniform samples per segment before refinement.
    pub coarse_samples: usize,
    /// Image gap below which a change of itinerary is no longer bisected.
    pub cut_resolution: f64,
    /// Largest image gap between samples at the deepest level.
    pub image_spacing: f64,
    /// Strips beyond this index are merged into one.
    pub strip_cap: u32,
    pub with_strips: bool,
    /// Levels up to this depth are enumerated completely.
    pub exact_depth: usize,
    /// Expected number of exact-depth cells followed to deeper levels.
    pub sampled_cells: usize,
    /// Values of `t` whose weights drive the inclusion probabilities.
    pub importance_t: Vec<f64>,
    pub seed: u64,
    /// Target accuracy of the stable slopes used for the Jacobians.
    pub slope_tol: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            line_spacing: 0.05,
            coarse_samples: 64,
            cut_resolution: 1e-3,
            image_spacing: 1.0,
            strip_cap: 16,
            with_strips: true,
            exact_depth: 5,
            sampled_cells: 1000,
            importance_t: vec![0.5, 1.0, 2.0],
            seed: 0,
            slope_tol: 1e-9,
        }
    }
}

impl SamplingPlan {
    /// A coarse plan for smoke tests.
    pub fn quick() -> Self {
        Self { line_spacing: 0.2, coarse_samples: 32, cut_resolution: 1e-2, exact_depth: 3, sampled_cells: 300, ..Self::default() }
    }

    fn validate(&self) -> Result<(), EstimateError> {
        let bad = |m: &str| Err(EstimateError::Parameter(m.to_string()));
        if !(self.line_spacing > 0.0) || !(self.cut_resolution > 0.0) || !(self.image_spacing > 0.0) {
            return bad("spacings and resolutions must be positive");
        }
        if self.coarse_samples < 2 {
            return bad("coarse_samples must be at least 2");
        }
        if self.exact_depth == 0 {
            return bad("exact_depth must be at least 1");
        }
        if self.importance_t.is_empty() || self.importance_t.iter().any(|t| !(*t >= 0.0)) {
            return bad("importance_t must be a non-empty list of non-negative values");
        }
        Ok(())
    }

    fn lines(&self, table: &TableGeometry) -> Vec<Line> {
        let (lo, hi) = unstable_cone(table);
        let slope = 0.5 * (lo + hi);
        let mut out = Vec::new();
        for s in 0..table.scatterer_count() {
            let p = table.perimeter(s);
            let count = (p / self.line_spacing).log2().ceil().max(0.0).exp2() as usize;
            for i in 0..count {
                out.push(Line { scatterer: s, r0: p * i as f64 / count as f64, slope, half_span: FRAC_PI_2 - 1e-6 });
            }
        }
        out
    }

    fn actual_spacing(&self, table: &TableGeometry) -> f64 {
        (0..table.scatterer_count())
            .map(|s| {
                let p = table.perimeter(s);
                p / (p / self.line_spacing).log2().ceil().max(0.0).exp2()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMeta {
    pub lines: usize,
    pub line_spacing: f64,
    pub coarse_samples: usize,
    pub evaluations: usize,
    /// Samples whose itinerary hit a near-tangential collision.
    pub skipped: usize,
    pub skip_fraction: f64,
    /// Largest strip index met by any sample.
    pub largest_strip: u64,
    pub strip_truncated: bool,
    pub exact_depth: usize,
    pub candidate_cells: usize,
    pub followed_cells: usize,
    pub warnings: Vec<String>,
}

/// One cell: its inverse inclusion probability and the Pareto front of
/// `(log JˢTⁿ, S_n g)` over its representatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub weight: f64,
    pub sups: Vec<(f64, f64)>,
}

impl ClassRecord {
    fn push(&mut self, a: f64, b: f64) {
        if self.sups.iter().any(|&(x, y)| x >= a && y >= b) {
            return;
        }
        self.sups.retain(|&(x, y)| !(a >= x && b >= y));
        self.sups.push((a, b));
    }

    fn log_sup(&self, t: f64) -> f64 {
        self.sups.iter().map(|&(a, b)| t * a + b).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub n: usize,
    /// True when every crossed cell was enumerated.
    pub exact: bool,
    pub classes: Vec<ClassRecord>,
}

/// Cells of the itinerary partitions of lengths `1..=n_max` with their
/// sampled Jacobian suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub n_max: usize,
    pub with_g: bool,
    pub levels: Vec<Level>,
    pub meta: SamplingMeta,
    /// Fitted distortion constant `C_d` in `|Δ log JˢTⁿ| <= C_d d^{1/(q+1)}`.
    pub distortion_constant: f64,
    /// `C_d (h/2)^{1/(q+1)}` for the segment spacing `h`.
    pub inflation: f64,
}

struct Rep {
    line: usize,
    point: PhasePoint,
    hash: [u64; MAX_DEPTH],
    a: [f64; MAX_DEPTH],
    b: [f64; MAX_DEPTH],
}

struct LineTrace {
    reps: Vec<Rep>,
    /// Deepest-level runs: cell hash and the sample parameters inside.
    cells: Vec<(u64, Vec<f64>)>,
    evals: usize,
    skipped: usize,
    max_strip: u64,
}

struct Ctx<'a> {
    table: &'a TableGeometry,
    tracer: Tracer<'a>,
    g: Option<&'a GridObservable>,
    slope_tol: f64,
}

impl Ctx<'_> {
    /// Prefix sums of `log JˢT` and `g` along the orbit of a run's sample,
    /// trying a few samples in the run if the look-ahead fails.
    fn representative(&self, line: &Line, samples: &[Sample], depth: usize) -> Option<(PhasePoint, [f64; MAX_DEPTH], [f64; MAX_DEPTH])> {
        let mid = samples.len() / 2;
        let order = [mid, mid.saturating_sub(1), (mid + 1).min(samples.len() - 1), 0, samples.len() - 1];
        for &i in &order {
            let x = line.point(samples[i].s);
            let Ok(orbit) = stable_orbit(self.table, &x, depth, DEFAULT_DEPTH, self.slope_tol) else { continue };
            let mut a = [0.0; MAX_DEPTH];
            let mut b = [0.0; MAX_DEPTH];
            let (mut sa, mut sb) = (0.0, 0.0);
            for k in 0..depth {
                sa += orbit.log_js[k];
                if let Some(g) = self.g {
                    sb += g.eval(self.table, &orbit.point(k));
                }
                a[k] = sa;
                b[k] = sb;
            }
            return Some((x, a, b));
        }
        None
    }

    fn trace_line(&self, idx: usize, line: &Line, coarse: usize, depth: usize) -> LineTrace {
        let mut evals = coarse + 1;
        let seeds: Vec<Sample> = (0..=coarse)
            .map(|i| self.tracer.evaluate(line, -line.half_span + 2.0 * line.half_span * i as f64 / coarse as f64, depth))
            .collect();
        let samples = self.tracer.refine(line, seeds, depth, &mut evals);
        let skipped = samples.iter().filter(|s| s.valid < depth).count();
        let max_strip = samples.iter().map(|s| s.max_strip).max().unwrap_or(0);
        let mut reps = Vec::new();
        let mut cells = Vec::new();
        for (i, j) in runs(&samples, depth - 1) {
            let run = &samples[i..j];
            if let Some((point, a, b)) = self.representative(line, run, depth) {
                reps.push(Rep { line: idx, point, hash: run[0].hash, a, b });
            }
            cells.push((run[0].hash[depth - 1], run.iter().map(|s| s.s).collect()));
        }
        LineTrace { reps, cells, evals, skipped, max_strip }
    }
}

/// Locates the cells of the itinerary partitions up to length `n_max`.
pub fn survey(
    table: &TableGeometry,
    n_max: usize,
    g: Option<&GridObservable>,
    plan: &SamplingPlan,
) -> Result<Survey, EstimateError> {
    plan.validate()?;
    if n_max == 0 || n_max > MAX_DEPTH {
        return Err(EstimateError::Parameter(format!("n must lie in 1..={MAX_DEPTH}, got {n_max}")));
    }
    let m = plan.exact_depth.min(n_max);
    let strips = plan.with_strips.then(|| StripParams::of(table));
    let ctx = Ctx {
        table,
        tracer: Tracer {
            table,
            params: TraceParams {
                cut_resolution: plan.cut_resolution,
                image_spacing: plan.image_spacing,
                min_ds: 1e-13,
                strip_cap: plan.strip_cap,
                strips,
            },
        },
        g,
        slope_tol: plan.slope_tol,
    };
    let lines = plan.lines(table);
    let traces: Vec<LineTrace> =
        lines.par_iter().enumerate().map(|(i, line)| ctx.trace_line(i, line, plan.coarse_samples, m)).collect();

    let mut evaluations: usize = traces.iter().map(|t| t.evals).sum();
    let mut skipped: usize = traces.iter().map(|t| t.skipped).sum();
    let mut largest_strip = traces.iter().map(|t| t.max_strip).max().unwrap_or(0);

    // Exact levels.
    let mut levels = Vec::with_capacity(n_max);
    for k in 0..m {
        let mut map: HashMap<u64, ClassRecord> = HashMap::new();
        for rep in traces.iter().flat_map(|t| &t.reps) {
            map.entry(rep.hash[k]).or_insert_with(|| ClassRecord { weight: 1.0, sups: Vec::new() }).push(rep.a[k], rep.b[k]);
        }
        let mut keyed: Vec<(u64, ClassRecord)> = map.into_iter().collect();
        keyed.sort_unstable_by_key(|e| e.0);
        levels.push(Level { n: k + 1, exact: true, classes: keyed.into_iter().map(|e| e.1).collect() });
    }
    let distortion_constant = fit_distortion(table, &traces, m);
    let spacing = plan.actual_spacing(table);
    let inflation = distortion_constant * (0.5 * spacing).powf(1.0 / (table.q + 1.0));

    let mut candidate_cells = 0;
    let mut followed = 0;
    if n_max > m {
        // Inclusion probabilities from the exact-depth weights.
        let mut top: HashMap<u64, f64> = HashMap::new();
        for rep in traces.iter().flat_map(|t| &t.reps) {
            let e = top.entry(rep.hash[m - 1]).or_insert(f64::NEG_INFINITY);
            *e = e.max(rep.a[m - 1]);
        }
        let mut keys: Vec<(u64, f64)> = top.into_iter().collect();
        keys.sort_unstable_by_key(|e| e.0);
        candidate_cells = keys.len();
        let mut score = vec![0.0; keys.len()];
        for &t in &plan.importance_t {
            let mx = keys.iter().map(|e| t * e.1).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = keys.iter().map(|e| (t * e.1 - mx).exp()).sum();
            for (s, e) in score.iter_mut().zip(&keys) {
                *s += (t * e.1 - mx).exp() / total / plan.importance_t.len() as f64;
            }
        }
        let mut chosen: HashMap<u64, f64> = HashMap::new();
        for (e, s) in keys.iter().zip(&score) {
            let pi = (plan.sampled_cells as f64 * s).min(1.0);
            if unit_hash(plan.seed, e.0) < pi {
                chosen.insert(e.0, pi);
            }
        }
        followed = chosen.len();
        let mut runs_of: HashMap<u64, Vec<(usize, &[f64])>> = HashMap::new();
        for (li, tr) in traces.iter().enumerate() {
            for (h, s) in &tr.cells {
                if chosen.contains_key(h) {
                    runs_of.entry(*h).or_default().push((li, s.as_slice()));
                }
            }
        }
        let mut work: Vec<(u64, f64, Vec<(usize, &[f64])>)> =
            runs_of.into_iter().map(|(h, r)| (h, chosen[&h], r)).collect();
        work.sort_unstable_by_key(|w| w.0);
        let deeper: Vec<(Vec<Vec<ClassRecord>>, usize, usize, u64)> = work
            .par_iter()
            .map(|(_, pi, cell_runs)| follow_cell(&ctx, &lines, cell_runs, m, n_max, 1.0 / pi))
            .collect();
        for k in m..n_max {
            levels.push(Level { n: k + 1, exact: false, classes: Vec::new() });
        }
        for (per_level, ev, sk, ms) in deeper {
            evaluations += ev;
            skipped += sk;
            largest_strip = largest_strip.max(ms);
            for (k, classes) in per_level.into_iter().enumerate() {
                levels[m + k].classes.extend(classes);
            }
        }
    }

    let skip_fraction = skipped as f64 / evaluations.max(1) as f64;
    let mut warnings = Vec::new();
    if skip_fraction > 0.01 {
        warnings.push(format!("{:.2}% of samples stopped at a near-tangential collision", 100.0 * skip_fraction));
    }
    let strip_truncated = plan.with_strips && largest_strip > plan.strip_cap as u64;
    if strip_truncated {
        warnings.push(format!("strips beyond {} merged (largest met: {largest_strip})", plan.strip_cap));
    }
    let deepest = levels.last().map_or(0, |l| l.classes.len());
    if deepest as f64 > 0.5 * evaluations as f64 {
        warnings.push("resolution exhausted: classes approach the number of samples".into());
    }
    Ok(Survey {
        n_max,
        with_g: g.is_some(),
        levels,
        meta: SamplingMeta {
            lines: lines.len(),
            line_spacing: spacing,
            coarse_samples: plan.coarse_samples,
            evaluations,
            skipped,
            skip_fraction,
            largest_strip,
            strip_truncated,
            exact_depth: m,
            candidate_cells,
            followed_cells: followed,
            warnings,
        },
        distortion_constant,
        inflation,
    })
}

/// Refines the runs of one exact-depth cell down to `n_max` and collects its
/// subcells per level.
fn follow_cell(
    ctx: &Ctx<'_>,
    lines: &[Line],
    cell_runs: &[(usize, &[f64])],
    m: usize,
    n_max: usize,
    weight: f64,
) -> (Vec<Vec<ClassRecord>>, usize, usize, u64) {
    let mut maps: Vec<HashMap<u64, ClassRecord>> = vec![HashMap::new(); n_max - m];
    let (mut evals, mut skipped, mut max_strip) = (0, 0, 0);
    for &(li, params) in cell_runs {
        let line = &lines[li];
        let seeds: Vec<Sample> = params.iter().map(|&s| ctx.tracer.evaluate(line, s, n_max)).collect();
        evals += seeds.len();
        let samples = ctx.tracer.refine(line, seeds, n_max, &mut evals);
        skipped += samples.iter().filter(|s| s.valid < n_max).count();
        max_strip = max_strip.max(samples.iter().map(|s| s.max_strip).max().unwrap_or(0));
        for (i, j) in runs(&samples, n_max - 1) {
            let run = &samples[i..j];
            let Some((_, a, b)) = ctx.representative(line, run, n_max) else { continue };
            for k in m..n_max {
                maps[k - m].entry(run[0].hash[k]).or_insert_with(|| ClassRecord { weight, sups: Vec::new() }).push(a[k], b[k]);
            }
        }
    }
    let per_level = maps
        .into_iter()
        .map(|map| {
            let mut keyed: Vec<(u64, ClassRecord)> = map.into_iter().collect();
            keyed.sort_unstable_by_key(|e| e.0);
            keyed.into_iter().map(|e| e.1).collect()
        })
        .collect();
    (per_level, evals, skipped, max_strip)
}

/// `C_d` from pairs of representatives of the same deepest exact cell on
/// different segments (0.9 quantile of `|Δ log J| / d^{1/(q+1)}`).
fn fit_distortion(table: &TableGeometry, traces: &[LineTrace], m: usize) -> f64 {
    let mut by_cell: HashMap<u64, Vec<&Rep>> = HashMap::new();
    for rep in traces.iter().flat_map(|t| &t.reps) {
        by_cell.entry(rep.hash[m - 1]).or_default().push(rep);
    }
    let expo = 1.0 / (table.q + 1.0);
    let mut ratios = Vec::new();
    for reps in by_cell.values() {
        for w in reps.windows(2) {
            let (x, y) = (w[0], w[1]);
            if x.line == y.line || x.point.scatterer != y.point.scatterer {
                continue;
            }
            let p = table.perimeter(x.point.scatterer);
            let mut dr = (x.point.r - y.point.r).rem_euclid(p);
            if dr > 0.5 * p {
                dr -= p;
            }
            let d = dr.hypot(x.point.phi - y.point.phi);
            if d > 0.0 {
                ratios.push((x.a[m - 1] - y.a[m - 1]).abs() / d.powf(expo));
            }
        }
    }
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.sort_by(f64::total_cmp);
    ratios[((ratios.len() - 1) as f64 * 0.9).round() as usize]
}

/// `log Σ w e^{x}` over `(log w + x)` values, summed in the given order.
fn log_sum(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub n: usize,
    pub t: f64,
    /// `Q̂_n`, class suprema inflated by the distortion factor.
    pub value: f64,
    pub log_value: f64,
    /// `Q̂_n` from the raw sample maxima.
    pub sampled_value: f64,
    /// Estimated number of cells (inverse-probability weighted).
    pub class_count: usize,
    /// Cells actually visited.
    pub observed_classes: usize,
    /// `log sup |JˢTⁿ|^t e^{S_n g}` per visited cell (before inflation).
    pub class_log_sups: Vec<f64>,
    pub exact: bool,
    pub meta: SamplingMeta,
}

impl Survey {
    fn level(&self, n: usize) -> &Level {
        &self.levels[n - 1]
    }

    /// `log Q̂_n(t)` from the raw sample maxima.
    pub fn sampled_log_q(&self, n: usize, t: f64) -> f64 {
        log_sum(self.level(n).classes.iter().map(|c| c.weight.ln() + c.log_sup(t)))
    }

    /// `log Q̂_n(t)` with the distortion inflation.
    pub fn log_q(&self, n: usize, t: f64) -> f64 {
        self.sampled_log_q(n, t) + t * self.inflation
    }

    pub fn class_count(&self, n: usize) -> f64 {
        self.level(n).classes.iter().map(|c| c.weight).sum()
    }

    pub fn estimate(&self, n: usize, t: f64) -> ComplexityEstimate {
        let level = self.level(n);
        let sampled = self.sampled_log_q(n, t);
        ComplexityEstimate {
            n,
            t,
            value: (sampled + t * self.inflation).exp(),
            log_value: sampled + t * self.inflation,
            sampled_value: sampled.exp(),
            class_count: self.class_count(n).round() as usize,
            observed_classes: level.classes.len(),
            class_log_sups: level.classes.iter().map(|c| c.log_sup(t)).collect(),
            exact: level.exact,
            meta: self.meta.clone(),
        }
    }

    /// Smallest `Q̂_{n+j} / (Q̂_n Q̂_j)` over `n, j >= 1`, `n + j <= n_max`.
    pub fn supermultiplicative_constant(&self, t: f64) -> f64 {
        let lq: Vec<f64> = (1..=self.n_max).map(|n| self.log_q(n, t)).collect();
        let mut c = f64::INFINITY;
        for n in 1..self.n_max {
            for j in 1..=self.n_max - n {
                c = c.min((lq[n + j - 1] - lq[n - 1] - lq[j - 1]).exp());
            }
        }
        c
    }
}

/// `Q̂_n(t, g)`; `g = None` means `g ≡ 0`.
pub fn estimate_qn(
    table: &TableGeometry,
    t: f64,
    n: usize,
    g: Option<&GridObservable>,
    plan: &SamplingPlan,
) -> Result<ComplexityEstimate, EstimateError> {
    if !(t > 0.0) {
        return Err(EstimateError::Parameter(format!("t must be positive, got {t}")));
    }
    if let Some(g) = g {
        check_small_potential(table, g, t)?;
    }
    Ok(survey(table, n, g, plan)?.estimate(n, t))
}

/// Rejects potentials outside the regime `2|g|_{C⁰} < -t₀ log θ`.
pub fn check_small_potential(table: &TableGeometry, g: &GridObservable, t0: f64) -> Result<(), EstimateError> {
    let bound = 0.5 * t0 * default_theta(table).ln().abs();
    let sup = g.sup_norm();
    if sup < bound {
        Ok(())
    } else {
        Err(EstimateError::Parameter(format!("|g| = {sup} exceeds the small-potential bound {bound}")))
    }
}
