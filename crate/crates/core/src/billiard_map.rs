//! The collision map `T`, its inverse, its differential, and the invariant
//! stable/unstable line fields obtained by cone iteration.
//!
//! Angles follow the outgoing convention: `phi` is the signed angle from the
//! outward normal to the post-collision velocity, counterclockwise positive.
//! Slopes are `V = dphi/dr`; the unstable cone is `K_min <= V <= K_max + 1/tau_min`
//! and the stable cone is its mirror image.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::MapError;
use crate::geometry::{first_hit, TableGeometry};

/// 2x2 matrix in row-major order, acting on `(dr, dphi)`.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub scatterer: usize,
    pub r: f64,
    pub phi: f64,
    pub cos_phi: f64,
}

impl PhasePoint {
    pub fn new(scatterer: usize, r: f64, phi: f64) -> Self {
        Self { scatterer, r, phi, cos_phi: phi.cos().max(0.0) }
    }

    /// Time-reversal involution `(r, phi) -> (r, -phi)`.
    pub fn reflect(&self) -> Self {
        Self { phi: -self.phi, ..*self }
    }

    pub fn sin_phi(&self) -> f64 {
        self.phi.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Euclid,
    Adapted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub dr: f64,
    pub dphi: f64,
    pub metric: Metric,
}

impl TangentVector {
    /// Unit Euclidean vector with slope `v`, oriented with `dr > 0`.
    pub fn from_slope(v: f64) -> Self {
        let s = (1.0 + v * v).sqrt();
        Self { dr: 1.0 / s, dphi: v / s, metric: Metric::Euclid }
    }

    pub fn slope(&self) -> f64 {
        self.dphi / self.dr
    }

    pub fn euclid_norm(&self) -> f64 {
        self.dr.hypot(self.dphi)
    }

    /// `(K + |V|) |dr|`.
    pub fn adapted_norm(&self, curvature: f64) -> f64 {
        curvature * self.dr.abs() + self.dphi.abs()
    }

    pub fn norm(&self, curvature: f64) -> f64 {
        match self.metric {
            Metric::Euclid => self.euclid_norm(),
            Metric::Adapted => self.adapted_norm(curvature),
        }
    }

    pub fn apply(&self, m: &Mat2) -> Self {
        Self {
            dr: m[0][0] * self.dr + m[0][1] * self.dphi,
            dphi: m[1][0] * self.dr + m[1][1] * self.dphi,
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionStep {
    pub from: PhasePoint,
    pub to: PhasePoint,
    pub tau: f64,
    /// Differential of the step at `from`.
    pub dt: Mat2,
    /// `cos(phi)` at arrival.
    pub grazing_margin: f64,
    /// Lattice cell of the target scatterer relative to the source.
    pub offset: [i32; 2],
}

pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn conj_reflect(m: &Mat2) -> Mat2 {
    [[m[0][0], -m[0][1]], [-m[1][0], m[1][1]]]
}

/// Image slope of `V` under `m`.
pub fn push_slope(m: &Mat2, v: f64) -> f64 {
    (m[1][0] + m[1][1] * v) / (m[0][0] + m[0][1] * v)
}

/// Preimage slope of `V1` under `m`.
pub fn pull_slope(m: &Mat2, v1: f64) -> f64 {
    (m[1][0] - m[0][0] * v1) / (m[0][1] * v1 - m[1][1])
}

/// Differential of a collision step between circles.
pub fn differential(cos_phi: f64, cos_phi1: f64, tau: f64, k: f64, k1: f64) -> Mat2 {
    let (c, c1) = (cos_phi, cos_phi1);
    [
        [-(c + tau * k) / c1, -tau / c1],
        [-(tau * k * k1 + k * c1 + k1 * c) / c1, -(tau * k1 + c1) / c1],
    ]
}

/// Slope interval of the unstable cone.
pub fn unstable_cone(table: &TableGeometry) -> (f64, f64) {
    let d = table.derived();
    (d.k_min, d.k_max + 1.0 / d.tau_min)
}

/// Slope interval of the stable cone.
pub fn stable_cone(table: &TableGeometry) -> (f64, f64) {
    let (lo, hi) = unstable_cone(table);
    (-hi, -lo)
}

fn outgoing(table: &TableGeometry, x: &PhasePoint) -> ([f64; 2], [f64; 2]) {
    let rho = table.disks()[x.scatterer].radius;
    let a = x.r / rho;
    let n = [a.cos(), a.sin()];
    let t = [-n[1], n[0]];
    let (s, c) = x.phi.sin_cos();
    let c = c.max(0.0);
    ([rho * n[0], rho * n[1]], [c * n[0] + s * t[0], c * n[1] + s * t[1]])
}

fn check_point(table: &TableGeometry, x: &PhasePoint) -> Result<(), MapError> {
    if x.scatterer >= table.scatterer_count() {
        return Err(MapError::InvalidScatterer(x.scatterer));
    }
    let c = x.phi.cos();
    if !(x.phi.abs() <= FRAC_PI_2) || c < table.tol_tangent {
        return Err(MapError::NearTangential { cos_phi: c.max(0.0) });
    }
    Ok(())
}

/// One application of `T`.
pub fn step(table: &TableGeometry, x: &PhasePoint) -> Result<CollisionStep, MapError> {
    check_point(table, x)?;
    step_unchecked(table, x)
}

/// `T` without the tangency guard; used to trace tangential rays.
pub(crate) fn step_unchecked(table: &TableGeometry, x: &PhasePoint) -> Result<CollisionStep, MapError> {
    if x.scatterer >= table.scatterer_count() {
        return Err(MapError::InvalidScatterer(x.scatterer));
    }
    let (p, v) = outgoing(table, x);
    let cands = table.candidates(x.scatterer);
    let (idx, tau) = first_hit(cands, p, v).ok_or(MapError::HorizonViolation { bound: table.horizon_bound })?;
    let cand = &cands[idx];
    let rho1 = cand.radius;
    let w = [p[0] + tau * v[0] - cand.rel_center[0], p[1] + tau * v[1] - cand.rel_center[1]];
    let wn = w[0].hypot(w[1]);
    let n1 = [w[0] / wn, w[1] / wn];
    let t1 = [-n1[1], n1[0]];
    // cos(phi1) from the discriminant is accurate near tangency.
    let w0 = [p[0] - cand.rel_center[0], p[1] - cand.rel_center[1]];
    let b = v[0] * w0[0] + v[1] * w0[1];
    let disc = (b * b - (w0[0] * w0[0] + w0[1] * w0[1] - rho1 * rho1)).max(0.0);
    let c1 = (disc.sqrt() / rho1).min(1.0);
    let s1 = v[0] * t1[0] + v[1] * t1[1];
    let phi1 = s1.atan2(c1);
    let r1 = table.reduce_r(cand.target, rho1 * n1[1].atan2(n1[0]));
    let to = PhasePoint { scatterer: cand.target, r: r1, phi: phi1, cos_phi: c1 };
    let k = table.curvature(x.scatterer);
    let k1 = table.curvature(cand.target);
    let from = PhasePoint { cos_phi: x.phi.cos().max(0.0), ..*x };
    Ok(CollisionStep {
        from,
        to,
        tau,
        dt: differential(from.cos_phi, c1, tau, k, k1),
        grazing_margin: c1,
        offset: cand.offset,
    })
}

/// One application of `T^{-1}`, computed as `iota T iota`.
pub fn step_inverse(table: &TableGeometry, x: &PhasePoint) -> Result<CollisionStep, MapError> {
    let s = step(table, &x.reflect())?;
    Ok(CollisionStep {
        from: s.from.reflect(),
        to: s.to.reflect(),
        tau: s.tau,
        dt: conj_reflect(&s.dt),
        grazing_margin: s.grazing_margin,
        offset: s.offset,
    })
}

/// Iterates `T` (or `T^{-1}` for negative `n`).
pub fn iterate(table: &TableGeometry, x: &PhasePoint, n: i64) -> Result<PhasePoint, MapError> {
    let mut y = *x;
    for _ in 0..n.unsigned_abs() {
        y = if n > 0 { step(table, &y)?.to } else { step_inverse(table, &y)?.to };
    }
    Ok(y)
}

/// Cone-iteration defaults.
pub const DEFAULT_DEPTH: usize = 60;
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub vector: TangentVector,
    pub slope: f64,
    /// Angular width of the certified bracket around the true direction.
    pub error: f64,
    pub depth: usize,
}

fn bracket_angle(a: f64, b: f64) -> f64 {
    (a.atan() - b.atan()).abs()
}

/// Pulls the stable-cone endpoints back along `dts` (which must start at the point of interest).
fn pull_bracket(dts: &[Mat2], cone: (f64, f64)) -> (f64, f64) {
    let (mut lo, mut hi) = cone;
    for m in dts.iter().rev() {
        lo = pull_slope(m, lo);
        hi = pull_slope(m, hi);
    }
    (lo, hi)
}

/// Stable direction at `x` from pulling back the stable cone along the forward orbit.
pub fn stable_direction(table: &TableGeometry, x: &PhasePoint, depth: usize, tol: f64) -> Result<Direction, MapError> {
    cone_direction(table, x, depth, tol, true)
}

/// Unstable direction at `x` from pushing the unstable cone forward along the backward orbit.
pub fn unstable_direction(table: &TableGeometry, x: &PhasePoint, depth: usize, tol: f64) -> Result<Direction, MapError> {
    cone_direction(table, x, depth, tol, false)
}

fn cone_direction(table: &TableGeometry, x: &PhasePoint, depth: usize, tol: f64, stable: bool) -> Result<Direction, MapError> {
    check_point(table, x)?;
    // For the unstable case, D(T^{-1}) matrices are pulled back in the same way:
    // the preimage slope under D(T^{-1}) is the image slope under DT.
    let cone = if stable { stable_cone(table) } else { unstable_cone(table) };
    let mut dts: Vec<Mat2> = Vec::with_capacity(depth);
    let mut y = *x;
    let mut best = (f64::NAN, f64::INFINITY);
    for m in 1..=depth.max(1) {
        let s = match if stable { step(table, &y) } else { step_inverse(table, &y) } {
            Ok(s) => s,
            Err(MapError::NearTangential { .. }) if m > 1 => {
                return Err(MapError::InsufficientDepth { achieved: m - 1, accuracy: best.1 });
            }
            Err(e) => return Err(e),
        };
        dts.push(s.dt);
        y = s.to;
        let (lo, hi) = pull_bracket(&dts, cone);
        let width = bracket_angle(lo, hi);
        best = (0.5 * (lo.atan() + hi.atan()), width);
        if width < tol {
            let slope = best.0.tan();
            return Ok(Direction { vector: TangentVector::from_slope(slope), slope, error: width, depth: m });
        }
    }
    Err(MapError::InsufficientDepth { achieved: depth, accuracy: best.1 })
}

/// One-step stable Jacobian in the Euclidean `(r, phi)` metric, given the stable
/// slopes at both ends of the step.
pub fn stable_factor(s: &CollisionStep, table: &TableGeometry, v: f64, v1: f64) -> f64 {
    let k1 = table.curvature(s.to.scatterer);
    let dr = s.from.cos_phi / (s.to.cos_phi + s.tau * (k1 - v1));
    dr * ((1.0 + v1 * v1) / (1.0 + v * v)).sqrt()
}

/// One-step unstable Jacobian in the Euclidean `(r, phi)` metric.
pub fn unstable_factor(s: &CollisionStep, table: &TableGeometry, u: f64, u1: f64) -> f64 {
    let k = table.curvature(s.from.scatterer);
    let dr = (s.from.cos_phi + s.tau * (k + u)) / s.to.cos_phi;
    dr * ((1.0 + u1 * u1) / (1.0 + u * u)).sqrt()
}

/// Forward orbit segment with stable slopes at every point.
#[derive(Debug, Clone, PartialEq)]
pub struct StableOrbit {
    pub steps: Vec<CollisionStep>,
    /// Stable slopes at `x_0 .. x_n`.
    pub slopes: Vec<f64>,
    /// `log JˢT(x_j)` for `j < n`.
    pub log_js: Vec<f64>,
    /// Bracket width of the slope at `x_n`; slopes further back are sharper.
    pub error: f64,
}

impl StableOrbit {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn log_js_sum(&self) -> f64 {
        self.log_js.iter().sum()
    }

    pub fn point(&self, j: usize) -> PhasePoint {
        if j < self.steps.len() {
            self.steps[j].from
        } else {
            self.steps[j - 1].to
        }
    }
}

/// Computes `n` forward steps from `x` plus enough look-ahead to pin the stable
/// slope at `x_n` to within `tol`.
pub fn stable_orbit(table: &TableGeometry, x: &PhasePoint, n: usize, depth: usize, tol: f64) -> Result<StableOrbit, MapError> {
    let mut steps = Vec::with_capacity(n + 16);
    let mut y = *x;
    for _ in 0..n {
        let s = step(table, &y)?;
        y = s.to;
        steps.push(s);
    }
    let cone = stable_cone(table);
    let mut ahead: Vec<Mat2> = Vec::new();
    let mut bracket = cone;
    let mut width = f64::INFINITY;
    for m in 1..=depth.max(1) {
        match step(table, &y) {
            Ok(s) => {
                ahead.push(s.dt);
                y = s.to;
            }
            Err(MapError::NearTangential { .. }) => break,
            Err(e) => return Err(e),
        }
        // Only check convergence occasionally; every check costs a full sweep.
        if m % 4 == 0 || m == depth {
            bracket = pull_bracket(&ahead, cone);
            width = bracket_angle(bracket.0, bracket.1);
            if width < tol {
                break;
            }
        }
    }
    if width >= tol {
        bracket = pull_bracket(&ahead, cone);
        width = bracket_angle(bracket.0, bracket.1);
        if width >= tol {
            return Err(MapError::InsufficientDepth { achieved: ahead.len(), accuracy: width });
        }
    }
    let mut slopes = vec![0.0; n + 1];
    let (mut lo, mut hi) = bracket;
    slopes[n] = 0.5 * (lo + hi);
    for j in (0..n).rev() {
        lo = pull_slope(&steps[j].dt, lo);
        hi = pull_slope(&steps[j].dt, hi);
        slopes[j] = 0.5 * (lo + hi);
    }
    let log_js = (0..n).map(|j| stable_factor(&steps[j], table, slopes[j], slopes[j + 1]).ln()).collect();
    Ok(StableOrbit { steps, slopes, log_js, error: width })
}

/// Forward orbit segment with unstable slopes at every point.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstableOrbit {
    pub steps: Vec<CollisionStep>,
    pub slopes: Vec<f64>,
    pub log_ju: Vec<f64>,
    /// Bracket width of the slope at `x_0`.
    pub error: f64,
}

/// Computes `n` forward steps from `x` with unstable slopes seeded from the
/// backward orbit.
pub fn unstable_orbit(table: &TableGeometry, x: &PhasePoint, n: usize, depth: usize, tol: f64) -> Result<UnstableOrbit, MapError> {
    let u0 = unstable_direction(table, x, depth, tol)?;
    let mut steps = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n + 1);
    slopes.push(u0.slope);
    let mut y = *x;
    for _ in 0..n {
        let s = step(table, &y)?;
        y = s.to;
        slopes.push(push_slope(&s.dt, *slopes.last().unwrap()));
        steps.push(s);
    }
    let log_ju = (0..n).map(|j| unstable_factor(&steps[j], table, slopes[j], slopes[j + 1]).ln()).collect();
    Ok(UnstableOrbit { steps, slopes, log_ju, error: u0.error })
}

/// `JˢTⁿ(x)` in the Euclidean metric.
pub fn stable_jacobian(table: &TableGeometry, x: &PhasePoint, n: usize) -> Result<f64, MapError> {
    Ok(stable_orbit(table, x, n, DEFAULT_DEPTH, DEFAULT_TOL)?.log_js_sum().exp())
}

/// `JᵘTⁿ(x)` in the Euclidean metric.
pub fn unstable_jacobian(table: &TableGeometry, x: &PhasePoint, n: usize) -> Result<f64, MapError> {
    Ok(unstable_orbit(table, x, n, DEFAULT_DEPTH, DEFAULT_TOL)?.log_ju.iter().sum::<f64>().exp())
}

/// `sin` of the angle between the lines of slopes `u` and `v`.
pub fn transversality(u: f64, v: f64) -> f64 {
    (u - v).abs() / ((1.0 + u * u).sqrt() * (1.0 + v * v).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub scatterer_id: usize,
    pub r: f64,
    pub phi: f64,
    pub tau: f64,
    pub log_js: f64,
    pub log_ju: f64,
}

/// Orbit of length `n` with per-step flight lengths and Jacobians.
pub fn trajectory(table: &TableGeometry, x: &PhasePoint, n: usize) -> Result<Vec<TrajectoryRow>, MapError> {
    let so = stable_orbit(table, x, n, DEFAULT_DEPTH, DEFAULT_TOL)?;
    let uo = unstable_orbit(table, x, n, DEFAULT_DEPTH, DEFAULT_TOL)?;
    Ok((0..n)
        .map(|j| {
            let p = so.steps[j].from;
            TrajectoryRow {
                step: j,
                scatterer_id: p.scatterer,
                r: p.r,
                phi: p.phi,
                tau: so.steps[j].tau,
                log_js: so.log_js[j],
                log_ju: uo.log_ju[j],
            }
        })
        .collect())
}

pub fn write_trajectory_csv<W: Write>(mut out: W, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    writeln!(out, "step,scatterer_id,r,phi,tau,log_Js,log_Ju")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            row.step, row.scatterer_id, row.r, row.phi, row.tau, row.log_js, row.log_ju
        )?;
    }
    Ok(())
}
