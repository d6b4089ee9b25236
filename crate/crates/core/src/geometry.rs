//! Billiard tables on the unit torus with circular scatterers.
//!
//! A table is a finite list of disjoint closed disks on `[0,1)^2` with periodic
//! boundary conditions. Boundary points are addressed by `(scatterer, r)`, where
//! `r` is counterclockwise arclength measured from the point at angle 0 from the
//! disk center. Normals point out of the disk, i.e. into the billiard domain.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Default cap on free-flight length used by the lattice search.
pub const DEFAULT_HORIZON_BOUND: f64 = 4.0;

/// Default refusal threshold on `cos(phi)` for near-tangential collisions.
pub const DEFAULT_TOL_TANGENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disk {
    pub fn perimeter(&self) -> f64 {
        TAU * self.radius
    }

    pub fn curvature(&self) -> f64 {
        1.0 / self.radius
    }
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON_BOUND
}

/// On-disk table description.
///
/// ```json
/// { "disks": [{"center": [0.0, 0.0], "radius": 0.4}], "q": 3, "k0": 3, "delta0": 0.05 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub disks: Vec<Disk>,
    pub q: f64,
    pub k0: u32,
    pub delta0: f64,
    #[serde(default = "default_horizon")]
    pub horizon_bound: f64,
}

impl TableConfig {
    /// Two disks of radii 0.4 and 0.2 at `(0,0)` and `(0.5,0.5)`.
    ///
    /// The big disk alone blocks every rational direction except the two axes,
    /// where the pair overlaps in projection, so the horizon is finite.
    pub fn default_table() -> Self {
        Self {
            disks: vec![
                Disk { center: [0.0, 0.0], radius: 0.4 },
                Disk { center: [0.5, 0.5], radius: 0.2 },
            ],
            q: 3.0,
            k0: 3,
            delta0: 0.05,
            horizon_bound: DEFAULT_HORIZON_BOUND,
        }
    }

    /// Two disks of radius 1/4 at `(0,0)` and `(0.5,0.5)`.
    ///
    /// This table has an open corridor along the diagonal (both centers project
    /// to the same point), so its horizon is infinite.
    pub fn two_quarter_disks() -> Self {
        Self {
            disks: vec![
                Disk { center: [0.0, 0.0], radius: 0.25 },
                Disk { center: [0.5, 0.5], radius: 0.25 },
            ],
            ..Self::default_table()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        serde_json::from_str(text).map_err(|e| GeometryError::Config(e.to_string()))
    }
}

/// Constants derived from the table layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// Minimum boundary gap between distinct disk lifts; lower bound for every flight.
    pub tau_min: f64,
    /// Longest flight observed by the last validation, `None` before validation.
    pub tau_max: Option<f64>,
    pub k_min: f64,
    pub k_max: f64,
    /// `1 + 2 tau_min K_min`.
    pub lambda: f64,
    /// Total boundary length `|∂Q|`.
    pub boundary_length: f64,
}

/// A lifted copy of a disk reachable from a source disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub target: usize,
    pub offset: [i32; 2],
    /// Center of the lift relative to the source center.
    pub rel_center: [f64; 2],
    pub radius: f64,
    /// Lower bound on the flight length from the source boundary to this lift.
    pub min_flight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableGeometry {
    disks: Vec<Disk>,
    pub q: f64,
    pub k0: u32,
    pub delta0: f64,
    pub horizon_bound: f64,
    pub tol_tangent: f64,
    derived: DerivedConstants,
    finite_horizon: bool,
    candidates: Vec<Vec<Candidate>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub scatterer: usize,
    pub r: f64,
    /// Position reduced to `[0,1)^2`.
    pub position: [f64; 2],
    pub inward_normal: [f64; 2],
    pub curvature: f64,
}

fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

impl TableGeometry {
    pub fn new(config: &TableConfig) -> Result<Self, GeometryError> {
        if config.disks.is_empty() {
            return Err(GeometryError::Config("table has no scatterers".into()));
        }
        for (i, d) in config.disks.iter().enumerate() {
            if !(d.radius > 0.0 && d.radius < 0.5) || !d.center.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::Config(format!("disk {i} has invalid radius or center")));
            }
        }
        if !(config.q > 1.0) {
            return Err(GeometryError::Config("q must exceed 1".into()));
        }
        if config.k0 < 1 {
            return Err(GeometryError::Config("k0 must be at least 1".into()));
        }
        if !(config.delta0 > 0.0 && config.delta0 < 1.0) {
            return Err(GeometryError::Config("delta0 must lie in (0,1)".into()));
        }
        if !(config.horizon_bound > 0.0) {
            return Err(GeometryError::Config("horizon_bound must be positive".into()));
        }
        let gaps = pairwise_gaps(&config.disks);
        let mut tau_min = f64::INFINITY;
        for (i, row) in gaps.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                if g <= 0.0 {
                    return Err(GeometryError::Overlap { first: i, second: j, gap: g });
                }
                tau_min = tau_min.min(g);
            }
        }
        let k_min = config.disks.iter().map(Disk::curvature).fold(f64::INFINITY, f64::min);
        let k_max = config.disks.iter().map(Disk::curvature).fold(0.0, f64::max);
        let boundary_length = config.disks.iter().map(Disk::perimeter).sum();
        let derived = DerivedConstants {
            tau_min,
            tau_max: None,
            k_min,
            k_max,
            lambda: 1.0 + 2.0 * tau_min * k_min,
            boundary_length,
        };
        let candidates = build_candidates(&config.disks, config.horizon_bound);
        Ok(Self {
            disks: config.disks.clone(),
            q: config.q,
            k0: config.k0,
            delta0: config.delta0,
            horizon_bound: config.horizon_bound,
            tol_tangent: DEFAULT_TOL_TANGENT,
            derived,
            finite_horizon: false,
            candidates,
        })
    }

    /// The default finite-horizon table, validated with a modest ray grid.
    pub fn default_validated() -> Self {
        let table = Self::new(&TableConfig::default_table()).expect("default table is valid");
        let report = validate_table(&table, 4096, DEFAULT_HORIZON_BOUND).expect("default table validates");
        table.with_validation(&report)
    }

    /// Records the validation verdict and the empirical `tau_max`.
    pub fn with_validation(mut self, report: &ValidationReport) -> Self {
        self.derived.tau_max = Some(report.tau_max);
        self.finite_horizon = report.finite_horizon;
        self
    }

    pub fn config(&self) -> TableConfig {
        TableConfig {
            disks: self.disks.clone(),
            q: self.q,
            k0: self.k0,
            delta0: self.delta0,
            horizon_bound: self.horizon_bound,
        }
    }

    pub fn disks(&self) -> &[Disk] {
        &self.disks
    }

    pub fn disk(&self, id: usize) -> Result<&Disk, GeometryError> {
        self.disks.get(id).ok_or(GeometryError::InvalidScatterer(id))
    }

    pub fn scatterer_count(&self) -> usize {
        self.disks.len()
    }

    pub fn derived(&self) -> &DerivedConstants {
        &self.derived
    }

    pub fn lambda(&self) -> f64 {
        self.derived.lambda
    }

    pub fn tau_min(&self) -> f64 {
        self.derived.tau_min
    }

    pub fn finite_horizon(&self) -> bool {
        self.finite_horizon
    }

    pub fn perimeter(&self, id: usize) -> f64 {
        self.disks[id].perimeter()
    }

    pub fn curvature(&self, id: usize) -> f64 {
        self.disks[id].curvature()
    }

    /// Phase space area `Σ |∂O_i| · π` in `(r, φ)` coordinates.
    pub fn phase_area(&self) -> f64 {
        self.derived.boundary_length * PI
    }

    pub(crate) fn candidates(&self, source: usize) -> &[Candidate] {
        &self.candidates[source]
    }

    /// Reduces `r` into `[0, perimeter)`.
    pub fn reduce_r(&self, id: usize, r: f64) -> f64 {
        let p = self.disks[id].perimeter();
        let w = r.rem_euclid(p);
        if w >= p {
            0.0
        } else {
            w
        }
    }
}

/// Boundary point of `scatterer_id` at arclength `r` (taken modulo the perimeter).
pub fn boundary_point(table: &TableGeometry, scatterer_id: usize, r: f64) -> Result<BoundaryPoint, GeometryError> {
    let disk = table.disk(scatterer_id)?;
    if !r.is_finite() {
        return Err(GeometryError::Config(format!("arclength {r} is not finite")));
    }
    let r = table.reduce_r(scatterer_id, r);
    let angle = r / disk.radius;
    let normal = [angle.cos(), angle.sin()];
    let position = [
        wrap_unit(disk.center[0] + disk.radius * normal[0]),
        wrap_unit(disk.center[1] + disk.radius * normal[1]),
    ];
    Ok(BoundaryPoint { scatterer: scatterer_id, r, position, inward_normal: normal, curvature: disk.curvature() })
}

/// Minimum boundary gap between each pair of disks over all lattice lifts.
/// The diagonal excludes the trivial lift of a disk onto itself.
pub fn pairwise_gaps(disks: &[Disk]) -> Vec<Vec<f64>> {
    let n = disks.len();
    let mut gaps = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in 0..n {
            for a in -2i32..=2 {
                for b in -2i32..=2 {
                    if i == j && a == 0 && b == 0 {
                        continue;
                    }
                    let d = [
                        disks[j].center[0] + a as f64 - disks[i].center[0],
                        disks[j].center[1] + b as f64 - disks[i].center[1],
                    ];
                    let g = norm2(d) - disks[i].radius - disks[j].radius;
                    gaps[i][j] = gaps[i][j].min(g);
                }
            }
        }
    }
    gaps
}

fn build_candidates(disks: &[Disk], horizon: f64) -> Vec<Vec<Candidate>> {
    let r_max = disks.iter().map(|d| d.radius).fold(0.0, f64::max);
    let reach = (horizon + 2.0 * r_max + 1.0).ceil() as i32;
    disks
        .iter()
        .enumerate()
        .map(|(s, src)| {
            let mut list = Vec::new();
            for (j, dst) in disks.iter().enumerate() {
                for a in -reach..=reach {
                    for b in -reach..=reach {
                        if j == s && a == 0 && b == 0 {
                            continue;
                        }
                        let rel = [
                            dst.center[0] + a as f64 - src.center[0],
                            dst.center[1] + b as f64 - src.center[1],
                        ];
                        let min_flight = norm2(rel) - src.radius - dst.radius;
                        if min_flight <= horizon {
                            list.push(Candidate {
                                target: j,
                                offset: [a, b],
                                rel_center: rel,
                                radius: dst.radius,
                                min_flight,
                            });
                        }
                    }
                }
            }
            // Spiral order; ties fall back to (scatterer, lattice cell).
            list.sort_by(|x, y| {
                x.min_flight
                    .total_cmp(&y.min_flight)
                    .then(x.target.cmp(&y.target))
                    .then(x.offset.cmp(&y.offset))
            });
            list
        })
        .collect()
}

/// A rational direction `(p, q)` together with the widest free strip along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorProbe {
    pub direction: [i32; 2],
    /// Width of the widest uncovered strip; negative values are the smallest overlap
    /// between neighbouring shadows (how far the direction is from opening up).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub gap_matrix: Vec<Vec<f64>>,
    pub tau_min: f64,
    pub tau_max: f64,
    pub rays_cast: usize,
    pub rays_escaped: usize,
    pub open_corridors: Vec<CorridorProbe>,
    /// The rational direction closest to carrying a free (or grazing) line.
    pub tightest_corridor: Option<CorridorProbe>,
    /// Directions whose shadows touch without overlapping: lines grazing scatterers forever.
    pub grazing_corridors: Vec<CorridorProbe>,
    pub finite_horizon: bool,
    /// Horizon bound that every sampled ray respected.
    pub horizon_certificate: f64,
    pub lambda: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub boundary_length: f64,
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Widest uncovered gap (or minus the tightest overlap) of the disk shadows on a
/// line orthogonal to the rational direction `(p, q)`.
fn corridor_margin(disks: &[Disk], p: i32, q: i32) -> f64 {
    let len = ((p * p + q * q) as f64).sqrt();
    let period = 1.0 / len;
    let normal = [-(q as f64) / len, p as f64 / len];
    let mut intervals: Vec<(f64, f64)> = disks
        .iter()
        .map(|d| {
            let c = (d.center[0] * normal[0] + d.center[1] * normal[1]).rem_euclid(period);
            (c - d.radius, c + d.radius)
        })
        .collect();
    if intervals.iter().any(|(a, b)| b - a >= period) {
        let widest = disks.iter().map(|d| 2.0 * d.radius).fold(0.0, f64::max);
        return -(widest - period);
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best_gap = f64::NEG_INFINITY;
    // Sweep around the circle of circumference `period`, merging shadows.
    let start = intervals[0].0;
    let mut reach = intervals[0].1;
    for &(a, b) in intervals.iter().skip(1) {
        best_gap = best_gap.max(a - reach);
        reach = reach.max(b);
    }
    best_gap.max(start + period - reach)
}

/// Samples rays from every scatterer boundary and enumerates rational corridors.
pub fn validate_table(
    table: &TableGeometry,
    direction_samples: usize,
    horizon_bound: f64,
) -> Result<ValidationReport, GeometryError> {
    if direction_samples < 1000 {
        return Err(GeometryError::Config(format!("direction_samples = {direction_samples} is below 1000")));
    }
    let disks = table.disks();
    let gaps = pairwise_gaps(disks);
    for (i, row) in gaps.iter().enumerate() {
        for (j, &g) in row.iter().enumerate() {
            if g <= 0.0 {
                return Err(GeometryError::Overlap { first: i, second: j, gap: g });
            }
        }
    }
    let tau_min = gaps.iter().flatten().copied().fold(f64::INFINITY, f64::min);

    // Rational directions with lattice spacing wider than the largest shadow.
    let r_max = disks.iter().map(|d| d.radius).fold(0.0, f64::max);
    let max_len = (1.0 / (2.0 * r_max)).ceil() as i32 + 1;
    let mut probes = Vec::new();
    for p in 0..=max_len {
        for q in -max_len..=max_len {
            if (p == 0 && q <= 0) || gcd(p, q) != 1 || p * p + q * q > max_len * max_len {
                continue;
            }
            probes.push(CorridorProbe { direction: [p, q], margin: corridor_margin(disks, p, q) });
        }
    }
    const GRAZE_TOL: f64 = 1e-12;
    let open_corridors: Vec<_> = probes.iter().copied().filter(|c| c.margin > GRAZE_TOL).collect();
    let grazing_corridors: Vec<_> = probes.iter().copied().filter(|c| c.margin.abs() <= GRAZE_TOL).collect();
    let tightest_corridor = probes.iter().copied().max_by(|a, b| a.margin.total_cmp(&b.margin));

    // Ray grid: boundary positions x outgoing angles, split evenly across scatterers.
    let search = build_candidates(disks, horizon_bound);
    let per_disk = direction_samples.div_ceil(disks.len()).max(1);
    let n_pos = (per_disk as f64).sqrt().ceil() as usize;
    let n_ang = per_disk.div_ceil(n_pos);
    let mut tau_max: f64 = 0.0;
    let mut escaped = 0usize;
    let mut cast = 0usize;
    for (s, disk) in disks.iter().enumerate() {
        for i in 0..n_pos {
            let alpha = TAU * (i as f64 + 0.5) / n_pos as f64;
            let n = [alpha.cos(), alpha.sin()];
            let t = [-n[1], n[0]];
            let p = [disk.radius * n[0], disk.radius * n[1]];
            for k in 0..n_ang {
                let phi = -PI / 2.0 + PI * (k as f64 + 0.5) / n_ang as f64;
                let v = [phi.cos() * n[0] + phi.sin() * t[0], phi.cos() * n[1] + phi.sin() * t[1]];
                cast += 1;
                match first_hit(&search[s], p, v) {
                    Some((_, tau)) => tau_max = tau_max.max(tau),
                    None => escaped += 1,
                }
            }
        }
    }
    // Lines grazing along a touching corridor never meet a scatterer transversally.
    let finite_horizon = open_corridors.is_empty() && escaped == 0;
    Ok(ValidationReport {
        gap_matrix: gaps,
        tau_min,
        tau_max,
        rays_cast: cast,
        rays_escaped: escaped,
        open_corridors,
        tightest_corridor,
        grazing_corridors,
        finite_horizon,
        horizon_certificate: if escaped == 0 { tau_max } else { horizon_bound },
        lambda: 1.0 + 2.0 * tau_min * table.derived().k_min,
        k_min: table.derived().k_min,
        k_max: table.derived().k_max,
        boundary_length: table.derived().boundary_length,
    })
}

/// Relative slack on the ray-circle discriminant below which a miss counts as grazing.
pub(crate) const GRAZE_EPS: f64 = 1e-13;

/// Closest forward intersection of the ray `p + s v` (relative to the source center)
/// with the candidate lifts. Returns the candidate index and flight length.
pub(crate) fn first_hit(candidates: &[Candidate], p: [f64; 2], v: [f64; 2]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, c) in candidates.iter().enumerate() {
        if let Some((_, tau)) = best {
            if c.min_flight > tau {
                break;
            }
        }
        let w = [p[0] - c.rel_center[0], p[1] - c.rel_center[1]];
        let b = v[0] * w[0] + v[1] * w[1];
        if b >= 0.0 {
            continue;
        }
        let cc = w[0] * w[0] + w[1] * w[1] - c.radius * c.radius;
        let mut disc = b * b - cc;
        if disc < 0.0 {
            // A miss within rounding of the circle is a tangential hit.
            if disc < -GRAZE_EPS * c.radius * c.radius {
                continue;
            }
            disc = 0.0;
        }
        let tau = cc / (-b + disc.sqrt());
        if tau <= 0.0 {
            continue;
        }
        match best {
            Some((_, bt)) if bt <= tau => {}
            _ => best = Some((idx, tau)),
        }
    }
    best
}
