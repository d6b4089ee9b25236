//! Homogeneity strips, symbolic itineraries, and polyline approximations of
//! the singularity curves `T^i S₀`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::billiard_map::{step, step_inverse, step_unchecked, CollisionStep, PhasePoint};
use crate::error::{MapError, SingularityError};
use crate::geometry::TableGeometry;

/// Largest supported `|n|` for singular curve sets.
pub const MAX_CURVE_LEVEL: i32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripParams {
    pub q: f64,
    pub k0: u32,
}

impl StripParams {
    pub fn of(table: &TableGeometry) -> Self {
        Self { q: table.q, k0: table.k0 }
    }

    /// Distance to tangency at which strip `k` starts (its wide end).
    pub fn upper(&self, k: u32) -> f64 {
        (k as f64).powf(-self.q)
    }
}

/// Strip index of a point at distance `d = π/2 - |φ|` from tangency, unsigned.
///
/// Strip `k >= k0` is the half-open band `(k+1)^{-q} <= d < k^{-q}`; everything
/// at `d >= k0^{-q}` is strip 0. Exact tangency returns `u32::MAX`.
pub fn strip_of_distance(d: f64, p: &StripParams) -> u32 {
    if d >= p.upper(p.k0) {
        return 0;
    }
    if d <= 0.0 {
        return u32::MAX;
    }
    let guess = d.powf(-1.0 / p.q).floor();
    if guess >= u32::MAX as f64 / 2.0 {
        return u32::MAX - 1;
    }
    let mut k = (guess as u32).max(p.k0);
    while p.upper(k + 1) > d {
        k += 1;
    }
    while k > p.k0 && p.upper(k) <= d {
        k -= 1;
    }
    k
}

/// Signed strip index: `0`, or `±k` with `k >= k0` and the sign of `phi`.
pub fn strip_index(table: &TableGeometry, x: &PhasePoint) -> i64 {
    signed_strip(x.phi, &StripParams::of(table))
}

pub fn signed_strip(phi: f64, p: &StripParams) -> i64 {
    let k = strip_of_distance(FRAC_PI_2 - phi.abs(), p) as i64;
    if phi < 0.0 {
        -k
    } else {
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub scatterer: usize,
    /// `None` when strips are not tracked.
    pub strip: Option<i64>,
    /// Scatterer and lattice cell hit next.
    pub target: usize,
    pub offset: [i32; 2],
}

impl Symbol {
    pub fn of_step(s: &CollisionStep, strips: Option<&StripParams>) -> Self {
        Self {
            scatterer: s.from.scatterer,
            strip: strips.map(|p| signed_strip(s.from.phi, p)),
            target: s.to.scatterer,
            offset: s.offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Itinerary {
    pub symbols: Vec<Symbol>,
    pub direction: TimeDirection,
}

impl Itinerary {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn is_prefix_of(&self, other: &Itinerary) -> bool {
        self.direction == other.direction && other.symbols.starts_with(&self.symbols)
    }
}

/// Symbols of `T^j x` (forward) or `T^{-j} x` (backward) for `j < n`.
pub fn itinerary(
    table: &TableGeometry,
    x: &PhasePoint,
    n: usize,
    direction: TimeDirection,
    with_strips: bool,
) -> Result<Itinerary, SingularityError> {
    let strips = with_strips.then(|| StripParams::of(table));
    let mut symbols = Vec::with_capacity(n);
    let mut y = *x;
    for j in 0..n {
        let s = match direction {
            TimeDirection::Forward => step(table, &y),
            TimeDirection::Backward => step_inverse(table, &y),
        };
        let s = match s {
            Ok(s) => s,
            Err(MapError::NearTangential { .. }) => return Err(SingularityError::Truncated { achieved: j }),
            Err(e) => return Err(e.into()),
        };
        symbols.push(Symbol::of_step(&s, strips.as_ref()));
        y = s.to;
    }
    Ok(Itinerary { symbols, direction })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCount {
    pub symbols: Vec<Symbol>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItineraryHistogram {
    pub n: usize,
    /// Number of distinct itineraries.
    pub count: usize,
    pub samples: usize,
    pub truncated: usize,
    pub top_classes: Vec<ClassCount>,
}

/// Counts forward itineraries of length `n` over `points`.
pub fn itinerary_histogram(
    table: &TableGeometry,
    points: &[PhasePoint],
    n: usize,
    with_strips: bool,
    top: usize,
) -> ItineraryHistogram {
    let mut counts: HashMap<Vec<Symbol>, usize> = HashMap::new();
    let mut truncated = 0;
    for x in points {
        match itinerary(table, x, n, TimeDirection::Forward, with_strips) {
            Ok(it) => *counts.entry(it.symbols).or_default() += 1,
            Err(_) => truncated += 1,
        }
    }
    let mut classes: Vec<ClassCount> =
        counts.into_iter().map(|(symbols, count)| ClassCount { symbols, count }).collect();
    classes.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.symbols.cmp(&b.symbols)));
    let count = classes.len();
    classes.truncate(top);
    ItineraryHistogram { n, count, samples: points.len(), truncated, top_classes: classes }
}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.scatterer, self.strip, self.target, self.offset).cmp(&(other.scatterer, other.strip, other.target, other.offset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub scatterer: usize,
    /// The polyline lies on `T^iterate S₀`.
    pub iterate: i32,
    pub branch_id: usize,
    /// `(r, phi)` vertices. `r` is unwrapped so that each branch is continuous,
    /// and may leave `[0, perimeter)`.
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularCurveSet {
    pub level: i32,
    pub resolution: f64,
    pub polylines: Vec<Polyline>,
    /// False when the vertex budget ran out before the resolution was reached.
    pub complete: bool,
}

impl SingularCurveSet {
    pub fn vertex_count(&self) -> usize {
        self.polylines.iter().map(|p| p.vertices.len()).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "level,branch_id,r,phi")?;
        for p in &self.polylines {
            for v in &p.vertices {
                writeln!(out, "{},{},{:.17e},{:.17e}", p.iterate, p.branch_id, v[0], v[1])?;
            }
        }
        Ok(())
    }
}

/// Tuning for the curve tracer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub resolution: f64,
    pub vertex_budget: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { resolution: 2e-3, vertex_budget: 4_000_000 }
    }
}

/// `S_n`: the union of `S₀` and `T^{-i} S₀` for `1 <= i <= n` (or `T^{i} S₀` for negative `n`).
pub fn singularity_curves(table: &TableGeometry, n: i32) -> Result<SingularCurveSet, SingularityError> {
    singularity_curves_with(table, n, CurveOptions::default())
}

pub fn singularity_curves_with(
    table: &TableGeometry,
    n: i32,
    opts: CurveOptions,
) -> Result<SingularCurveSet, SingularityError> {
    if n.abs() > MAX_CURVE_LEVEL {
        return Err(SingularityError::Level(n));
    }
    let mut polylines = Vec::new();
    let mut branch = 0;
    for s in 0..table.scatterer_count() {
        let p = table.perimeter(s);
        let m = (p / opts.resolution).ceil().max(2.0) as usize;
        for sign in [-1.0, 1.0] {
            let vertices = (0..=m).map(|i| [p * i as f64 / m as f64, sign * FRAC_PI_2]).collect();
            polylines.push(Polyline { scatterer: s, iterate: 0, branch_id: branch, vertices });
            branch += 1;
        }
    }
    let mut complete = true;
    let mut budget = opts.vertex_budget;
    for i in 1..=n.unsigned_abs() as usize {
        for s in 0..table.scatterer_count() {
            for sign in [-1.0, 1.0] {
                let traced = trace_image(table, s, sign, i, opts.resolution, &mut budget);
                complete &= traced.1;
                for (target, vertices) in traced.0 {
                    let vertices = if n > 0 {
                        vertices.into_iter().map(|v| [v[0], -v[1]]).collect()
                    } else {
                        vertices
                    };
                    let iterate = if n > 0 { -(i as i32) } else { i as i32 };
                    polylines.push(Polyline { scatterer: target, iterate, branch_id: branch, vertices });
                    branch += 1;
                }
            }
        }
    }
    Ok(SingularCurveSet { level: n, resolution: opts.resolution, polylines, complete })
}

#[derive(Clone, Copy)]
struct Sample {
    u: f64,
    label: u64,
    image: Option<PhasePoint>,
}

/// Image of the tangential point `(s, u, sign·π/2)` under `T^i`, labelled by the
/// sequence of lifts visited. Points whose orbit turns tangential carry no image.
fn tangent_image(table: &TableGeometry, s: usize, u: f64, sign: f64, i: usize) -> Sample {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let mut y = PhasePoint::new(s, u, sign * FRAC_PI_2);
    for k in 0..i {
        let st = if k == 0 { step_unchecked(table, &y) } else { step(table, &y) };
        match st {
            Ok(st) => {
                (st.to.scatterer, st.offset).hash(&mut h);
                y = st.to;
            }
            Err(_) => {
                (u64::MAX, k).hash(&mut h);
                return Sample { u, label: h.finish(), image: None };
            }
        }
    }
    Sample { u, label: h.finish(), image: Some(y) }
}

fn image_gap(table: &TableGeometry, a: &PhasePoint, b: &PhasePoint) -> f64 {
    let p = table.perimeter(a.scatterer);
    let mut dr = (a.r - b.r).rem_euclid(p);
    if dr > p / 2.0 {
        dr -= p;
    }
    dr.hypot(a.phi - b.phi)
}

/// Traces `T^i` of one tangential line, returning continuous branches as
/// `(target scatterer, vertices)` and whether the budget sufficed.
fn trace_image(
    table: &TableGeometry,
    s: usize,
    sign: f64,
    i: usize,
    resolution: f64,
    budget: &mut usize,
) -> (Vec<(usize, Vec<[f64; 2]>)>, bool) {
    let p = table.perimeter(s);
    let n0 = ((p / resolution).ceil() as usize).max(8192);
    let min_du = p * 1e-15;
    let coarse: Vec<Sample> = (0..=n0).map(|k| tangent_image(table, s, p * k as f64 / n0 as f64, sign, i)).collect();
    let mut refined: Vec<Sample> = Vec::with_capacity(coarse.len() * 2);
    let mut complete = true;
    for w in coarse.windows(2) {
        refined.push(w[0]);
        // Depth-first subdivision keeps `refined` sorted in u.
        let mut stack = vec![(w[0], w[1])];
        while let Some((a, b)) = stack.pop() {
            let split = if a.label != b.label {
                b.u - a.u > min_du
            } else {
                match (a.image, b.image) {
                    (Some(x), Some(y)) => image_gap(table, &x, &y) > resolution && b.u - a.u > min_du,
                    _ => false,
                }
            };
            if !split {
                continue;
            }
            if *budget == 0 {
                complete = false;
                continue;
            }
            *budget -= 1;
            let m = tangent_image(table, s, 0.5 * (a.u + b.u), sign, i);
            // Push the right half first so the left half is processed next.
            stack.push((m, b));
            stack.push((a, m));
            refined.push(m);
        }
    }
    refined.push(*coarse.last().unwrap());
    refined.sort_by(|a, b| a.u.total_cmp(&b.u));

    let mut branches = Vec::new();
    let mut current: Vec<[f64; 2]> = Vec::new();
    let mut current_label = None;
    let mut target = 0;
    let flush = |current: &mut Vec<[f64; 2]>, target: usize, branches: &mut Vec<(usize, Vec<[f64; 2]>)>| {
        if current.len() >= 2 {
            branches.push((target, std::mem::take(current)));
        } else {
            current.clear();
        }
    };
    for smp in &refined {
        let Some(img) = smp.image else {
            flush(&mut current, target, &mut branches);
            current_label = None;
            continue;
        };
        if current_label != Some(smp.label) {
            flush(&mut current, target, &mut branches);
            current_label = Some(smp.label);
            target = img.scatterer;
        }
        let mut r = img.r;
        if let Some(last) = current.last() {
            let q = table.perimeter(target);
            r += ((last[0] - r) / q).round() * q;
        }
        if current.last().map_or(true, |l| l[0] != r || l[1] != img.phi) {
            current.push([r, img.phi]);
        }
    }
    flush(&mut current, target, &mut branches);
    (branches, complete)
}

/// Bucketed segment index for distance queries in `(r, φ)`.
#[derive(Debug, Clone)]
pub struct SingularityIndex {
    perimeters: Vec<f64>,
    /// Cell size in φ; cells in r divide each perimeter exactly.
    cell: f64,
    /// Per scatterer: r cell size, grid dimensions and bucket contents.
    grids: Vec<(f64, usize, usize, Vec<Vec<u32>>)>,
    segments: Vec<(usize, [f64; 2], [f64; 2])>,
    include_s0: bool,
    resolution: f64,
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    q[0].hypot(q[1])
}

impl SingularityIndex {
    /// Indexes every non-`S₀` polyline of the given sets; `S₀` is handled analytically.
    pub fn new(table: &TableGeometry, sets: &[&SingularCurveSet], include_s0: bool) -> Self {
        let perimeters: Vec<f64> = (0..table.scatterer_count()).map(|s| table.perimeter(s)).collect();
        let resolution = sets.iter().map(|s| s.resolution).fold(0.0, f64::max);
        let cell = (4.0 * resolution).max(0.01);
        let mut grids: Vec<(f64, usize, usize, Vec<Vec<u32>>)> = perimeters
            .iter()
            .map(|p| {
                let nr = (p / cell).ceil() as usize;
                let np = (std::f64::consts::PI / cell).ceil() as usize + 1;
                (p / nr as f64, nr, np, vec![Vec::new(); nr * np])
            })
            .collect();
        let mut segments = Vec::new();
        for set in sets {
            for pl in set.polylines.iter().filter(|p| p.iterate != 0) {
                let per = perimeters[pl.scatterer];
                for w in pl.vertices.windows(2) {
                    let shift = (w[0][0] / per).floor() * per;
                    let a = [w[0][0] - shift, w[0][1]];
                    let b = [w[1][0] - shift, w[1][1]];
                    let id = segments.len() as u32;
                    segments.push((pl.scatterer, a, b));
                    let (cr, nr, np, buckets) = &mut grids[pl.scatterer];
                    let r0 = (a[0].min(b[0]) / *cr).floor() as i64;
                    let r1 = (a[0].max(b[0]) / *cr).floor() as i64;
                    let p0 = ((a[1].min(b[1]) + FRAC_PI_2) / cell).floor().max(0.0) as usize;
                    let p1 = (((a[1].max(b[1]) + FRAC_PI_2) / cell).floor() as usize).min(*np - 1);
                    for ri in r0..=r1 {
                        let ri = ri.rem_euclid(*nr as i64) as usize;
                        for pi in p0..=p1 {
                            buckets[ri * *np + pi].push(id);
                        }
                    }
                }
            }
        }
        Self { perimeters, cell, grids, segments, include_s0, resolution }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Euclidean `(r, φ)` distance from `x` to the indexed curves (and `S₀` if included).
    pub fn distance(&self, x: &PhasePoint) -> f64 {
        let mut best = if self.include_s0 { FRAC_PI_2 - x.phi.abs() } else { f64::INFINITY };
        if self.segments.is_empty() {
            return best;
        }
        let s = x.scatterer;
        let per = self.perimeters[s];
        let (cr, nr, np, buckets) = &self.grids[s];
        let r = x.r.rem_euclid(per);
        let ci = (r / cr).floor() as i64;
        let cj = ((x.phi + FRAC_PI_2) / self.cell).floor() as i64;
        let max_ring = (*nr).max(*np) as i64;
        let mut seen = std::collections::HashSet::new();
        for ring in 0..=max_ring {
            // Anything in ring k is at least (k-1)·cell away.
            if (ring - 1) as f64 * cr.min(self.cell) > best {
                break;
            }
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    if di.abs() != ring && dj.abs() != ring {
                        continue;
                    }
                    let pj = cj + dj;
                    if pj < 0 || pj >= *np as i64 {
                        continue;
                    }
                    let pi = (ci + di).rem_euclid(*nr as i64) as usize;
                    for &id in &buckets[pi * np + pj as usize] {
                        if !seen.insert(id) {
                            continue;
                        }
                        let (_, a, b) = self.segments[id as usize];
                        for shift in [-per, 0.0, per] {
                            best = best.min(point_segment_distance([r + shift, x.phi], a, b));
                        }
                    }
                }
            }
            if 2 * ring + 1 >= *nr as i64 && 2 * ring + 1 >= *np as i64 {
                break;
            }
        }
        best
    }
}

/// Distance from `x` to `S₀ ∪ S_{level}` using a freshly built curve set.
pub fn distance_to_singularity(table: &TableGeometry, x: &PhasePoint, level: i32) -> Result<f64, SingularityError> {
    let set = singularity_curves(table, level)?;
    Ok(SingularityIndex::new(table, &[&set], true).distance(x))
}
