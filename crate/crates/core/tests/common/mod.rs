//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use billiard_thermo::billiard_map::{step, Mat2, PhasePoint};
use billiard_thermo::geometry::TableGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn table() -> TableGeometry {
    TableGeometry::default_validated()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point with `sin(phi)` uniform, bounded away from tangency.
pub fn random_point(table: &TableGeometry, rng: &mut ChaCha8Rng) -> PhasePoint {
    let id = rng.random_range(0..table.scatterer_count());
    let r = rng.random_range(0.0..table.perimeter(id));
    let s: f64 = rng.random_range(-0.999..0.999);
    PhasePoint::new(id, r, s.asin())
}

/// Signed difference of arclengths on a circle of perimeter `p`.
pub fn arc_diff(a: f64, b: f64, p: f64) -> f64 {
    let d = (a - b).rem_euclid(p);
    if d > p / 2.0 {
        d - p
    } else {
        d
    }
}

/// Central finite-difference differential of `T` at `x`, or `None` when the
/// perturbed points land on different scatterers.
pub fn fd_differential(table: &TableGeometry, x: &PhasePoint, h: f64) -> Option<Mat2> {
    let base = step(table, x).ok()?.to;
    let mut m = [[0.0; 2]; 2];
    for col in 0..2 {
        let (dr, dp) = if col == 0 { (h, 0.0) } else { (0.0, h) };
        let plus = step(table, &PhasePoint::new(x.scatterer, x.r + dr, x.phi + dp)).ok()?.to;
        let minus = step(table, &PhasePoint::new(x.scatterer, x.r - dr, x.phi - dp)).ok()?.to;
        if plus.scatterer != base.scatterer || minus.scatterer != base.scatterer {
            return None;
        }
        let p = table.perimeter(base.scatterer);
        m[0][col] = arc_diff(plus.r, minus.r, p) / (2.0 * h);
        m[1][col] = (plus.phi - minus.phi) / (2.0 * h);
    }
    Some(m)
}

/// Preimage of `x` by tracing the incoming ray backwards through a brute-force
/// lattice scan.
pub fn backward_raycast(table: &TableGeometry, x: &PhasePoint) -> Option<PhasePoint> {
    let disks = table.disks();
    let d = disks[x.scatterer];
    let a = x.r / d.radius;
    let n = [a.cos(), a.sin()];
    let t = [-n[1], n[0]];
    let vout = [x.phi.cos() * n[0] + x.phi.sin() * t[0], x.phi.cos() * n[1] + x.phi.sin() * t[1]];
    let dot = vout[0] * n[0] + vout[1] * n[1];
    let vin = [vout[0] - 2.0 * dot * n[0], vout[1] - 2.0 * dot * n[1]];
    let dir = [-vin[0], -vin[1]];
    let p = [d.center[0] + d.radius * n[0], d.center[1] + d.radius * n[1]];
    let mut best: Option<(f64, usize, [f64; 2])> = None;
    for (j, e) in disks.iter().enumerate() {
        for i in -6..=6 {
            for k in -6..=6 {
                let c = [e.center[0] + i as f64, e.center[1] + k as f64];
                if j == x.scatterer && i == 0 && k == 0 {
                    continue;
                }
                // Solve |p + s dir - c| = rho for the smallest positive s.
                let w = [p[0] - c[0], p[1] - c[1]];
                let b = dir[0] * w[0] + dir[1] * w[1];
                let cc = w[0] * w[0] + w[1] * w[1] - e.radius * e.radius;
                let disc = b * b - cc;
                if disc < 0.0 {
                    continue;
                }
                let s = -b - disc.sqrt();
                if s > 1e-12 && best.map_or(true, |(bs, _, _)| s < bs) {
                    best = Some((s, j, c));
                }
            }
        }
    }
    let (s, j, c) = best?;
    let e = disks[j];
    let q = [p[0] + s * dir[0] - c[0], p[1] + s * dir[1] - c[1]];
    let ang = q[1].atan2(q[0]);
    let n1 = [ang.cos(), ang.sin()];
    let t1 = [-n1[1], n1[0]];
    // The particle leaves the preimage with velocity vin.
    let phi = (vin[0] * t1[0] + vin[1] * t1[1]).atan2(vin[0] * n1[0] + vin[1] * n1[1]);
    Some(PhasePoint::new(j, table.reduce_r(j, e.radius * ang), phi))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn mat_rel_err(a: &Mat2, b: &Mat2) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            num += (a[i][j] - b[i][j]).powi(2);
            den += b[i][j].powi(2);
        }
    }
    (num / den).sqrt()
}
