mod common;

use std::sync::OnceLock;

use billiard_thermo::billiard_map::{stable_orbit, step, PhasePoint};
use billiard_thermo::complexity::GridObservable;
use billiard_thermo::error::SpectrumError;
use billiard_thermo::transfer_spectrum::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-10;
const COARSE: GridSpec = GridSpec { nr: 32, ns: 16 };

fn coarse_samples() -> &'static UlamSamples {
    static S: OnceLock<UlamSamples> = OnceLock::new();
    S.get_or_init(|| collect_samples(&table(), COARSE, 128, 1).unwrap())
}

fn fine_samples() -> &'static UlamSamples {
    static S: OnceLock<UlamSamples> = OnceLock::new();
    S.get_or_init(|| collect_samples(&table(), COARSE.refined(), 128, 2).unwrap())
}

struct Solved {
    op: UlamOperator,
    triple: LeadingTriple,
    measure: EquilibriumMeasure,
}

fn solve(samples: &UlamSamples, t: f64) -> Solved {
    let op = UlamOperator::from_samples(samples, t).unwrap();
    let triple = leading_triple(&op, TOL, 20_000).unwrap();
    let measure = equilibrium_measure(&table(), &op, &triple).unwrap();
    Solved { op, triple, measure }
}

fn srb_coarse() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve(coarse_samples(), 1.0))
}

fn srb_fine() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve(fine_samples(), 1.0))
}

/// Histogram of a long forward orbit on the cells of `grid`.
fn birkhoff_histogram(grid: &UlamGrid, n: usize, seed: u64) -> Vec<f64> {
    let t = table();
    let mut r = rng(seed);
    let mut x = random_point(&t, &mut r);
    let mut h = vec![0.0; grid.len()];
    let mut kept = 0usize;
    while kept < n {
        match step(&t, &x) {
            Ok(s) => {
                x = s.to;
                h[grid.cell_of(&x)] += 1.0;
                kept += 1;
            }
            Err(_) => x = random_point(&t, &mut r),
        }
    }
    h.iter_mut().for_each(|v| *v /= n as f64);
    h
}

/// Cellwise masses of `measure` summed onto the cells of `partition`.
fn aggregate(measure: &EquilibriumMeasure, partition: &UlamGrid) -> Vec<f64> {
    let mut out = vec![0.0; partition.len()];
    for (i, m) in measure.mu_cells.iter().enumerate() {
        let (s, r, sn) = measure.grid.bounds(i);
        let c = PhasePoint::new(s, 0.5 * (r[0] + r[1]), (0.5 * (sn[0] + sn[1])).asin());
        out[partition.cell_of(&c)] += m;
    }
    out
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[test]
fn grid_masses_partition_the_phase_space() {
    let t = table();
    let g = UlamGrid::new(&t, GridSpec::new(40, 20)).unwrap();
    assert!((g.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Every cell mass equals the cos φ dr dφ integral over the cell.
    let total = t.derived().boundary_length;
    for cell in [0, 7, 399, g.len() - 1] {
        let (_, r, s) = g.bounds(cell);
        let direct = (r[1] - r[0]) * (s[1] - s[0]) / (2.0 * total);
        assert!((g.mu[cell] - direct).abs() < 1e-15);
    }
    let mut rn = rng(4);
    for _ in 0..2000 {
        let x = random_point(&t, &mut rn);
        let c = g.cell_of(&x);
        let (s, r, sn) = g.bounds(c);
        assert_eq!(s, x.scatterer);
        let rr = x.r.rem_euclid(t.perimeter(s));
        assert!(rr >= r[0] - 1e-12 && rr <= r[1] + 1e-12);
        assert!(x.phi.sin() >= sn[0] - 1e-12 && x.phi.sin() <= sn[1] + 1e-12);
        let y = g.sample_in(c, &mut rn);
        assert_eq!(g.cell_of(&y), c);
    }
}

#[test]
fn identity_operator() {
    let op = UlamOperator::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let tr = leading_triple(&op, TOL, 100).unwrap();
    assert!((tr.lambda - 1.0).abs() < 1e-14);
    for i in 0..3 {
        assert!((tr.nu[i] - 1.0).abs() < 1e-12);
        assert!((tr.nu_tilde[i] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn two_state_chain_has_hand_solved_left_vector() {
    let op = UlamOperator::from_dense(&[vec![0.9, 0.1], vec![0.2, 0.8]]);
    let tr = leading_triple(&op, 1e-13, 10_000).unwrap();
    assert!((tr.lambda - 1.0).abs() < 1e-12);
    // Equal cell masses, so the left vector in the pairing is the stationary row vector.
    let s = tr.nu_tilde[0] + tr.nu_tilde[1];
    assert!((tr.nu_tilde[0] / s - 2.0 / 3.0).abs() < 1e-10);
    assert!((tr.nu_tilde[1] / s - 1.0 / 3.0).abs() < 1e-10);
    assert!(tr.cesaro_deviation < 1e-2);
}

#[test]
fn diagonal_gap() {
    let op = UlamOperator::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.5]]);
    let tr = leading_triple(&op, TOL, 100).unwrap();
    let g = second_eigenvalue(&op, &tr);
    assert!((g.ratio - 0.5).abs() < 1e-6, "{g:?}");
    assert!(g.warning.is_none());
}

#[test]
fn periodic_operator_does_not_converge() {
    let op = UlamOperator::from_dense(&[vec![0.0, 2.0], vec![1.0, 0.0]]);
    match leading_triple(&op, TOL, 50) {
        Err(SpectrumError::NotConverged { iterations, residual }) => {
            assert_eq!(iterations, 50);
            assert!(residual > 0.1);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn srb_operator_has_unit_eigenvalue() {
    for s in [srb_coarse(), srb_fine()] {
        assert!(s.op.flagged.is_empty());
        assert!(s.triple.lambda.ln().abs() < 2e-2);
        assert!(s.triple.residual < TOL);
        // Rows are sample averages of unit weights.
        assert!(s.triple.nu.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }
}

#[test]
fn srb_measure_matches_birkhoff_histogram_under_refinement() {
    let partition = &srb_coarse().measure.grid;
    let hist = birkhoff_histogram(partition, 4_000_000, 11);
    let coarse = tv(&srb_coarse().measure.mu_cells, &hist);
    let fine = tv(&aggregate(&srb_fine().measure, partition), &hist);
    assert!(coarse < 0.05, "coarse {coarse}");
    assert!(fine < coarse, "fine {fine} coarse {coarse}");
}

#[test]
fn sparsity_is_shared_across_t() {
    let a = UlamOperator::from_samples(coarse_samples(), 0.7).unwrap();
    let b = UlamOperator::from_samples(coarse_samples(), 1.3).unwrap();
    assert_eq!(a.matrix.sparsity(), b.matrix.sparsity());
    assert_ne!(a.matrix.vals, b.matrix.vals);
    assert!(a.matrix.vals.iter().all(|&v| v > 0.0));
}

#[test]
fn assembly_is_deterministic() {
    let t = table();
    let a = assemble_ulam(&t, 0.9, GridSpec::new(16, 8), 16, 5).unwrap();
    let b = assemble_ulam(&t, 0.9, GridSpec::new(16, 8), 16, 5).unwrap();
    assert_eq!(a, b);
    assert!(assemble_ulam(&t, 0.9, GridSpec::new(16, 8), 8, 5).is_err());
    assert!(assemble_ulam(&t, 0.0, GridSpec::new(16, 8), 16, 5).is_err());
}

#[test]
fn doubling_samples_moves_eigenvalue_within_error() {
    let t = table();
    for &tt in &[0.7, 1.3] {
        let a = assemble_ulam(&t, tt, COARSE, 64, 100).unwrap();
        let b = assemble_ulam(&t, tt, COARSE, 128, 200).unwrap();
        let ta = leading_triple(&a, TOL, 20_000).unwrap();
        let tb = leading_triple(&b, TOL, 20_000).unwrap();
        let (sa, sb) = (log_lambda_se(&a, &ta), log_lambda_se(&b, &tb));
        let d = (ta.lambda.ln() - tb.lambda.ln()).abs();
        assert!(d < 3.0 * sa, "t {tt}: change {d} vs se {sa}");
        assert!(sb < sa);
    }
}

#[test]
fn duality_and_residual() {
    let s = solve(coarse_samples(), 0.8);
    let m = &s.op.matrix;
    let mut r = rng(8);
    for _ in 0..5 {
        let f: Vec<f64> = (0..m.dim()).map(|_| r.random::<f64>() - 0.3).collect();
        let lhs = m.pair(&m.apply(&f), &s.triple.nu_tilde);
        let rhs = s.triple.lambda * m.pair(&f, &s.triple.nu_tilde);
        assert!((lhs - rhs).abs() < 10.0 * TOL * rhs.abs().max(1.0), "{lhs} {rhs}");
    }
    let lnu = m.apply(&s.triple.nu);
    let res: f64 = lnu.iter().zip(&s.triple.nu).zip(&m.mu).map(|((a, b), w)| (a - s.triple.lambda * b).abs() * w).sum();
    assert!(res / s.triple.lambda < 10.0 * TOL);
    assert!(s.triple.nu.iter().chain(&s.triple.nu_tilde).all(|&v| v >= 0.0));
    assert!((m.pair(&s.triple.nu, &s.triple.nu_tilde) - 1.0).abs() < 1e-12);
}

#[test]
fn cesaro_average_agrees_with_power_iteration() {
    for t in [0.8, 1.0, 1.2] {
        let s = solve(coarse_samples(), t);
        assert!(s.triple.cesaro_deviation < 0.05, "t {t}: {}", s.triple.cesaro_deviation);
    }
}

#[test]
fn equilibrium_measure_is_normalized_with_full_support() {
    for t in [0.75, 1.0, 1.25] {
        let s = solve(coarse_samples(), t);
        assert!((s.measure.mu_cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.measure.min_density() > 0.0);
        assert!(s.measure.gap.ratio < 1.0, "t {t}: {:?}", s.measure.gap);
    }
}

#[test]
fn invariance_residual_decreases_under_refinement() {
    let t = table();
    for tt in [0.8, 1.0, 1.2] {
        let c = solve(coarse_samples(), tt);
        let f = solve(fine_samples(), tt);
        let on_coarse = invariance_residual(&t, &f.measure, &c.measure.grid, 64, 77);
        assert!(on_coarse < c.measure.invariance_residual, "t {tt}: {on_coarse} vs {}", c.measure.invariance_residual);
    }
}

#[test]
fn gap_matches_decay_of_slowest_mode() {
    let t = table();
    let s = srb_fine();
    let v = &s.measure.gap.vector;
    let g = &s.measure.grid;
    let f = GridObservable::from_fn(&t, 128, 129, |sc, r, phi| v[g.cell_of(&PhasePoint::new(sc, r, phi))]);
    let c = correlation(&t, &s.measure, &f, &f, 10, 100_000, 3).unwrap();
    let rate = c.rate.expect("signal above noise");
    let gap = s.measure.gap.ratio;
    assert!((rate - gap).abs() < 0.2 * gap, "rate {rate} gap {gap}");
}

fn clipped_log_js(t: &billiard_thermo::TableGeometry) -> GridObservable {
    GridObservable::from_fn(t, 64, 65, |s, r, phi| {
        let p = PhasePoint::new(s, r, phi.clamp(-1.55, 1.55));
        stable_orbit(t, &p, 1, 60, 1e-9).map(|o| o.log_js[0].max(-8.0)).unwrap_or(-8.0)
    })
}

#[test]
fn correlation_examples() {
    let t = table();
    let s = srb_coarse();
    let one = GridObservable::from_fn(&t, 4, 5, |_, _, _| 1.0);
    let c = correlation(&t, &s.measure, &one, &one, 5, 1000, 1).unwrap();
    assert!(c.c.iter().all(|&v| v.abs() <= 3.0 * c.se[0].max(1e-15)));

    // Lag zero is the sample covariance of the same burned-in starting points.
    let f = clipped_log_js(&t);
    let h = GridObservable::from_fn(&t, 32, 33, |_, r, phi| r.sin() + phi);
    let c = correlation(&t, &s.measure, &f, &h, 3, 5000, 9).unwrap();
    let pts: Vec<PhasePoint> = sample_points(&s.measure, 5000, 9)
        .into_iter()
        .filter_map(|mut x| {
            for _ in 0..BURN_IN {
                x = step(&t, &x).ok()?.to;
            }
            Some(x)
        })
        .collect();
    let n = pts.len() as f64;
    let fs: Vec<f64> = pts.iter().map(|x| f.eval(&t, x)).collect();
    let hs: Vec<f64> = pts.iter().map(|x| h.eval(&t, x)).collect();
    let (mf, mh) = (fs.iter().sum::<f64>() / n, hs.iter().sum::<f64>() / n);
    let cov = fs.iter().zip(&hs).map(|(a, b)| (a - mf) * (b - mh)).sum::<f64>() / n;
    assert!((c.c[0] - cov).abs() < 1e-10, "{} {cov}", c.c[0]);
    assert!(c.holder.0 > 0.0 && c.holder.1 > 0.0);
}

#[test]
fn log_js_correlations_decay_no_slower_than_the_gap() {
    let t = table();
    let s = srb_coarse();
    let f = clipped_log_js(&t);
    let c = correlation(&t, &s.measure, &f, &f, 10, 200_000, 5).unwrap();
    let rate = c.rate.expect("fit refused");
    assert!(rate <= s.measure.gap.ratio + 0.1, "rate {rate} gap {}", s.measure.gap.ratio);
}

#[test]
fn spectral_pressure_ladder() {
    let t = table();
    let ts: Vec<f64> = (0..9).map(|k| 0.6 + 0.1 * k as f64).collect();
    let p = pressure_from_spectrum(&t, &ts, &[GridSpec::new(16, 8), GridSpec::new(32, 16)], 32, 3, TOL).unwrap();
    let fine = &p.finest().log_lambda;
    let i1 = p.at(1.0).unwrap();
    assert!(fine[i1].abs() <= 0.05);
    assert!(fine.windows(2).all(|w| w[1] < w[0]));
    let spread = p.spread();
    for k in 1..8 {
        assert!(fine[k + 1] - 2.0 * fine[k] + fine[k - 1] >= -spread[k]);
    }
    assert!(p.finest().gap.iter().all(|&g| g < 1.0));
    assert_eq!(p.extrapolated().len(), 9);
}

#[test]
fn derivatives_at_srb() {
    let s = srb_coarse();
    let d = pressure_derivatives(&s.op, &s.measure, 40).unwrap();
    assert!(d.p1 < 0.0);
    assert!(d.terms[0] >= 0.0);
    assert!(d.p2 >= -d.p2_error());
    assert!(pressure_derivatives(&s.op, &s.measure, 9).is_err());

    // Lag-zero term against the raw samples.
    let sm = coarse_samples();
    let mu = &s.measure.mu_cells;
    let (mut e1, mut e2) = (0.0, 0.0);
    for i in 0..sm.grid.len() {
        let fs = &sm.log_js[sm.start[i]..sm.start[i + 1]];
        let k = fs.len() as f64;
        e1 += mu[i] * fs.iter().sum::<f64>() / k;
        e2 += mu[i] * fs.iter().map(|f| f * f).sum::<f64>() / k;
    }
    assert!((d.p1 - e1).abs() < 1e-10);
    assert!((d.terms[0] - (e2 - e1 * e1)).abs() < 1e-10);
}

#[test]
fn derivatives_match_finite_differences() {
    let h = 0.05;
    let ll = |t: f64| solve(coarse_samples(), t).triple.lambda.ln();
    let (lm, l0, lp) = (ll(1.0 - h), ll(1.0), ll(1.0 + h));
    let s = srb_coarse();
    let d = pressure_derivatives(&s.op, &s.measure, 40).unwrap();
    let fd1 = (lp - lm) / (2.0 * h);
    let fd2 = (lp - 2.0 * l0 + lm) / (h * h);
    assert!((fd1 - d.p1).abs() < 0.05 * d.p1.abs(), "{fd1} {}", d.p1);
    assert!((fd2 - d.p2).abs() < 0.05 * d.p2, "{fd2} {}", d.p2);
    assert!((d.p1_cellwise - d.p1).abs() < 0.02 * d.p1.abs());
}

#[test]
fn report_serializes() {
    let s = srb_coarse();
    let d = pressure_derivatives(&s.op, &s.measure, 40).unwrap();
    let r = SpectrumReport::new(&s.op, &s.triple, &s.measure, &d);
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in ["t", "lambda", "log_lambda", "gap", "p1", "p2", "rayleigh_residual", "invariance_residual"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn cache_round_trip_and_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.bin");
    let op = UlamOperator::from_samples(coarse_samples(), 0.85).unwrap();
    write_operator_cache(&path, &op).unwrap();
    assert_eq!(read_operator_cache(&path).unwrap(), op);

    let bytes = std::fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_operator_cache(&path), Err(SpectrumError::Cache(_))));
    let mut old = bytes.clone();
    old[8..12].copy_from_slice(&(CACHE_VERSION + 1).to_le_bytes());
    std::fs::write(&path, &old).unwrap();
    assert!(matches!(read_operator_cache(&path), Err(SpectrumError::Cache(_))));
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_operator_cache(&path), Err(SpectrumError::Cache(_))));
}

fn positive_matrix(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perron_root_lies_between_row_sums(rows in (2usize..7).prop_flat_map(positive_matrix)) {
        let op = UlamOperator::from_dense(&rows);
        let tr = leading_triple(&op, TOL, 10_000).unwrap();
        let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sums.iter().cloned().fold(0.0, f64::max);
        prop_assert!(tr.lambda >= lo * (1.0 - 1e-9) && tr.lambda <= hi * (1.0 + 1e-9));
        prop_assert!(tr.nu.iter().chain(&tr.nu_tilde).all(|&v| v > 0.0));
        prop_assert!(tr.residual < TOL);
        let m = &op.matrix;
        let f: Vec<f64> = (0..m.dim()).map(|i| (i as f64).sin()).collect();
        let lhs = m.pair(&m.apply(&f), &tr.nu_tilde);
        let rhs = tr.lambda * m.pair(&f, &tr.nu_tilde);
        prop_assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0));
        let g = second_eigenvalue(&op, &tr);
        prop_assert!((0.0..1.0).contains(&g.ratio));
    }

    #[test]
    fn eigenvalue_scales_with_operator(rows in (2usize..6).prop_flat_map(positive_matrix), c in 0.1f64..10.0) {
        let a = leading_triple(&UlamOperator::from_dense(&rows), TOL, 10_000).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let b = leading_triple(&UlamOperator::from_dense(&scaled), TOL, 10_000).unwrap();
        prop_assert!((b.lambda - c * a.lambda).abs() < 1e-8 * c * a.lambda);
    }

    #[test]
    fn reweighting_orders_entries(t1 in 0.3f64..1.0, t2 in 1.0f64..2.0) {
        // log JˢT < 0, so every weight falls as t grows.
        let a = UlamOperator::from_samples(coarse_samples(), t1).unwrap();
        let b = UlamOperator::from_samples(coarse_samples(), t2).unwrap();
        prop_assert!(a.matrix.vals.iter().zip(&b.matrix.vals).all(|(x, y)| x >= y));
    }
}
