mod common;

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use billiard_thermo::billiard_map::PhasePoint;
use billiard_thermo::complexity::liouville_point;
use billiard_thermo::error::StatisticsError;
use billiard_thermo::singularity::{singularity_curves_with, CurveOptions, SingularityIndex};
use billiard_thermo::thermo_statistics::*;
use billiard_thermo::transfer_spectrum::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Solved {
    triple: LeadingTriple,
    measure: EquilibriumMeasure,
    derivatives: DerivativeEstimate,
}

fn samples() -> &'static UlamSamples {
    static S: OnceLock<UlamSamples> = OnceLock::new();
    S.get_or_init(|| collect_samples(&table(), GridSpec::new(32, 16), 128, 21).unwrap())
}

fn solve(t: f64) -> Solved {
    let op = UlamOperator::from_samples(samples(), t).unwrap();
    let triple = leading_triple(&op, 1e-10, 20_000).unwrap();
    let measure = equilibrium_measure(&table(), &op, &triple).unwrap();
    let derivatives = pressure_derivatives(&op, &measure, 30).unwrap();
    Solved { triple, measure, derivatives }
}

fn srb() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve(1.0))
}

fn liouville_sample(count: usize, seed: u64) -> MeasureSample {
    let t = table();
    let mut r = rng(seed);
    MeasureSample {
        t: 1.0,
        points: (0..count).map(|_| liouville_point(&t, &mut r)).collect(),
        weights: vec![1.0; count],
        seed,
        source: SampleSource::UlamCells,
    }
}

fn curve_index(resolution: f64) -> SingularityIndex {
    let t = table();
    let o = CurveOptions { resolution, ..Default::default() };
    let s1 = singularity_curves_with(&t, 1, o).unwrap();
    let sm1 = singularity_curves_with(&t, -1, o).unwrap();
    SingularityIndex::new(&t, &[&s1, &sm1], true)
}

/// `∫₀^{π/2} |log u| sin u du` by the midpoint rule on a graded mesh.
fn log_distance_to_tangency() -> f64 {
    let n = 200_000;
    (0..n)
        .map(|i| {
            let (a, b) = ((i as f64 / n as f64).powi(3), ((i + 1) as f64 / n as f64).powi(3));
            let (a, b) = (a * FRAC_PI_2, b * FRAC_PI_2);
            let m = 0.5 * (a + b);
            // Exact near zero: ∫ |log u| u du over [a, b].
            if i == 0 {
                let f = |u: f64| if u == 0.0 { 0.0 } else { u * u / 4.0 - u * u * u.ln() / 2.0 };
                return f(b) - f(a);
            }
            m.ln().abs() * m.sin() * (b - a)
        })
        .sum()
}

#[test]
fn chi_square_matches_hand_computation() {
    let (stat, dof, p) = chi_square(&[0.3, 0.2, 0.5], &[0.25, 0.25, 0.5], 100);
    // (30-25)²/25 + (20-25)²/25 + 0 = 2.
    assert!((stat - 2.0).abs() < 1e-12);
    assert_eq!(dof, 2);
    assert!((p - (-1.0f64).exp()).abs() < 1e-12);
    // Small expected counts are pooled into one bin.
    let (_, dof, _) = chi_square(&[0.5, 0.49, 0.005, 0.005], &[0.5, 0.49, 0.005, 0.005], 100);
    assert_eq!(dof, 2);
}

#[test]
fn ks_statistics_against_known_samples() {
    let (d, p) = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
    assert_eq!(d, 0.0);
    assert_eq!(p, 1.0);
    let (d, _) = ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]);
    assert_eq!(d, 1.0);
    // One point at the median of N(0, 1): D = 1/2.
    let (d, _) = ks_normal(&[0.0], 1.0);
    assert!((d - 0.5).abs() < 1e-12);

    let mut r = rng(5);
    let normal: Vec<f64> = (0..5000).map(|_| { let z: f64 = StandardNormal.sample(&mut r); 2.0 * z }).collect();
    assert!(ks_normal(&normal, 4.0).1 > 0.01);
    assert!(ks_normal(&normal, 1.0).1 < 1e-6);
    let uniform: Vec<f64> = (0..5000).map(|_| r.random_range(-1.0..1.0)).collect();
    assert!(ks_normal(&uniform, 1.0 / 3.0).1 < 1e-6);
    let other: Vec<f64> = (0..4000).map(|_| { let z: f64 = StandardNormal.sample(&mut r); 2.0 * z }).collect();
    assert!(ks_two_sample(&normal, &other).1 > 0.01);
    assert!(ks_two_sample(&normal, &uniform).1 < 1e-6);
}

#[test]
fn samples_follow_the_cell_masses() {
    let m = &srb().measure;
    let s = sample_measure(m, 1_000_000, 3);
    assert_eq!(s.source, SampleSource::UlamCells);
    let (_, _, p) = chi_square(&s.cell_histogram(&m.grid), &m.mu_cells, s.len());
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn empty_cells_are_never_sampled() {
    let mut m = srb().measure.clone();
    for c in [0, 7, 100] {
        m.mu_cells[c] = 0.0;
    }
    let s = sample_measure(&m, 100_000, 4);
    let h = s.cell_histogram(&m.grid);
    assert_eq!(h[0] + h[7] + h[100], 0.0);
}

#[test]
fn srb_angle_marginal_matches_a_trajectory() {
    let s = sample_measure(&srb().measure, 20_000, 5);
    let orbit = trajectory_sample(&table(), 20_000, 10, 6);
    assert_eq!(orbit.source, SampleSource::TrajectoryReweighting);
    let a: Vec<f64> = s.points.iter().map(|x| x.phi).collect();
    let b: Vec<f64> = orbit.points.iter().map(|x| x.phi).collect();
    let (_, p) = ks_two_sample(&a, &b);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn adaptedness_of_liouville_to_tangency() {
    // Under the Liouville measure u = π/2 − |φ| has density sin u.
    let s = liouville_sample(200_000, 7);
    let r = adaptedness_integral(&s, &SingularityIndex::new(&table(), &[], true));
    let exact = log_distance_to_tangency();
    assert!(!r.tail_extrapolated);
    assert!((r.estimate - exact).abs() < 4.0 * r.se, "{} vs {exact}", r.estimate);
    assert!((r.estimate - r.raw_estimate).abs() < 1e-12);
    // μ(u < ε) ≈ ε²/2.
    assert!((r.mass_exponent - 2.0).abs() < 0.3, "{}", r.mass_exponent);
    assert!(r.converged);
}

#[test]
fn adaptedness_shells_are_bracketed() {
    let s = sample_measure(&srb().measure, 50_000, 8);
    let r = adaptedness_integral(&s, &curve_index(2e-3));
    let mass: f64 = r.shells.iter().map(|s| s.mass).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    for sh in &r.shells {
        let hi = sh.hi.min(FRAC_PI_2);
        assert!(sh.contribution <= sh.mass * sh.lo.ln().abs() + 1e-12);
        if sh.hi < 1.0 {
            assert!(sh.contribution >= sh.mass * hi.ln().abs() - 1e-12);
        }
        if sh.lo >= 0.1 {
            assert!(sh.contribution <= 10f64.ln() * sh.mass + 1e-12);
        }
    }
    assert!(r.partial_sums.windows(2).all(|w| w[1] >= w[0]));
    assert!((r.partial_sums.last().unwrap() - r.raw_estimate).abs() < 1e-9);
}

#[test]
fn adaptedness_converges_and_is_stable_across_seeds() {
    let idx = curve_index(2e-4);
    let m = &srb().measure;
    let a = adaptedness_integral(&sample_measure(m, 40_000, 9), &idx);
    let b = adaptedness_integral(&sample_measure(m, 40_000, 10), &idx);
    assert!(a.converged && b.converged);
    assert!(a.mass_exponent > 0.5, "{}", a.mass_exponent);
    assert!(a.estimate.is_finite() && a.estimate > 0.0);
    assert!((a.estimate - b.estimate).abs() < 0.1 * a.estimate);
    assert!(a.tail_extrapolated);
    assert_eq!(a.resolution, 2e-4);
}

#[test]
fn liouville_tangency_neighbourhoods_scale_quadratically() {
    let s = liouville_sample(400_000, 11);
    let eps: Vec<f64> = (0..7).map(|k| 0.4 * 0.5f64.powi(k)).collect();
    let fit = neighborhood_scaling(&s, &SingularityIndex::new(&table(), &[], true), &eps).unwrap();
    for (e, m) in eps.iter().zip(&fit.mass) {
        let exact = 1.0 - e.cos();
        let se = (exact / s.len() as f64).sqrt();
        assert!((m - exact).abs() < 5.0 * se, "eps {e}: {m} vs {exact}");
    }
    assert!((fit.slope - 2.0).abs() < 0.1, "{}", fit.slope);
    assert!(fit.positive);
}

#[test]
fn srb_neighbourhood_slope_is_positive() {
    let s = sample_measure(&srb().measure, 100_000, 12);
    let eps: Vec<f64> = (0..6).map(|k| 0.3 * 0.5f64.powi(k)).collect();
    let fit = neighborhood_scaling(&s, &SingularityIndex::new(&table(), &[], true), &eps).unwrap();
    assert!(fit.positive && fit.slope > 1.0, "{}", fit.slope);
    let curves = neighborhood_scaling(&s, &curve_index(2e-3), &[0.2, 0.1, 0.05, 0.025]).unwrap();
    assert!(curves.slope > 0.0);
}

#[test]
fn too_few_usable_epsilons_is_an_error() {
    let s = liouville_sample(1000, 13);
    let idx = curve_index(2e-3);
    // Below twice the resolution.
    let r = neighborhood_scaling(&s, &idx, &[0.2, 0.1, 1e-3, 5e-4]);
    assert!(matches!(r, Err(StatisticsError::InsufficientRange(_))), "{r:?}");
}

#[test]
fn birkhoff_lyapunov_matches_the_srb_integral() {
    let (chi, se) = birkhoff_lyapunov(&table(), 400_000, 14).unwrap();
    let d = &srb().derivatives;
    assert!((chi + d.p1).abs() < 5.0 * se + 0.01, "{chi} ± {se} vs {}", -d.p1);
}

#[test]
fn entropy_identities_at_srb() {
    let s = srb();
    let chi = birkhoff_lyapunov(&table(), 200_000, 15).unwrap();
    let e = entropy_identities(1.0, s.triple.lambda.ln(), &s.derivatives, Some(chi), Some((1.0, 0.1)));
    assert_eq!(e.entropy, s.triple.lambda.ln() - s.derivatives.p1);
    assert_eq!(e.lyapunov, -s.derivatives.p1);
    assert!(e.pesin_residual.unwrap() < 0.05);
    assert_eq!(e.below_h_star, Some(false));
    let e = entropy_identities(1.0, s.triple.lambda.ln(), &s.derivatives, None, Some((2.0, 0.1)));
    assert_eq!(e.below_h_star, Some(true));
    assert_eq!(e.pesin_residual, None);
}

#[test]
fn entropy_exceeds_pressure_away_from_srb() {
    for t in [0.8, 1.2] {
        let s = solve(t);
        let e = entropy_identities(t, s.triple.lambda.ln(), &s.derivatives, Some((1.0, 0.0)), None);
        assert!(e.entropy >= s.triple.lambda.ln());
        assert_eq!(e.pesin_residual, None);
    }
}

#[test]
fn phase_distance_wraps_and_separates_scatterers() {
    let t = table();
    let p = t.perimeter(0);
    let a = PhasePoint::new(0, 0.01, 0.1);
    let b = PhasePoint::new(0, p - 0.02, 0.14);
    assert!((phase_distance(&t, &a, &b) - 0.05).abs() < 1e-12);
    assert_eq!(phase_distance(&t, &a, &PhasePoint::new(1, 0.01, 0.1)), f64::INFINITY);
}

/// `μ̂(B_n)` by uniform sampling in the `ε`-square around the centre.
fn brute_force_ball(ball: &BowenBall, measure: &EquilibriumMeasure, count: usize, seed: u64) -> (f64, f64) {
    let t = table();
    let boundary = t.derived().boundary_length;
    let mut r = rng(seed);
    let (mut sum, mut sum2) = (0.0, 0.0);
    let e = ball.epsilon;
    for _ in 0..count {
        let y = PhasePoint::new(
            ball.center.scatterer,
            ball.center.r + r.random_range(-e..e),
            ball.center.phi + r.random_range(-e..e),
        );
        if y.phi.abs() < FRAC_PI_2 && ball.contains(&t, &y) {
            let c = measure.grid.cell_of(&y);
            let w = measure.mu_cells[c] / measure.grid.mu[c] * y.cos_phi / (2.0 * boundary);
            sum += w;
            sum2 += w * w;
        }
    }
    let n = count as f64;
    let mean = sum / n;
    let area = 4.0 * e * e;
    (area * mean, area * ((sum2 / n - mean * mean) / n).sqrt())
}

#[test]
fn local_ball_mass_matches_brute_force() {
    let m = &srb().measure;
    let centres = sample_points(m, 3, 16);
    for (i, c) in centres.iter().enumerate() {
        for n in [0, 1, 2] {
            let ball = BowenBall { center: *c, n, epsilon: 0.03 };
            let Ok((mass, hits)) = bowen_ball_mass(&table(), m, &ball, 20_000, 17 + i as u64) else { continue };
            let (exact, se) = brute_force_ball(&ball, m, 200_000, 18);
            let local_se = mass / (hits as f64).sqrt();
            assert!((mass - exact).abs() < 4.0 * (se + local_se), "centre {i} n {n}: {mass} vs {exact} ± {se}");
        }
    }
}

#[test]
fn bowen_check_at_srb() {
    let m = &srb().measure;
    let params = BowenParams { trials: 20, n_max: 8, epsilon: 0.02, local_samples: 3000, seed: 19 };
    let r = bowen_ball_check(&table(), m, 0.0, &params, 2).unwrap();
    assert!(r.centres >= 15);
    assert_eq!(r.violations, 0);
    assert_eq!(r.violation_rate, 0.0);
    assert!(r.a_fit > 0.0);
    assert!(r.median_slope_error() < 0.15, "{}", r.median_slope_error());
    assert!(r.pairs.iter().all(|p| p.n >= 1 && p.n <= 8 && p.mass > 0.0));
}

#[test]
fn bowen_parameters_are_validated() {
    let m = &srb().measure;
    let t = table();
    let big = BowenParams { trials: 2, n_max: 4, epsilon: t.delta0, local_samples: 100, seed: 0 };
    assert!(matches!(bowen_ball_check(&t, m, 0.0, &big, 1), Err(StatisticsError::Parameter(_))));
    let ok = BowenParams { epsilon: 0.01, ..big };
    assert!(matches!(bowen_ball_check(&t, m, 0.0, &ok, 4), Err(StatisticsError::Parameter(_))));
}

#[test]
fn clt_at_srb() {
    let s = srb();
    let d = &s.derivatives;
    let r = clt_check(&table(), &s.measure, d.p1, d.p2, 400, 2000, 0.01, 20);
    assert!(r.pass, "{r:?}");
    assert_eq!(r.blocks + (r.truncated_fraction * 2000.0).round() as usize, 2000);
    assert!((r.block_variance / d.p2 - 1.0).abs() < 0.15, "{} vs {}", r.block_variance, d.p2);
    assert!(r.skipped.is_none());
}

#[test]
fn clt_with_wrong_variance_fails() {
    let s = srb();
    let d = &s.derivatives;
    let r = clt_check(&table(), &s.measure, d.p1, 4.0 * d.p2, 100, 2000, 0.01, 21);
    assert!(!r.pass);
}

#[test]
fn degenerate_variance_is_skipped() {
    let s = srb();
    let r = clt_check(&table(), &s.measure, 0.0, 0.0, 400, 5000, 0.01, 22);
    assert!(r.skipped.is_some());
    assert!(r.pass);
    assert_eq!(r.blocks, 0);
}

#[test]
fn report_serializes() {
    let s = srb();
    let r = StatisticsReport {
        t: 1.0,
        seed: 3,
        version: env!("CARGO_PKG_VERSION").into(),
        sample_size: 0,
        adaptedness: None,
        scaling: None,
        entropy: Some(entropy_identities(1.0, s.triple.lambda.ln(), &s.derivatives, None, None)),
        bowen: None,
        clt: None,
    };
    let text = serde_json::to_string(&r).unwrap();
    let back: StatisticsReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bowen_balls_are_nested(i in 0usize..1000, dr in -0.02f64..0.02, dp in -0.02f64..0.02, n in 0usize..6) {
        let t = table();
        let c = sample_points(&srb().measure, 1000, 23)[i];
        let y = PhasePoint::new(c.scatterer, c.r + dr, (c.phi + dp).clamp(-1.5, 1.5));
        let outer = BowenBall { center: c, n, epsilon: 0.03 };
        let inner = BowenBall { n: n + 1, ..outer };
        prop_assert!(outer.contains(&t, &c) || inner.n > 0);
        if inner.contains(&t, &y) {
            prop_assert!(outer.contains(&t, &y));
        }
    }

    #[test]
    fn neighbourhood_mass_is_monotone(seed in 0u64..1000) {
        let s = liouville_sample(2000, seed);
        let eps = [0.8, 0.4, 0.3, 0.2];
        let fit = neighborhood_scaling(&s, &SingularityIndex::new(&table(), &[], true), &eps).unwrap();
        prop_assert!(fit.mass.windows(2).all(|w| w[0] >= w[1]));
    }
}
