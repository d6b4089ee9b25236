//! Acceptance criteria on the default two-disk table. Prints one PASS/FAIL
//! line per criterion and exits non-zero if any fails. Pass criterion numbers
//! as arguments to run a subset.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use billiard_thermo::billiard_map::*;
use billiard_thermo::complexity::*;
use billiard_thermo::runner::{run, ExperimentConfig};
use billiard_thermo::singularity::{singularity_curves_with, CurveOptions, SingularityIndex};
use billiard_thermo::thermo_statistics::*;
use billiard_thermo::transfer_spectrum::*;
use billiard_thermo::TableGeometry;
use common::*;
use rand::Rng;

const EIGEN_TOL: f64 = 1e-10;
const SPC: usize = 256;
const SEED: u64 = 2024;

struct Check {
    pass: bool,
    lines: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }

    fn item(&mut self, ok: bool, detail: String) {
        self.pass &= ok;
        self.lines.push(format!("    [{}] {detail}", if ok { "ok" } else { "FAILED" }));
    }
}

fn t_grid() -> Vec<f64> {
    (0..9).map(|k| 0.6 + 0.1 * k as f64).collect()
}

fn idx(ts: &[f64], t: f64) -> usize {
    ts.iter().position(|&s| (s - t).abs() < 1e-9).unwrap()
}

struct Level {
    samples: UlamSamples,
    ops: Vec<UlamOperator>,
    triples: Vec<LeadingTriple>,
}

struct Spectrum {
    ts: Vec<f64>,
    levels: Vec<Level>,
    ladder: SpectralPressure,
    /// Finest-level equilibrium states and derivatives, one per `t`.
    measures: Vec<EquilibriumMeasure>,
    derivatives: Vec<DerivativeEstimate>,
}

#[derive(Default)]
struct Shared {
    survey: Option<Survey>,
    spectrum: Option<Spectrum>,
}

impl Shared {
    fn survey(&mut self, t: &TableGeometry) -> &Survey {
        self.survey.get_or_insert_with(|| {
            let plan = SamplingPlan { seed: SEED, ..SamplingPlan::default() };
            survey(t, 8, None, &plan).expect("complexity survey")
        })
    }

    fn spectrum(&mut self, t: &TableGeometry) -> &Spectrum {
        self.spectrum.get_or_insert_with(|| build_spectrum(t))
    }
}

fn build_spectrum(t: &TableGeometry) -> Spectrum {
    let ts = t_grid();
    let ladder_specs = [GridSpec::new(64, 32), GridSpec::new(128, 64)];
    let mut levels = Vec::new();
    let mut pressure = Vec::new();
    for (k, &spec) in ladder_specs.iter().enumerate() {
        let samples = collect_samples(t, spec, SPC, SEED + k as u64).unwrap();
        let mut lp = LevelPressure { grid: spec, cells: samples.grid.len(), log_lambda: vec![], se: vec![], gap: vec![] };
        let mut ops = Vec::new();
        let mut triples = Vec::new();
        for &tt in &ts {
            let op = UlamOperator::from_samples(&samples, tt).unwrap();
            let triple = leading_triple(&op, EIGEN_TOL, 20_000).unwrap();
            lp.log_lambda.push(triple.lambda.ln());
            lp.se.push(log_lambda_se(&op, &triple));
            lp.gap.push(second_eigenvalue(&op, &triple).ratio);
            ops.push(op);
            triples.push(triple);
        }
        pressure.push(lp);
        levels.push(Level { samples, ops, triples });
    }
    let fine = levels.last().unwrap();
    let mut measures = Vec::new();
    let mut derivatives = Vec::new();
    for (op, triple) in fine.ops.iter().zip(&fine.triples) {
        let m = equilibrium_measure(t, op, triple).unwrap();
        derivatives.push(pressure_derivatives(op, &m, 40).unwrap());
        measures.push(m);
    }
    Spectrum { ladder: SpectralPressure { ts: ts.clone(), levels: pressure }, ts, levels, measures, derivatives }
}

fn criterion_1(t: &TableGeometry) -> Check {
    let mut c = Check::new();
    let mut r = rng(101);

    let (mut worst_id, mut n_id) = (0.0f64, 0);
    while n_id < 10_000 {
        let x = random_point(t, &mut r);
        let (Ok(so), Ok(uo)) = (stable_orbit(t, &x, 1, DEFAULT_DEPTH, DEFAULT_TOL), unstable_orbit(t, &x, 1, DEFAULT_DEPTH, DEFAULT_TOL)) else {
            continue;
        };
        let s = &so.steps[0];
        let e0 = transversality(uo.slopes[0], so.slopes[0]);
        let e1 = transversality(uo.slopes[1], so.slopes[1]);
        let rhs = (so.log_js[0] + uo.log_ju[0]).exp() * e1 / e0;
        worst_id = worst_id.max(rel_err(rhs, s.from.cos_phi / s.to.cos_phi));
        n_id += 1;
    }
    c.item(worst_id < 1e-6, format!("Jacobian identity on {n_id} points: worst relative residual {worst_id:.2e} (< 1e-6)"));

    let (mut worst_fd, mut n_fd) = (0.0f64, 0);
    while n_fd < 1000 {
        let x = random_point(t, &mut r);
        let (Some(a), Some(b)) = (fd_differential(t, &x, 1e-5), fd_differential(t, &x, 5e-6)) else { continue };
        // Richardson step removes the h^2 term of the central difference.
        let mut fd = b;
        for i in 0..2 {
            for j in 0..2 {
                fd[i][j] = (4.0 * b[i][j] - a[i][j]) / 3.0;
            }
        }
        worst_fd = worst_fd.max(mat_rel_err(&fd, &step(t, &x).unwrap().dt));
        n_fd += 1;
    }
    c.item(worst_fd < 1e-5, format!("DT vs finite differences on {n_fd} points: worst {worst_fd:.2e} (< 1e-5)"));

    let dist = |a: &PhasePoint, b: &PhasePoint| {
        if a.scatterer == b.scatterer {
            arc_diff(a.r, b.r, t.perimeter(a.scatterer)).abs().max((a.phi - b.phi).abs())
        } else {
            f64::INFINITY
        }
    };
    let (mut worst_conj, mut worst_ray) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let x = random_point(t, &mut r);
        let y = step(t, &x.reflect()).unwrap().to.reflect();
        if let Ok(z) = step(t, &y) {
            worst_conj = worst_conj.max(dist(&z.to, &x));
        }
        worst_ray = worst_ray.max(backward_raycast(t, &x).map_or(f64::INFINITY, |o| dist(&o, &y)));
    }
    c.item(worst_conj < 1e-10, format!("T(iota T iota x) = x on 10000 points: worst {worst_conj:.2e} (< 1e-10)"));
    c.item(worst_ray < 1e-10, format!("iota T iota vs backward ray cast: worst {worst_ray:.2e} (< 1e-10)"));

    let (mut worst_co, mut n_co) = (0.0f64, 0);
    while n_co < 1000 {
        let x = random_point(t, &mut r);
        let n = r.random_range(1..=5usize);
        let m = r.random_range(1..=5usize);
        let Ok(full) = stable_jacobian(t, &x, n + m) else { continue };
        let y = iterate(t, &x, n as i64).unwrap();
        let (Ok(a), Ok(b)) = (stable_jacobian(t, &x, n), stable_jacobian(t, &y, m)) else { continue };
        worst_co = worst_co.max(rel_err(a * b, full));
        n_co += 1;
    }
    c.item(worst_co < 1e-9, format!("stable Jacobian cocycle on {n_co} splits: worst {worst_co:.2e} (< 1e-9)"));
    c
}

fn criterion_2(t: &TableGeometry) -> Check {
    let mut c = Check::new();
    let mut r = rng(202);
    let (ulo, uhi) = unstable_cone(t);
    let (slo, shi) = stable_cone(t);
    let lambda = t.lambda();

    let mut bad_cone = 0;
    let mut worst_exp = f64::INFINITY;
    let mut bad_exp = 0;
    for _ in 0..10_000 {
        let x = random_point(t, &mut r);
        let st = step(t, &x).unwrap();
        let w: f64 = r.random_range(0.0..=1.0);
        let v1 = push_slope(&st.dt, ulo + w * (uhi - ulo));
        let v0 = pull_slope(&st.dt, slo + w * (shi - slo));
        if !(v1 > ulo && v1 < uhi && v0 > slo && v0 < shi) {
            bad_cone += 1;
        }
        let mut v = TangentVector::from_slope(ulo + w * (uhi - ulo));
        v.metric = Metric::Adapted;
        let mut y = x;
        let n0 = v.norm(t.curvature(y.scatterer));
        for n in 1..=10 {
            let Ok(s) = step(t, &y) else { break };
            v = v.apply(&s.dt);
            y = s.to;
            let ratio = v.norm(t.curvature(y.scatterer)) / n0 / lambda.powi(n);
            worst_exp = worst_exp.min(ratio);
            if ratio < 1.0 - 1e-12 {
                bad_exp += 1;
            }
        }
    }
    c.item(bad_cone == 0, format!("cone invariance at 10000 points: {bad_cone} failures"));
    c.item(bad_exp == 0, format!("adapted expansion >= Lambda^n for n <= 10: {bad_exp} failures, worst ratio {worst_exp:.6}"));

    let (mut out, mut n_dir) = (0, 0);
    while n_dir < 10_000 {
        let x = random_point(t, &mut r);
        let Ok(d) = stable_direction(t, &x, DEFAULT_DEPTH, DEFAULT_TOL) else { continue };
        if !(d.slope >= slo && d.slope <= shi) {
            out += 1;
        }
        n_dir += 1;
    }
    c.item(out == 0, format!("stable slopes in the stable cone at {n_dir} points: {out} outside"));
    c
}

fn criterion_3(t: &TableGeometry) -> Check {
    let mut c = Check::new();
    let lambda = t.lambda();
    let theta = 0.5 * (1.0 / lambda + lambda.powf(-0.5));
    let p = one_step_parameters(t, 0.5, theta, 2000, 0).unwrap();
    c.lines.push(format!(
        "    theta = {theta:.6}, q = {}, k0 = {}, delta0 = {:.3e}",
        p.strips.q, p.strips.k0, p.delta0
    ));
    let mut r = rng(303);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let len = p.delta0 * r.random_range(0.1..1.0);
        let w = random_stable_curve(t, &mut r, len, i % 2 == 1);
        for tt in [0.5, 1.0, 1.5] {
            let s = one_step_expansion_sum_with(t, &w, tt, p.strips).unwrap();
            let ratio = s.sum / theta.powf(tt);
            worst = worst.max(ratio);
            if ratio >= 1.0 {
                violations += 1;
            }
        }
    }
    c.item(violations == 0, format!("100 curves x 3 values of t: {violations} violations, worst sum/theta^t {worst:.4}"));
    c
}

fn criterion_4(t: &TableGeometry, shared: &mut Shared) -> Check {
    let mut c = Check::new();
    let s = shared.survey(t);
    let log_l = t.lambda().ln();
    let slack = 1.05f64.ln();

    let mut sub_bad = 0;
    for tt in [0.5, 1.0, 1.5] {
        for n in 1..8 {
            for k in 1..=8 - n {
                if s.log_q(n + k, tt) > s.log_q(n, tt) + s.log_q(k, tt) + slack {
                    sub_bad += 1;
                }
            }
        }
    }
    c.item(sub_bad == 0, format!("submultiplicativity for n + k <= 8 at t in {{0.5, 1, 1.5}}: {sub_bad} failures"));

    let ts: Vec<f64> = (0..5).map(|k| 0.5 + 0.25 * k as f64).collect();
    let curve = PressureCurve::from_survey(s, &ts);
    let mut widest = 0.0f64;
    for p in &curve.points {
        let (lo, hi) = p.growth.growth_band();
        widest = widest.max(hi - lo);
    }
    c.item(widest <= 10f64.ln(), format!("Q_n e^(-n P) band over n in [2, 8]: widest factor {:.3} (<= 10)", widest.exp()));

    let p1 = curve.at(1.0).unwrap();
    c.item(p1.estimate().abs() <= 0.05, format!("P_*(1) = {:.4} (spread {:.4}, |.| <= 0.05)", p1.estimate(), p1.spread()));

    let mut dec_bad = Vec::new();
    for w in curve.points.windows(2) {
        let allowed = w[0].estimate() - 0.25 * log_l + w[0].spread().max(w[1].spread());
        if w[1].estimate() > allowed {
            dec_bad.push(w[0].t);
        }
    }
    c.item(dec_bad.is_empty(), format!("P_*(t + 0.25) <= P_*(t) - 0.25 log Lambda + spread: failures at {dec_bad:?}"));

    let mut conv_bad = Vec::new();
    for w in curve.points.windows(3) {
        let defect = w[1].estimate() - 0.5 * (w[0].estimate() + w[2].estimate());
        let spread = w.iter().map(|p| p.spread()).fold(0.0, f64::max);
        if defect > spread {
            conv_bad.push(w[1].t);
        }
    }
    c.item(conv_bad.is_empty(), format!("midpoint convexity within spread: failures at {conv_bad:?}"));
    for p in &curve.points {
        c.lines.push(format!("    t = {:.2}: P_* = {:+.4} spread {:.4}", p.t, p.estimate(), p.spread()));
    }
    c
}

fn criterion_5(t: &TableGeometry, shared: &mut Shared) -> Check {
    let mut c = Check::new();
    let sp = shared.spectrum(t);
    let ts = &sp.ts;
    let fine = sp.ladder.finest();
    let coarse = &sp.ladder.levels[0];
    let i1 = idx(ts, 1.0);
    let (lf, lc) = (fine.log_lambda[i1], coarse.log_lambda[i1]);
    c.item(
        lf.abs() <= 0.05 && lf.abs() <= lc.abs() + EIGEN_TOL,
        format!("log lambda_1: coarse {lc:.2e}, fine {lf:.2e} (<= 0.05, not moving away from 0)"),
    );

    let spread = sp.ladder.spread();
    let decreasing = fine.log_lambda.windows(2).all(|w| w[1] < w[0]);
    c.item(decreasing, "log lambda_t strictly decreasing on the 9-point grid".into());
    let mut worst_conv = f64::INFINITY;
    let mut convex = true;
    for k in 1..ts.len() - 1 {
        let d2 = fine.log_lambda[k + 1] - 2.0 * fine.log_lambda[k] + fine.log_lambda[k - 1];
        worst_conv = worst_conv.min(d2);
        convex &= d2 >= -spread[k];
    }
    c.item(convex, format!("discrete convexity: smallest second difference {worst_conv:.2e}"));

    let worst_gap = fine.gap.iter().cloned().fold(0.0, f64::max);
    c.item(worst_gap < 0.98, format!("largest |lambda_2 / lambda_1| over the grid {worst_gap:.4} (< 0.98)"));

    let s = shared.survey(t);
    let curve = PressureCurve::from_survey(s, &[0.8, 1.2]);
    let sp = shared.spectrum.as_ref().unwrap();
    let fine = sp.ladder.finest();
    for p in &curve.points {
        let i = idx(&sp.ts, p.t);
        let diff = (fine.log_lambda[i] - p.estimate()).abs();
        let allowed = spread[i] + p.spread();
        c.item(
            diff <= allowed,
            format!("t = {}: log lambda {:.4} vs P_* {:.4}, |diff| {diff:.4} <= {allowed:.4}", p.t, fine.log_lambda[i], p.estimate()),
        );
    }
    for (k, &tt) in sp.ts.iter().enumerate() {
        c.lines.push(format!(
            "    t = {tt:.1}: log lambda coarse {:+.5} fine {:+.5} spread {:.5} gap {:.4}",
            sp.ladder.levels[0].log_lambda[k], fine.log_lambda[k], spread[k], fine.gap[k]
        ));
    }
    c
}

fn criterion_6(t: &TableGeometry, shared: &mut Shared) -> Check {
    let mut c = Check::new();
    let sp = shared.spectrum(t);
    let fine = sp.levels.last().unwrap();
    let h = 0.01;
    let log_lambda = |tt: f64| {
        let op = UlamOperator::from_samples(&fine.samples, tt).unwrap();
        leading_triple(&op, EIGEN_TOL, 20_000).unwrap().lambda.ln()
    };
    for tt in [0.9, 1.0, 1.1] {
        let d = &sp.derivatives[idx(&sp.ts, tt)];
        let fd = (log_lambda(tt + h) - log_lambda(tt - h)) / (2.0 * h);
        let rel = (fd - d.p1).abs() / d.p1.abs();
        c.item(rel <= 0.05, format!("t = {tt}: central difference {fd:.5} vs P1 {:.5}, relative {rel:.2e}", d.p1));
    }
    let p2_bad: Vec<f64> = sp.derivatives.iter().filter(|d| d.p2 < -d.p2_error()).map(|d| d.t).collect();
    c.item(p2_bad.is_empty(), format!("P2 >= 0 within error on the grid: failures at {p2_bad:?}"));

    let chi_u = birkhoff_lyapunov(t, 1_000_000, SEED).unwrap();
    let i1 = idx(&sp.ts, 1.0);
    let log_l1 = fine.triples[i1].lambda.ln();
    let e1 = entropy_identities(1.0, log_l1, &sp.derivatives[i1], Some(chi_u), None);
    let pesin = e1.pesin_residual.unwrap();
    c.item(pesin <= 0.05, format!("Pesin: h = {:.4}, chi_u = {:.4} +- {:.4}, residual {pesin:.4} (<= 0.05)", e1.entropy, chi_u.0, chi_u.1));

    let curve: Vec<(f64, f64, f64)> = sp
        .ts
        .iter()
        .enumerate()
        .map(|(k, &tt)| {
            let e = entropy_identities(tt, fine.triples[k].lambda.ln(), &sp.derivatives[k], None, None);
            (tt, e.lyapunov, e.entropy)
        })
        .collect();
    let spread = sp.ladder.spread();
    let mut bad = Vec::new();
    for k in 1..curve.len() {
        let (d0, d1) = (&sp.derivatives[k - 1], &sp.derivatives[k]);
        let tol_l = 2.0 * (d0.p1_se + d1.p1_se);
        let tol_h = spread[k - 1] + spread[k] + curve[k].0 * tol_l;
        if curve[k].1 > curve[k - 1].1 + tol_l || curve[k].2 > curve[k - 1].2 + tol_h {
            bad.push(curve[k].0);
        }
    }
    c.item(bad.is_empty(), format!("-P1(t) and h(t) non-increasing within spreads: failures at {bad:?}"));
    for (tt, l, e) in &curve {
        c.lines.push(format!("    t = {tt:.1}: -P1 = {l:.5}, h = {e:.5}"));
    }
    c
}

fn criterion_7(t: &TableGeometry, shared: &mut Shared) -> Check {
    let mut c = Check::new();
    let sp = shared.spectrum(t);
    let coarse = &sp.levels[0];
    for tt in [0.9, 1.0, 1.1] {
        let i = idx(&sp.ts, tt);
        let desk = equilibrium_measure(t, &coarse.ops[i], &coarse.triples[i]).unwrap();
        let refined = invariance_residual(t, &sp.measures[i], &desk.grid, 64, SEED + 7);
        c.item(
            desk.invariance_residual <= 0.05 && refined < desk.invariance_residual,
            format!("t = {tt}: TV residual desk {:.4} (<= 0.05), refined measure on desk cells {refined:.4}", desk.invariance_residual),
        );
    }
    let empty: Vec<f64> = sp.measures.iter().filter(|m| m.min_density() <= 0.0).map(|m| m.t).collect();
    c.item(empty.is_empty(), format!("full support on the 128 x 64 grid: empty cells at {empty:?}"));

    let opts = CurveOptions { resolution: 2e-4, ..Default::default() };
    let s1 = singularity_curves_with(t, 1, opts).unwrap();
    let sm1 = singularity_curves_with(t, -1, opts).unwrap();
    let index = SingularityIndex::new(t, &[&s1, &sm1], true);
    let s0 = SingularityIndex::new(t, &[], true);
    let epsilons: Vec<f64> = (0..8).map(|k| 0.3 * 0.5f64.powi(k)).collect();
    let i1 = idx(&sp.ts, 1.0);
    let m = &sp.measures[i1];
    let sample = sample_measure(m, 100_000, SEED + 71);
    let ad = adaptedness_integral(&sample, &index);
    c.item(
        ad.converged,
        format!("adaptedness at t = 1: integral {:.4} (raw mean {:.4}), shell mass exponent {:.3}", ad.estimate, ad.raw_estimate, ad.mass_exponent),
    );
    match neighborhood_scaling(&sample, &s0, &epsilons) {
        Ok(fit) => c.item(fit.positive, format!("neighbourhood scaling of S0 at t = 1: slope {:.4} (> 0)", fit.slope)),
        Err(e) => c.item(false, format!("neighbourhood scaling: {e}")),
    }
    let params = BowenParams { trials: 40, n_max: 8, epsilon: 0.02, local_samples: 4000, seed: SEED + 72 };
    let log_l = sp.levels.last().unwrap().triples[i1].lambda.ln();
    let b = bowen_ball_check(t, m, log_l, &params, 2).unwrap();
    c.item(
        b.violations == 0,
        format!(
            "Bowen balls at t = 1: {} violations in {} pairs (A = {:.3e} fitted on n <= {}), median slope error {:.3}",
            b.violations,
            b.pairs.len(),
            b.a_fit,
            b.fit_n,
            b.median_slope_error()
        ),
    );
    c
}

fn criterion_8(t: &TableGeometry, shared: &mut Shared) -> Check {
    let mut c = Check::new();
    let sp = shared.spectrum(t);
    let i1 = idx(&sp.ts, 1.0);
    let d = &sp.derivatives[i1];
    let r = clt_check(t, &sp.measures[i1], d.p1, d.p2, 400, 5000, 0.01, SEED + 8);
    c.item(r.pass, format!("KS vs Normal(0, {:.4}): D = {:.4}, p = {:.4} (alpha 0.01)", d.p2, r.ks_distance, r.p_value));
    let rel = (r.block_variance / d.p2 - 1.0).abs();
    c.item(rel <= 0.1, format!("block variance {:.4} vs P2 {:.4}: relative {rel:.4} (<= 0.1)", r.block_variance, d.p2));
    c
}

const DETERMINISM_CONFIG: &str = r#"{
  "seed": 9,
  "t_grid": [0.9, 1.0, 1.1],
  "n_max": 5,
  "grid_ladder": [[16, 8], [32, 16]],
  "samples_per_cell": 64,
  "output": "out",
  "complexity": {"line_spacing": 0.2, "coarse_samples": 32, "cut_resolution": 0.01, "exact_depth": 3, "sampled_cells": 300},
  "statistics": {"sample_size": 20000, "curve_resolution": 2e-3, "bowen_trials": 8, "bowen_local_samples": 1000,
                 "clt_blocks": 1000, "clt_n_block": 100, "lyapunov_steps": 20000}
}"#;

/// Every file under `dir` with its contents, timestamps removed from the manifest.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v["started_at"] = serde_json::Value::Null;
                v["finished_at"] = serde_json::Value::Null;
                for s in v["suites"].as_array_mut().unwrap() {
                    s["seconds"] = serde_json::Value::Null;
                }
                bytes = serde_json::to_vec(&v).unwrap();
            }
            files.push((name, bytes));
        }
    }
    files.sort();
    files
}

fn criterion_9() -> Check {
    let mut c = Check::new();
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    let out = dir.path().join("out");
    let overrides = [("output".to_string(), serde_json::to_string(&out).unwrap())];
    let config = ExperimentConfig::from_json(DETERMINISM_CONFIG, &overrides).unwrap();
    for _ in 0..2 {
        // A fresh directory each time, so the second run cannot reuse cached operators.
        let _ = fs::remove_dir_all(&out);
        run(&config).unwrap();
        runs.push(snapshot(&out));
    }
    let names: Vec<&str> = runs[0].iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    c.item(
        runs[0].len() == runs[1].len() && differing.is_empty(),
        format!("two full runs, {} files each: differing {differing:?}", names.len()),
    );
    c
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let table = table();
    let mut shared = Shared::default();
    let budgets = [30, 60, 120, 300, 600, 300, 300, 300, 600];
    let names = [
        "exact identities",
        "hyperbolicity and cones",
        "one-step expansion",
        "complexity",
        "spectrum",
        "derivatives",
        "measure",
        "central limit theorem",
        "determinism",
    ];
    let mut failed = 0;
    let mut summary = Vec::new();
    for n in 1..=9 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let mut check = match n {
            1 => criterion_1(&table),
            2 => criterion_2(&table),
            3 => criterion_3(&table),
            4 => criterion_4(&table, &mut shared),
            5 => criterion_5(&table, &mut shared),
            6 => criterion_6(&table, &mut shared),
            7 => criterion_7(&table, &mut shared),
            8 => criterion_8(&table, &mut shared),
            _ => criterion_9(),
        };
        let elapsed = start.elapsed();
        let budget = Duration::from_secs(budgets[n - 1]);
        check.item(elapsed <= budget, format!("runtime {:.1} s (budget {} s)", elapsed.as_secs_f64(), budget.as_secs()));
        for l in &check.lines {
            println!("{l}");
        }
        let line = format!("{} criterion {n} ({})", if check.pass { "PASS" } else { "FAIL" }, names[n - 1]);
        println!("{line}");
        summary.push(line);
        if !check.pass {
            failed += 1;
        }
    }
    println!("\nacceptance summary:");
    for l in &summary {
        println!("{l}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
