//! Experiment orchestration: config files, artifact layout, caching and verdicts.
//!
//! A run writes into the output directory:
//!
//! - `manifest.json`: versions, seed, resolved config, per-suite status and timings
//! - `validation_report.json`: table validation (geometry suite)
//! - `pressure_curve.csv`: `P̂_*(t)` and `log λ̂_t` side by side
//! - `spectrum_report.json`, `statistics_report.json`
//! - `diagnostics/`: singularity polylines, complexity details, cell measures
//! - `cache/`: Ulam operators keyed by [`cache_key`]

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::complexity::{
    estimate_h_star, estimate_t_star, survey, EntropyEstimate, PressureCurve, SamplingPlan, TStar, MAX_ITINERARY,
};
use crate::geometry::{validate_table, TableConfig, TableGeometry, ValidationReport};
use crate::singularity::{singularity_curves_with, CurveOptions, SingularityIndex};
use crate::thermo_statistics::{
    adaptedness_integral, birkhoff_lyapunov, bowen_ball_check, chi_square, clt_check, entropy_identities, neighborhood_scaling,
    sample_measure, BowenParams, StatisticsReport,
};
use crate::transfer_spectrum::{
    collect_samples, equilibrium_measure, leading_triple, log_lambda_se, pressure_derivatives, read_operator_cache,
    second_eigenvalue, write_operator_cache, DerivativeEstimate, EquilibriumMeasure, GridSpec, LeadingTriple, LevelPressure,
    SpectralPressure, SpectrumReport, UlamOperator, UlamSamples, CACHE_VERSION,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Version string folded into every cache key.
pub fn code_version() -> String {
    format!("{VERSION}+ulam{CACHE_VERSION}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Geometry,
    Complexity,
    Spectrum,
    Statistics,
    All,
}

impl Suite {
    pub const ORDER: [Suite; 4] = [Suite::Geometry, Suite::Complexity, Suite::Spectrum, Suite::Statistics];

    pub fn includes(self, s: Suite) -> bool {
        self == Suite::All || self == s
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Complexity => "complexity",
            Suite::Spectrum => "spectrum",
            Suite::Statistics => "statistics",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "complexity" => Ok(Suite::Complexity),
            "spectrum" => Ok(Suite::Spectrum),
            "statistics" => Ok(Suite::Statistics),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite {s:?} (expected geometry, complexity, spectrum, statistics or all)")),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatisticsConfig {
    /// Values of `t` that get the sampling-based checks.
    pub ts: Vec<f64>,
    pub sample_size: usize,
    pub curve_resolution: f64,
    pub epsilons: Vec<f64>,
    pub bowen_trials: usize,
    pub bowen_n_max: usize,
    pub bowen_epsilon: f64,
    pub bowen_local_samples: usize,
    /// `A` is fitted on `n <= bowen_fit_n` and tested on larger `n`.
    pub bowen_fit_n: usize,
    pub clt_n_block: usize,
    pub clt_blocks: usize,
    pub alpha: f64,
    pub lyapunov_steps: usize,
}

impl Default for StatisticsConfig {
    fn default() -> Self {
        Self {
            ts: vec![1.0],
            sample_size: 100_000,
            curve_resolution: 2e-4,
            epsilons: (0..8).map(|k| 0.3 * 0.5f64.powi(k)).collect(),
            bowen_trials: 40,
            bowen_n_max: 8,
            bowen_epsilon: 0.02,
            bowen_local_samples: 4000,
            bowen_fit_n: 2,
            clt_n_block: 400,
            clt_blocks: 5000,
            alpha: 0.01,
            lyapunov_steps: 1_000_000,
        }
    }
}

fn default_t_grid() -> Vec<f64> {
    (0..9).map(|i| 0.6 + 0.1 * i as f64).map(|t: f64| (t * 10.0).round() / 10.0).collect()
}

fn default_suite() -> Suite {
    Suite::All
}

fn default_n_max() -> usize {
    8
}

fn default_ladder() -> Vec<[usize; 2]> {
    vec![[64, 32], [128, 64]]
}

fn default_spc() -> usize {
    256
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_eigen_tol() -> f64 {
    1e-10
}

fn default_k_trunc() -> usize {
    40
}

fn default_direction_samples() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Table description, relative to the config file; the default table when absent.
    #[serde(default)]
    pub table: Option<PathBuf>,
    pub seed: u64,
    #[serde(default = "default_suite")]
    pub suite: Suite,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// `[nr, ns]` per level, coarse to fine.
    #[serde(default = "default_ladder")]
    pub grid_ladder: Vec<[usize; 2]>,
    #[serde(default = "default_spc")]
    pub samples_per_cell: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_eigen_tol")]
    pub eigen_tol: f64,
    #[serde(default = "default_k_trunc")]
    pub k_trunc: usize,
    #[serde(default = "default_direction_samples")]
    pub direction_samples: usize,
    /// Complexity sampling; its seed is replaced by the run seed.
    #[serde(default)]
    pub complexity: SamplingPlan,
    #[serde(default)]
    pub statistics: StatisticsConfig,
}

/// Config problem, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

/// Sets `a.b.c = value` in a JSON object, parsing `value` as JSON and falling
/// back to a plain string.
pub fn apply_override(root: &mut Value, key: &str, value: &str) -> Result<(), ConfigError> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(config_error(key, "empty key segment"));
        }
        let obj = node.as_object_mut().ok_or_else(|| config_error(key, "parent is not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses a config with `key=value` overrides applied on top.
    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| config_error("<root>", e.to_string()))?;
        if !value.is_object() {
            return Err(config_error("<root>", "config must be a JSON object"));
        }
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let config: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            // Missing fields are reported on the parent; name them directly.
            let field = match inner.strip_prefix("missing field `").and_then(|s| s.split('`').next()) {
                Some(name) if path == "." => name.to_string(),
                Some(name) => format!("{path}.{name}"),
                None => path,
            };
            config_error(&field, inner)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text, overrides)?;
        if let Some(t) = &config.table {
            if t.is_relative() {
                config.table = Some(path.parent().unwrap_or(Path::new(".")).join(t));
            }
        }
        if config.output.is_relative() && !overrides.iter().any(|(k, _)| k == "output") {
            config.output = path.parent().unwrap_or(Path::new(".")).join(&config.output);
        }
        Ok(config)
    }

    /// Range checks that do not need the table.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(config_error("t_grid", "needs at least one positive, finite value"));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error("t_grid", "must be strictly increasing"));
        }
        if !(4..=MAX_ITINERARY).contains(&self.n_max) {
            return Err(config_error("n_max", format!("must lie in 4..={MAX_ITINERARY}")));
        }
        if self.grid_ladder.is_empty() || self.grid_ladder.iter().any(|g| g[0] == 0 || g[1] == 0) {
            return Err(config_error("grid_ladder", "needs at least one level with positive dimensions"));
        }
        if self.grid_ladder.windows(2).any(|w| w[1][0] * w[1][1] <= w[0][0] * w[0][1]) {
            return Err(config_error("grid_ladder", "levels must refine from coarse to fine"));
        }
        if self.samples_per_cell < 16 {
            return Err(config_error("samples_per_cell", "must be at least 16"));
        }
        if self.threads == Some(0) {
            return Err(config_error("threads", "must be positive"));
        }
        if !(self.eigen_tol > 0.0 && self.eigen_tol < 1e-3) {
            return Err(config_error("eigen_tol", "must lie in (0, 1e-3)"));
        }
        if self.k_trunc < 10 {
            return Err(config_error("k_trunc", "must be at least 10"));
        }
        if self.direction_samples < 1000 {
            return Err(config_error("direction_samples", "must be at least 1000"));
        }
        let s = &self.statistics;
        if s.ts.iter().any(|t| !self.t_grid.contains(t)) {
            return Err(config_error("statistics.ts", "every value must also appear in t_grid"));
        }
        if s.sample_size < 1000 {
            return Err(config_error("statistics.sample_size", "must be at least 1000"));
        }
        if !(s.curve_resolution > 0.0) {
            return Err(config_error("statistics.curve_resolution", "must be positive"));
        }
        if s.epsilons.len() < 3 || s.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(config_error("statistics.epsilons", "needs at least three positive values"));
        }
        if s.bowen_fit_n == 0 || s.bowen_fit_n >= s.bowen_n_max {
            return Err(config_error("statistics.bowen_fit_n", "must lie in 1..bowen_n_max"));
        }
        if !(s.bowen_epsilon > 0.0) {
            return Err(config_error("statistics.bowen_epsilon", "must be positive"));
        }
        if s.bowen_trials == 0 || s.bowen_local_samples < 100 {
            return Err(config_error("statistics.bowen_trials", "needs trials > 0 and at least 100 local samples"));
        }
        if s.clt_n_block == 0 || s.clt_blocks < 2 {
            return Err(config_error("statistics.clt_blocks", "needs n_block > 0 and at least two blocks"));
        }
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            return Err(config_error("statistics.alpha", "must lie in (0, 1)"));
        }
        if s.lyapunov_steps < 2000 {
            return Err(config_error("statistics.lyapunov_steps", "must be at least 2000"));
        }
        Ok(())
    }

    /// The config without output location, thread count and table path; the
    /// table enters cache keys by content.
    pub fn semantic(&self) -> Self {
        Self { table: None, output: PathBuf::new(), threads: None, ..self.clone() }
    }

    pub fn ladder(&self) -> Vec<GridSpec> {
        self.grid_ladder.iter().map(|g| GridSpec::new(g[0], g[1])).collect()
    }

    /// Reads and validates the table.
    pub fn load_table(&self) -> Result<(TableGeometry, ValidationReport), ConfigError> {
        let config = match &self.table {
            None => TableConfig::default_table(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| config_error("table", format!("{}: {e}", p.display())))?;
                TableConfig::from_json(&text).map_err(|e| config_error("table", e.to_string()))?
            }
        };
        let table = TableGeometry::new(&config).map_err(|e| config_error("table", e.to_string()))?;
        if self.statistics.bowen_epsilon >= table.delta0 {
            return Err(config_error("statistics.bowen_epsilon", format!("must be below delta0 = {}", table.delta0)));
        }
        let report = validate_table(&table, self.direction_samples, table.horizon_bound)
            .map_err(|e| config_error("table", e.to_string()))?;
        if !report.finite_horizon {
            return Err(config_error("table", "the table does not have finite horizon"));
        }
        Ok((table.with_validation(&report), report))
    }
}

#[derive(Serialize)]
struct KeyInputs<'a, P: Serialize> {
    table: &'a TableConfig,
    params: &'a P,
    seed: u64,
    code_version: String,
}

/// SHA-256 over the table, module parameters, seed and code version.
pub fn cache_key<P: Serialize>(table: &TableConfig, params: &P, seed: u64) -> String {
    let inputs = KeyInputs { table, params, seed, code_version: code_version() };
    let bytes = serde_json::to_vec(&inputs).expect("cache key inputs serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub suite: Suite,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRecord {
    pub suite: Suite,
    /// `ok`, `failed` or `skipped`.
    pub status: String,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub program: String,
    pub version: String,
    pub code_version: String,
    pub seed: u64,
    pub cache_key: String,
    pub config: ExperimentConfig,
    pub table: TableConfig,
    pub suites: Vec<SuiteRecord>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(std::io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

impl RunOutcome {
    /// 0 when everything ran and passed, 3 after a module error, 1 after a failed verdict.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.suites.iter().any(|s| s.status == "failed") {
            3
        } else if self.manifest.verdicts.iter().any(|v| !v.pass) {
            1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityArtifact {
    pub curve: PressureCurve,
    pub h_star: EntropyEstimate,
    pub t_star: TStar,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumArtifact {
    pub ladder: SpectralPressure,
    pub extrapolated: Vec<f64>,
    pub spread: Vec<f64>,
    /// Finest level, one entry per `t`.
    pub reports: Vec<SpectrumReport>,
}

/// Finest-level solution at one `t`.
struct Solution {
    triple: LeadingTriple,
    measure: EquilibriumMeasure,
    derivatives: DerivativeEstimate,
}

#[derive(Default)]
struct State {
    validation: Option<ValidationReport>,
    complexity: Option<ComplexityArtifact>,
    spectrum: Option<SpectrumArtifact>,
    solutions: BTreeMap<u64, Solution>,
    verdicts: Vec<Verdict>,
    warnings: Vec<String>,
    artifacts: Vec<String>,
}

impl State {
    fn verdict(&mut self, suite: Suite, name: &str, pass: bool, detail: String) {
        self.verdicts.push(Verdict { suite, name: name.into(), pass, detail });
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Runs the selected suites, writing every artifact under `config.output`.
/// Module failures are recorded in the manifest rather than returned.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let started_at = unix_now();
    let (table, validation) = config.load_table()?;
    let out = &config.output;
    fs::create_dir_all(out.join("diagnostics"))?;
    fs::create_dir_all(out.join("cache"))?;
    let mut state = State { validation: Some(validation), ..Default::default() };
    let mut suites = Vec::new();
    let mut failed = false;
    for suite in Suite::ORDER {
        if !config.suite.includes(suite) {
            continue;
        }
        if failed {
            suites.push(SuiteRecord { suite, status: "skipped".into(), error: Some("an earlier suite failed".into()), seconds: 0.0 });
            continue;
        }
        let clock = Instant::now();
        let result = match suite {
            Suite::Geometry => run_geometry(config, &table, &mut state),
            Suite::Complexity => run_complexity(config, &table, &mut state),
            Suite::Spectrum => run_spectrum(config, &table, &mut state),
            Suite::Statistics => run_statistics(config, &table, &mut state),
            Suite::All => unreachable!(),
        };
        let seconds = clock.elapsed().as_secs_f64();
        match result {
            Ok(()) => suites.push(SuiteRecord { suite, status: "ok".into(), error: None, seconds }),
            Err(e) => {
                failed = true;
                suites.push(SuiteRecord { suite, status: "failed".into(), error: Some(e), seconds });
            }
        }
    }
    if state.complexity.is_some() || state.spectrum.is_some() {
        write_pressure_csv(&out.join("pressure_curve.csv"), config, &state)?;
        state.artifacts.push("pressure_curve.csv".into());
    }
    let table_config = table.config();
    let manifest = Manifest {
        program: "billiard-thermo".into(),
        version: VERSION.into(),
        code_version: code_version(),
        seed: config.seed,
        cache_key: cache_key(&table_config, &config.semantic(), config.seed),
        config: config.clone(),
        table: table_config,
        suites,
        verdicts: state.verdicts,
        warnings: state.warnings,
        artifacts: state.artifacts,
        started_at,
        finished_at: unix_now(),
    };
    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(RunOutcome { manifest, manifest_path })
}

/// Removes every artifact a run can write.
pub fn clean(config: &ExperimentConfig) -> std::io::Result<Vec<PathBuf>> {
    let out = &config.output;
    let mut removed = Vec::new();
    for name in [
        "manifest.json",
        "validation_report.json",
        "pressure_curve.csv",
        "spectrum_report.json",
        "statistics_report.json",
    ] {
        let p = out.join(name);
        if p.exists() {
            fs::remove_file(&p)?;
            removed.push(p);
        }
    }
    for dir in ["diagnostics", "cache"] {
        let p = out.join(dir);
        if p.exists() {
            fs::remove_dir_all(&p)?;
            removed.push(p);
        }
    }
    Ok(removed)
}

fn run_geometry(config: &ExperimentConfig, table: &TableGeometry, state: &mut State) -> Result<(), String> {
    let out = &config.output;
    let report = state.validation.clone().expect("validated before the suites");
    write_json(&out.join("validation_report.json"), &report).map_err(|e| e.to_string())?;
    state.artifacts.push("validation_report.json".into());
    let opts = CurveOptions::default();
    for level in [1, -1] {
        let set = singularity_curves_with(table, level, opts).map_err(|e| e.to_string())?;
        if !set.complete {
            state.warnings.push(format!("singularity curves S{level} stopped at the vertex budget"));
        }
        let name = format!("diagnostics/singularity_S{level}.csv");
        let mut f = std::io::BufWriter::new(fs::File::create(out.join(&name)).map_err(|e| e.to_string())?);
        set.write_csv(&mut f).and_then(|_| f.flush()).map_err(|e| e.to_string())?;
        state.artifacts.push(name);
    }
    state.verdict(Suite::Geometry, "finite_horizon", report.finite_horizon, format!("tau_max = {}", report.tau_max));
    Ok(())
}

fn run_complexity(config: &ExperimentConfig, table: &TableGeometry, state: &mut State) -> Result<(), String> {
    let plan = SamplingPlan { seed: config.seed, ..config.complexity.clone() };
    let s = survey(table, config.n_max, None, &plan).map_err(|e| e.to_string())?;
    let curve = PressureCurve::from_survey(&s, &config.t_grid);
    let h_star = estimate_h_star(table, config.n_max, &plan).map_err(|e| e.to_string())?;
    let lambda = table.lambda();
    let t_star = estimate_t_star(&curve, lambda).map_err(|e| e.to_string())?;
    if let TStar::Bounded { t, .. } = t_star {
        let beyond: Vec<f64> = config.t_grid.iter().cloned().filter(|&x| x >= t).collect();
        if !beyond.is_empty() {
            state.warnings.push(format!("t_grid values {beyond:?} are not below the estimated t_* = {t:.4}"));
        }
    }
    if let Some(p) = curve.at(1.0) {
        let pass = p.estimate().abs() <= 0.05;
        state.verdict(Suite::Complexity, "pressure_at_one", pass, format!("P_*(1) = {:.4} ± {:.4}", p.estimate(), p.spread()));
    }
    let decreasing = curve.points.windows(2).all(|w| w[1].estimate() <= w[0].estimate() + w[0].spread() + w[1].spread());
    state.verdict(Suite::Complexity, "pressure_decreasing", decreasing, "P_*(t) non-increasing within spreads".into());
    let artifact = ComplexityArtifact { curve, h_star, t_star, lambda };
    write_json(&config.output.join("diagnostics/complexity.json"), &artifact).map_err(|e| e.to_string())?;
    state.artifacts.push("diagnostics/complexity.json".into());
    state.complexity = Some(artifact);
    Ok(())
}

#[derive(Serialize)]
struct OperatorKey {
    kind: &'static str,
    grid: GridSpec,
    samples_per_cell: usize,
    t: f64,
}

/// Operators of one ladder level for every `t`, from the cache when possible.
fn level_operators(
    config: &ExperimentConfig,
    table: &TableGeometry,
    spec: GridSpec,
    seed: u64,
    ts: &[f64],
) -> Result<Vec<UlamOperator>, String> {
    let table_config = table.config();
    let paths: Vec<PathBuf> = ts
        .iter()
        .map(|&t| {
            let key = OperatorKey { kind: "ulam-operator", grid: spec, samples_per_cell: config.samples_per_cell, t };
            config.output.join("cache").join(format!("ulam-{}.bin", cache_key(&table_config, &key, seed)))
        })
        .collect();
    let mut samples: Option<UlamSamples> = None;
    let mut ops = Vec::with_capacity(ts.len());
    for (&t, path) in ts.iter().zip(&paths) {
        // Any mismatch in a cached file means recomputing.
        let cached = read_operator_cache(path).ok().filter(|op| op.t == t && op.seed == seed && op.grid.spec == spec);
        let op = match cached {
            Some(op) => op,
            None => {
                if samples.is_none() {
                    samples = Some(collect_samples(table, spec, config.samples_per_cell, seed).map_err(|e| e.to_string())?);
                }
                let op = UlamOperator::from_samples(samples.as_ref().unwrap(), t).map_err(|e| e.to_string())?;
                write_operator_cache(path, &op).map_err(|e| e.to_string())?;
                op
            }
        };
        ops.push(op);
    }
    Ok(ops)
}

fn t_key(t: f64) -> u64 {
    t.to_bits()
}

fn run_spectrum(config: &ExperimentConfig, table: &TableGeometry, state: &mut State) -> Result<(), String> {
    let ladder = config.ladder();
    let ts = &config.t_grid;
    let mut levels = Vec::new();
    let mut reports = Vec::new();
    for (k, &spec) in ladder.iter().enumerate() {
        let seed = config.seed.wrapping_add(k as u64);
        let ops = level_operators(config, table, spec, seed, ts)?;
        let mut level = LevelPressure { grid: spec, cells: ops[0].dim(), log_lambda: vec![], se: vec![], gap: vec![] };
        let finest = k + 1 == ladder.len();
        for op in ops {
            let triple = leading_triple(&op, config.eigen_tol, 20_000).map_err(|e| format!("t = {}: {e}", op.t))?;
            level.log_lambda.push(triple.lambda.ln());
            level.se.push(log_lambda_se(&op, &triple));
            if finest {
                let measure = equilibrium_measure(table, &op, &triple).map_err(|e| e.to_string())?;
                level.gap.push(measure.gap.ratio);
                let derivatives = pressure_derivatives(&op, &measure, config.k_trunc).map_err(|e| e.to_string())?;
                reports.push(SpectrumReport::new(&op, &triple, &measure, &derivatives));
                state.solutions.insert(t_key(op.t), Solution { triple, measure, derivatives });
            } else {
                level.gap.push(second_eigenvalue(&op, &triple).ratio);
            }
        }
        levels.push(level);
    }
    let ladder = SpectralPressure { ts: ts.clone(), levels };
    let artifact = SpectrumArtifact { extrapolated: ladder.extrapolated(), spread: ladder.spread(), ladder, reports };

    let fine = artifact.ladder.finest();
    if let Some(i) = ts.iter().position(|&t| t == 1.0) {
        let v = fine.log_lambda[i];
        state.verdict(Suite::Spectrum, "srb_eigenvalue", v.abs() <= 0.05, format!("log lambda(1) = {v:.3e}"));
        let r = &artifact.reports[i];
        state.verdict(
            Suite::Spectrum,
            "invariance_residual",
            r.invariance_residual <= 0.05,
            format!("TV residual at t = 1: {:.4}", r.invariance_residual),
        );
    }
    let worst_gap = fine.gap.iter().cloned().fold(0.0, f64::max);
    state.verdict(Suite::Spectrum, "spectral_gap", worst_gap < 0.98, format!("largest |lambda_2/lambda_1| = {worst_gap:.4}"));
    let decreasing = (1..ts.len()).all(|i| fine.log_lambda[i] <= fine.log_lambda[i - 1] + 2.0 * (fine.se[i] + fine.se[i - 1]));
    state.verdict(Suite::Spectrum, "pressure_decreasing", decreasing, "log lambda_t non-increasing within 2 SE".into());
    for r in &artifact.reports {
        for w in r.warnings.iter().chain(r.gap_warning.iter()) {
            state.warnings.push(format!("spectrum t = {}: {w}", r.t));
        }
    }

    write_json(&config.output.join("spectrum_report.json"), &artifact).map_err(|e| e.to_string())?;
    state.artifacts.push("spectrum_report.json".into());
    for &t in &config.statistics.ts {
        let sol = &state.solutions[&t_key(t)];
        let name = format!("diagnostics/cells_t{t:.3}.csv");
        write_cells(&config.output.join(&name), sol).map_err(|e| e.to_string())?;
        state.artifacts.push(name);
    }
    state.spectrum = Some(artifact);
    Ok(())
}

fn write_cells(path: &Path, sol: &Solution) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "cell,scatterer_id,r0,r1,s0,s1,mu_srb,mu_t,nu,nu_tilde")?;
    let m = &sol.measure;
    for i in 0..m.mu_cells.len() {
        let (s, r, sn) = m.grid.bounds(i);
        writeln!(
            f,
            "{i},{s},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r[0], r[1], sn[0], sn[1], m.grid.mu[i], m.mu_cells[i], m.nu[i], m.nu_tilde[i]
        )?;
    }
    f.flush()
}

fn run_statistics(config: &ExperimentConfig, table: &TableGeometry, state: &mut State) -> Result<(), String> {
    if state.solutions.is_empty() {
        // Statistics alone still needs the equilibrium states.
        run_spectrum(config, table, state)?;
    }
    let sc = &config.statistics;
    let h_star = state.complexity.as_ref().map(|c| (c.h_star.growth.estimate, c.h_star.growth.spread));
    let chi_u = birkhoff_lyapunov(table, sc.lyapunov_steps, config.seed ^ 0x6c79_6170).map_err(|e| e.to_string())?;
    let opts = CurveOptions { resolution: sc.curve_resolution, ..Default::default() };
    let s1 = singularity_curves_with(table, 1, opts).map_err(|e| e.to_string())?;
    let sm1 = singularity_curves_with(table, -1, opts).map_err(|e| e.to_string())?;
    let index = SingularityIndex::new(table, &[&s1, &sm1], true);
    let s0 = SingularityIndex::new(table, &[], true);

    let solutions = std::mem::take(&mut state.solutions);
    let mut reports = Vec::new();
    let mut entropy_curve = Vec::new();
    for (i, &t) in config.t_grid.iter().enumerate() {
        let sol = &solutions[&t_key(t)];
        let log_lambda = sol.triple.lambda.ln();
        let entropy = entropy_identities(t, log_lambda, &sol.derivatives, Some(chi_u), h_star);
        entropy_curve.push((t, -sol.derivatives.p1, entropy.entropy, sol.derivatives.p1_se));
        let mut report = StatisticsReport {
            t,
            seed: config.seed,
            version: VERSION.into(),
            sample_size: 0,
            adaptedness: None,
            scaling: None,
            entropy: Some(entropy),
            bowen: None,
            clt: None,
        };
        if let Some(false) = report.entropy.as_ref().unwrap().below_h_star {
            state.warnings.push(format!("entropy at t = {t} exceeds h_* + spread"));
        }
        if sc.ts.contains(&t) {
            let seed = config.seed.wrapping_add(1000 + i as u64);
            let m = &sol.measure;
            let sample = sample_measure(m, sc.sample_size, seed);
            report.sample_size = sample.len();
            let (_, _, p) = chi_square(&sample.cell_histogram(&m.grid), &m.mu_cells, sample.len());
            state.verdict(Suite::Statistics, &format!("sampler_chi_square_t{t}"), p >= sc.alpha, format!("p = {p:.4}"));
            let ad = adaptedness_integral(&sample, &index);
            state.verdict(
                Suite::Statistics,
                &format!("adaptedness_t{t}"),
                ad.converged,
                format!("integral {:.4}, mass exponent {:.3}", ad.estimate, ad.mass_exponent),
            );
            report.adaptedness = Some(ad);
            match neighborhood_scaling(&sample, &s0, &sc.epsilons) {
                Ok(fit) => {
                    state.verdict(Suite::Statistics, &format!("scaling_t{t}"), fit.positive, format!("slope {:.4}", fit.slope));
                    report.scaling = Some(fit);
                }
                Err(e) => state.verdict(Suite::Statistics, &format!("scaling_t{t}"), false, e.to_string()),
            }
            let params = BowenParams {
                trials: sc.bowen_trials,
                n_max: sc.bowen_n_max,
                epsilon: sc.bowen_epsilon,
                local_samples: sc.bowen_local_samples,
                seed: seed ^ 0xb0_7e,
            };
            let bowen = bowen_ball_check(table, m, log_lambda, &params, sc.bowen_fit_n).map_err(|e| e.to_string())?;
            state.verdict(
                Suite::Statistics,
                &format!("bowen_t{t}"),
                bowen.violations == 0,
                format!("{} violations over {} centres, A = {:.4e}", bowen.violations, bowen.centres, bowen.a_fit),
            );
            report.bowen = Some(bowen);
            let clt = clt_check(
                table,
                m,
                sol.derivatives.p1,
                sol.derivatives.p2,
                sc.clt_n_block,
                sc.clt_blocks,
                sc.alpha,
                seed ^ 0xc1_7,
            );
            state.verdict(Suite::Statistics, &format!("clt_t{t}"), clt.pass, format!("KS p = {:.4}", clt.p_value));
            if clt.skipped.is_none() {
                let rel = (clt.block_variance / sol.derivatives.p2 - 1.0).abs();
                state.verdict(Suite::Statistics, &format!("clt_variance_t{t}"), rel <= 0.1, format!("relative error {rel:.4}"));
            }
            for w in &clt.warnings {
                state.warnings.push(format!("clt t = {t}: {w}"));
            }
            report.clt = Some(clt);
            if let Some(r) = report.entropy.as_ref().unwrap().pesin_residual {
                state.verdict(Suite::Statistics, "pesin", r <= 0.05, format!("relative residual {r:.4}"));
            }
        }
        reports.push(report);
    }
    state.solutions = solutions;
    // −P̂₁ and ĥ should both decrease with t.
    let monotone = entropy_curve.windows(2).all(|w| {
        let tol = 2.0 * (w[0].3 + w[1].3);
        w[1].1 <= w[0].1 + tol && w[1].2 <= w[0].2 + tol * (1.0 + w[1].0)
    });
    state.verdict(Suite::Statistics, "lyapunov_entropy_monotone", monotone, "-P1(t) and h(t) non-increasing within 2 SE".into());
    write_json(&config.output.join("statistics_report.json"), &reports).map_err(|e| e.to_string())?;
    state.artifacts.push("statistics_report.json".into());
    Ok(())
}

fn write_pressure_csv(path: &Path, config: &ExperimentConfig, state: &State) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t,p_star,p_star_spread,log_lambda,log_lambda_se,log_lambda_spread")?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for (i, &t) in config.t_grid.iter().enumerate() {
        let c = state.complexity.as_ref().and_then(|c| c.curve.at(t));
        let s = state.spectrum.as_ref();
        writeln!(
            f,
            "{t},{},{},{},{},{}",
            cell(c.map(|p| p.estimate())),
            cell(c.map(|p| p.spread())),
            cell(s.map(|s| s.ladder.finest().log_lambda[i])),
            cell(s.map(|s| s.ladder.finest().se[i])),
            cell(s.map(|s| s.spread[i])),
        )?;
    }
    f.flush()
}
