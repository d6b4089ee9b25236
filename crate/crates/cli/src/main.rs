use std::path::PathBuf;
use std::process::ExitCode;

use billiard_thermo::runner::{clean, run, ExperimentConfig, Suite};
use clap::{Parser, Subcommand};

const KNOWN: [&str; 5] = ["config", "suite", "threads", "seed", "out"];

#[derive(Parser)]
#[command(name = "billiard-thermo", version, about = "Thermodynamic formalism experiments for Sinai billiards")]
#[command(after_help = "Any config key can be overridden with --key=value (nested keys with dots, e.g. --statistics.clt_blocks=2000).\n\
Exit codes: 0 ok, 1 numerical verdict failed, 2 config error, 3 internal error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// geometry, complexity, spectrum, statistics or all.
    #[arg(long)]
    suite: Option<Suite>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected suites and write the artifacts.
    Run(Common),
    /// Parse the config and validate the table without running anything.
    Validate(Common),
    /// Remove the artifacts and caches of a config.
    Clean(Common),
}

/// Splits `--key=value` pairs for config keys that are not CLI flags.
fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            if !KNOWN.contains(&k) {
                overrides.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

fn load(common: &Common, mut overrides: Vec<(String, String)>) -> Result<ExperimentConfig, String> {
    if let Some(s) = common.suite {
        overrides.push(("suite".into(), format!("\"{s}\"")));
    }
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = common.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    if let Some(o) = &common.out {
        overrides.push(("output".into(), serde_json::to_string(o).map_err(|e| e.to_string())?));
    }
    ExperimentConfig::load(&common.config, &overrides).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = std::panic::catch_unwind(|| execute(cli, overrides));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}

fn execute(cli: Cli, overrides: Vec<(String, String)>) -> u8 {
    let (common, command) = match &cli.command {
        Command::Run(c) => (c, "run"),
        Command::Validate(c) => (c, "validate"),
        Command::Clean(c) => (c, "clean"),
    };
    let config = match load(common, overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match command {
        "validate" => match config.load_table() {
            Ok((table, report)) => {
                println!(
                    "config ok: {} scatterers, finite horizon, tau_min = {:.6}, tau_max = {:.6}, Lambda = {:.6}",
                    table.scatterer_count(),
                    report.tau_min,
                    report.tau_max,
                    report.lambda
                );
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        "clean" => match clean(&config) {
            Ok(removed) => {
                for p in removed {
                    println!("removed {}", p.display());
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                3
            }
        },
        _ => {
            if let Some(n) = config.threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot configure {n} threads: {e}");
                    return 3;
                }
            }
            match run(&config) {
                Ok(outcome) => {
                    let m = &outcome.manifest;
                    for s in &m.suites {
                        let err = s.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default();
                        println!("suite {:<10} {:<7} {:>8.1} s{err}", s.suite, s.status, s.seconds);
                    }
                    for v in &m.verdicts {
                        println!("{} {}/{}: {}", if v.pass { "PASS" } else { "FAIL" }, v.suite, v.name, v.detail);
                    }
                    for w in &m.warnings {
                        println!("warning: {w}");
                    }
                    println!("manifest: {}", outcome.manifest_path.display());
                    outcome.exit_code() as u8
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code() as u8
                }
            }
        }
    }
}
