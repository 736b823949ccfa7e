//! Command-line surface: `collect`, `run`, and `verify` subcommands over a
//! JSON experiment configuration.

use crate::closed_loop::{
    logs_to_csv, run_closed_loop_sink, summarize_samples, DpcController, LoopSetup, StepLog,
};
use crate::config::ExperimentConfig;
use crate::data::{
    add_output_noise, build_hankel, check_persistency, check_rank, collect_excitation,
    trajectory_to_csv, NoiseSpec, RANK_TOL,
};
use crate::decoder::Method;
use crate::error::{Error, Result};
use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Configuration shipped with the crate; used when `--config` is absent.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.json");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA_QUALITY: i32 = 2;
pub const EXIT_PROPERTY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fcs-dpc", version, about = "Finite-control-set data-driven predictive control toolkit")]
pub struct Cli {
    /// Path to a JSON experiment configuration (defaults to the shipped one).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Solver method override (sda|enum); replaces the configured list.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Prediction horizon override; disables any configured sweep.
    #[arg(long, global = true)]
    pub nf: Option<usize>,
    /// Seed override for both data collection and the closed loop.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Record sphere-decoder search traces.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect excitation data and report the rank diagnostics.
    Collect,
    /// Run the closed-loop experiment for each configured method and horizon.
    Run,
    /// Run the property suite and print a pass/fail table.
    Verify,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::parse(DEFAULT_CONFIG)?,
    };
    if let Some(out) = &cli.out {
        cfg.output.directory = out.to_string_lossy().into_owned();
    }
    if let Some(method) = &cli.method {
        crate::config::parse_method(method)?;
        cfg.closed_loop.methods = vec![method.clone()];
    }
    if let Some(nf) = cli.nf {
        cfg.horizons.n_f = nf;
        cfg.closed_loop.n_f_sweep = None;
    }
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.closed_loop.seed = seed;
    }
    if cli.trace {
        cfg.output.trace = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::RankDeficient { .. } | Error::ZeroSignalPower { .. } => EXIT_DATA_QUALITY,
        _ => EXIT_CONFIG,
    }
}

/// Entry point used by `main`; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match cli.command {
        Command::Collect => cmd_collect(&cfg),
        Command::Run => cmd_run(&cfg),
        Command::Verify => cmd_verify(&cfg),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.directory);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<i32> {
    let model = cfg.plant_model()?;
    let cs = cfg.control_set(model.m())?;
    let required = cfg.horizons.n_p + cfg.horizons.n_f + 1;
    if cfg.data.collect_steps < required {
        return Err(Error::TooShort {
            required,
            actual: cfg.data.collect_steps,
        });
    }
    let dir = out_dir(cfg)?;
    let x0 = nalgebra::DVector::zeros(model.n());
    let traj = collect_excitation(&model, &cs, cfg.data.collect_steps, cfg.data.seed, &x0)?;
    let noisy = add_output_noise(
        &traj,
        &NoiseSpec {
            snr_db: cfg.data.snr_db,
            seed: cfg.data.seed.wrapping_add(1),
        },
    )?;
    fs::write(dir.join("trajectory.csv"), trajectory_to_csv(&noisy))?;
    let d = build_hankel(&noisy, cfg.horizons.n_p, cfg.horizons.n_f)?;
    let rank = check_rank(&d, model.n(), RANK_TOL)?;
    let persistent = check_persistency(&noisy.u, cfg.horizons.n_p + cfg.horizons.n_f)?;
    // for regularized DPC on noisy data the usable condition is full row
    // rank of the stacked data matrix plus persistent excitation
    let satisfied = rank.full_row_rank && persistent;
    let report = serde_json::json!({
        "rank": rank,
        "persistently_exciting": persistent,
        "satisfied": satisfied,
    });
    fs::write(
        dir.join("rank_report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!(
        "collected {} steps -> {} ({})",
        cfg.data.collect_steps,
        dir.display(),
        if satisfied { "data checks passed" } else { "data checks FAILED" }
    );
    Ok(if satisfied { EXIT_OK } else { EXIT_DATA_QUALITY })
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<i32> {
    let model = cfg.plant_model()?;
    let cs = cfg.control_set(model.m())?;
    let dir = out_dir(cfg)?;
    let x0 = nalgebra::DVector::zeros(model.n());
    let traj = collect_excitation(&model, &cs, cfg.data.collect_steps, cfg.data.seed, &x0)?;
    let noisy = add_output_noise(
        &traj,
        &NoiseSpec {
            snr_db: cfg.data.snr_db,
            seed: cfg.data.seed.wrapping_add(1),
        },
    )?;
    let reference = cfg.reference_signal();
    let methods = cfg.methods()?;
    let mut timings: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for n_f in cfg.n_f_values() {
        let d = build_hankel(&noisy, cfg.horizons.n_p, n_f)?;
        let wc = cfg.weight_config(model.p(), n_f)?;
        let mut ctrl = DpcController::fit(&d, &cs, wc)?;
        ctrl.trace = cfg.output.trace;
        for &method in &methods {
            let setup = LoopSetup {
                model: &model,
                cs: &cs,
                controller: &ctrl,
                reference: &reference,
                steps: cfg.closed_loop.steps,
                seed: cfg.closed_loop.seed,
                noise_std: cfg.closed_loop.noise_std,
            };
            let key = format!("{method}_nf{n_f}");
            let step_path = dir.join(format!("steps_{key}.csv"));
            let mut step_file = fs::File::create(&step_path)?;
            let trace_path = dir.join(format!("trace_{key}.jsonl"));
            let mut trace_file = if cfg.output.trace && method == Method::Sda {
                Some(fs::File::create(&trace_path)?)
            } else {
                None
            };
            let mut header_written = false;
            let mut samples = Vec::with_capacity(cfg.closed_loop.steps);
            let mut write_err: Option<std::io::Error> = None;
            run_closed_loop_sink(&setup, method, &mut |log: &StepLog| {
                if write_err.is_some() {
                    return;
                }
                let csv = logs_to_csv(std::slice::from_ref(log));
                let chunk = if header_written {
                    csv.split_once('\n').map_or(String::new(), |(_, rest)| rest.to_string())
                } else {
                    header_written = true;
                    csv
                };
                if let Err(e) = step_file.write_all(chunk.as_bytes()) {
                    write_err = Some(e);
                    return;
                }
                if let (Some(f), Some(trace)) = (&mut trace_file, &log.trace) {
                    if let Err(e) = f.write_all(trace.to_json_lines().as_bytes()) {
                        write_err = Some(e);
                        return;
                    }
                }
                samples.push(log.solve.wall_time.as_secs_f64());
            })?;
            if let Some(e) = write_err {
                return Err(Error::Io(e));
            }
            let stats = summarize_samples(&samples)?;
            println!(
                "{key}: {} steps, median solve {:.3e} s, {} outliers -> {}",
                samples.len(),
                stats.median,
                stats.outliers.len(),
                step_path.display()
            );
            timings.insert(key, serde_json::to_value(&stats).expect("stats serialize"));
        }
    }
    fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&timings).expect("timings serialize"),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<i32> {
    let results = crate::verify::run_suite(cfg)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut all_ok = true;
    for r in &results {
        all_ok &= r.passed;
        println!(
            "{} {:width$} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail,
        );
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_PROPERTY })
}

/// Write `steps_*.csv`-style logs for callers outside the CLI (tests).
pub fn write_step_csv(path: &Path, logs: &[StepLog]) -> Result<()> {
    fs::write(path, logs_to_csv(logs))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses_and_validates() {
        let cfg = ExperimentConfig::parse(DEFAULT_CONFIG).unwrap();
        assert_eq!(cfg.horizons.n_p, 4);
        assert_eq!(cfg.weights.lambda_a, 1000.0);
        assert_eq!(cfg.control_set.levels, vec![-1.0, 0.0, 1.0]);
        assert_eq!(cfg.control_set.delta_bound, Some(1.0));
        assert_eq!(cfg.data.snr_db, 40.0);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cli = Cli::parse_from([
            "fcs-dpc", "verify", "--method", "sda", "--nf", "3", "--seed", "99", "--trace",
        ]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.closed_loop.methods, vec!["sda".to_string()]);
        assert_eq!(cfg.horizons.n_f, 3);
        assert_eq!(cfg.data.seed, 99);
        assert_eq!(cfg.closed_loop.seed, 99);
        assert!(cfg.output.trace);
    }

    #[test]
    fn bad_method_override_rejected() {
        let cli = Cli::parse_from(["fcs-dpc", "run", "--method", "miqp"]);
        assert!(load_config(&cli).is_err());
    }

    #[test]
    fn collect_too_short_reports_required_length() {
        let mut cfg = ExperimentConfig::parse(DEFAULT_CONFIG).unwrap();
        cfg.data.collect_steps = 3;
        let err = cmd_collect(&cfg).unwrap_err();
        match err {
            Error::TooShort { required, actual } => {
                assert_eq!(required, cfg.horizons.n_p + cfg.horizons.n_f + 1);
                assert_eq!(actual, 3);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
