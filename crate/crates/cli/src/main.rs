#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gramflow::experiments::{
    baseline_run, cond_drift_sweep, config_hash, convergence_sweep, fit_slope, identity_suite,
    payoff_matrix, payoff_table, Problem, SweepSpec, Table, BENCHMARK_SLOPE_WINDOW,
    COND_SLOPE_WINDOW, SYNTHETIC_SLOPE_WINDOW,
};
use gramflow::flow::{FlowLog, StepPolicy};
use serde_json::json;

use config::{RunConfig, SystemSpec};

#[derive(Parser, Debug)]
#[command(
    name = "gramflow",
    version,
    about = "Regularised projected gradient flow for constrained pulse shaping"
)]
struct Cli {
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the 4000-point grid and 500-iteration budget.
    #[arg(long, global = true)]
    full_scale: bool,
    /// Print the validated config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one flow and write `<name>_log.csv` and `<name>_field.csv`.
    Run { config: PathBuf },
    /// Run an experiment suite and write its tables.
    Experiment {
        name: ExperimentName,
        config: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ExperimentName {
    Baseline,
    Converge,
    CondDrift,
    Payoff,
    Verify,
}

impl ExperimentName {
    fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Baseline => "baseline",
            ExperimentName::Converge => "converge",
            ExperimentName::CondDrift => "cond-drift",
            ExperimentName::Payoff => "payoff",
            ExperimentName::Verify => "verify",
        }
    }
}

/// Exit classes: numerical failures exit 1, usage and config errors 2.
enum Failure {
    Numerical(anyhow::Error),
    Usage(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow::anyhow!(
            "config file {} not found",
            path.display()
        )));
    }
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.full_scale {
        cfg.apply_full_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let (path, experiment) = match &cli.command {
        Command::Run { config } => (config, None),
        Command::Experiment { name, config } => (config, Some(*name)),
    };
    let cfg = load_config(cli, path)?;
    if cli.print_config {
        print!("{}", cfg.echo());
        return Ok(());
    }
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    match experiment {
        None => cmd_run(&cfg),
        Some(name) => cmd_experiment(&cfg, name),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn field_csv(log: &FlowLog, initial: &gramflow::model::ControlField, hash: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "# schema {}\n# units atomic\n# config {hash}\n",
        gramflow::flow::LOG_SCHEMA
    ));
    s.push_str("t,E_initial,E_final\n");
    let t = initial.grid().times();
    for ((t, a), b) in t
        .iter()
        .zip(initial.samples())
        .zip(log.terminal_field.samples())
    {
        s.push_str(&format!("{t},{a},{b}\n"));
    }
    s
}

fn cmd_run(cfg: &RunConfig) -> Result<(), Failure> {
    let problem = cfg.build()?;
    let hash = config_hash(cfg);
    let log = problem
        .run(&cfg.options())
        .map_err(|e| Failure::Numerical(e.into()))?;
    let dir = &cfg.output_dir;
    if cfg.format.csv {
        let meta = [("config", hash.as_str()), ("name", cfg.name.as_str())];
        write_file(
            &dir.join(format!("{}_log.csv", cfg.name)),
            &log.to_csv_string(&meta),
        )?;
        write_file(
            &dir.join(format!("{}_field.csv", cfg.name)),
            &field_csv(&log, &problem.initial_field, &hash),
        )?;
    }
    if cfg.format.json {
        let summary = json!({
            "config_hash": hash,
            "name": cfg.name,
            "termination": log.termination.as_str(),
            "initial_J": log.initial_j(),
            "final_J": log.final_j(),
            "steps": log.steps(),
            "rejections": log.total_rejections(),
            "final_s": log.final_s(),
        });
        write_file(
            &dir.join(format!("{}_summary.json", cfg.name)),
            &serde_json::to_string_pretty(&summary).expect("summary serialises"),
        )?;
    }
    println!(
        "termination {} after {} steps: J {:.6} -> {:.6}, {} rejections",
        log.termination.as_str(),
        log.steps(),
        log.initial_j(),
        log.final_j(),
        log.total_rejections()
    );
    if log.termination.is_breakdown() {
        return Err(Failure::Numerical(anyhow::anyhow!(
            "flow stopped with {}",
            log.termination.as_str()
        )));
    }
    Ok(())
}

/// Output tag and problem for each pulse width the experiment covers.
fn problems(cfg: &RunConfig, taus: &[f64]) -> Result<Vec<(String, f64, Problem)>, Failure> {
    match &cfg.system {
        SystemSpec::Benchmark { .. } => taus
            .iter()
            .map(|&tau| {
                let mut one = cfg.clone();
                one.system = SystemSpec::Benchmark { tau_fs: tau };
                Ok((format!("{tau}fs"), tau, one.build()?))
            })
            .collect(),
        _ => Ok(vec![("custom".into(), f64::NAN, cfg.build()?)]),
    }
}

fn emit_table(
    cfg: &RunConfig,
    experiment: &str,
    tag: &str,
    table: &Table,
    hash: &str,
    summary: serde_json::Value,
) -> Result<(), Failure> {
    let stem = format!("{experiment}_{tag}_{hash}");
    if cfg.format.csv {
        write_file(
            &cfg.output_dir.join(format!("{stem}.csv")),
            &table.to_csv_string(hash),
        )?;
    }
    if cfg.format.json {
        let mut summary = summary;
        summary["config_hash"] = json!(hash);
        summary["experiment"] = json!(experiment);
        write_file(
            &cfg.output_dir.join(format!("{stem}.json")),
            &serde_json::to_string_pretty(&summary).expect("summary serialises"),
        )?;
    }
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, name: ExperimentName) -> Result<(), Failure> {
    let scale = cfg.scale();
    let hash = config_hash(&(cfg, name.as_str()));
    let overrides = cfg.sweep.clone().unwrap_or_default();
    let default_taus = vec![cfg.benchmark_tau().unwrap_or(250.0)];
    let taus = overrides.taus.clone().unwrap_or(default_taus);
    let numerical = |e: gramflow::Error| Failure::Numerical(e.into());
    let is_synthetic = matches!(cfg.system, SystemSpec::Synthetic { .. });
    let experiment = name.as_str();

    match name {
        ExperimentName::Baseline => {
            if cfg.benchmark_tau().is_none() {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "baseline needs the benchmark system"
                )));
            }
            for &tau in &taus {
                let base = baseline_run(tau, scale).map_err(numerical)?;
                let problem = Problem::benchmark(tau, scale.n_points).map_err(numerical)?;
                let summary = json!({
                    "tau_fs": tau,
                    "final_J": base.log.final_j(),
                    "min_cond": base.min_cond(),
                    "max_cond": base.max_cond(),
                    "final_fluence_rel_drift": base.final_fluence_drift(),
                    "max_affine_violation": base.max_affine_violation(&problem.constraints),
                    "termination": base.log.termination.as_str(),
                });
                emit_table(
                    cfg,
                    experiment,
                    &format!("{tau}fs"),
                    &base.table,
                    &hash,
                    summary,
                )?;
            }
        }
        ExperimentName::Converge => {
            let (base_spec, window) = if is_synthetic {
                (SweepSpec::synthetic_default(), SYNTHETIC_SLOPE_WINDOW)
            } else {
                (SweepSpec::benchmark_default(scale), BENCHMARK_SLOPE_WINDOW)
            };
            let spec = overrides.apply(base_spec);
            let window = overrides.window.map_or(window, |[a, b]| (a, b));
            for (tag, tau, problem) in problems(cfg, &taus)? {
                let fit = convergence_sweep(&problem, &spec, window).map_err(numerical)?;
                println!(
                    "{tag}: slope {:.3} over [{:e}, {:e}] ({} points)",
                    fit.slope, window.0, window.1, fit.points_in_window
                );
                let summary = json!({
                    "tau_fs": tau,
                    "slope": fit.slope,
                    "window": [window.0, window.1],
                    "points_in_window": fit.points_in_window,
                    "flagged_eps": fit.flagged,
                    "sweep": spec,
                });
                emit_table(cfg, experiment, &tag, &fit.table(), &hash, summary)?;
            }
        }
        ExperimentName::CondDrift => {
            let spec = overrides.apply(SweepSpec::cond_drift_default(scale));
            let policy = StepPolicy::Fixed { ds: spec.ds[0] };
            for (tag, tau, problem) in problems(cfg, &taus)? {
                let table = cond_drift_sweep(&problem, &spec.eps, &policy, spec.iterations)
                    .map_err(numerical)?;
                let slope = fit_slope(
                    &table.column("eps").unwrap(),
                    &table.column("max_cond").unwrap(),
                    COND_SLOPE_WINDOW,
                )
                .map(|f| f.0)
                .ok();
                let summary = json!({ "tau_fs": tau, "cond_slope": slope, "window": COND_SLOPE_WINDOW, "sweep": spec });
                emit_table(cfg, experiment, &tag, &table, &hash, summary)?;
            }
        }
        ExperimentName::Payoff => {
            let spec = overrides.apply(SweepSpec::payoff_default(scale));
            for (tag, tau, problem) in problems(cfg, &taus)? {
                if problem.fluence_index().is_none() {
                    return Err(Failure::Usage(anyhow::anyhow!(
                        "payoff needs a fluence constraint"
                    )));
                }
                let cells = payoff_matrix(&problem, &spec.ds, &spec.eps, spec.iterations)
                    .map_err(numerical)?;
                let summary = json!({ "tau_fs": tau, "cells": cells, "sweep": spec });
                emit_table(cfg, experiment, &tag, &payoff_table(&cells), &hash, summary)?;
            }
        }
        ExperimentName::Verify => {
            let trials = overrides.trials.unwrap_or(1000);
            let report = identity_suite(cfg.seed, trials, scale).map_err(numerical)?;
            let mut out = std::io::stdout().lock();
            for c in &report.checks {
                let _ = writeln!(
                    out,
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            let path = cfg
                .output_dir
                .join(format!("verify_seed{}_{hash}.json", cfg.seed));
            let mut value = serde_json::to_value(&report).expect("report serialises");
            value["config_hash"] = json!(hash);
            write_file(
                &path,
                &serde_json::to_string_pretty(&value).expect("report serialises"),
            )?;
            if !report.passed() {
                return Err(Failure::Numerical(anyhow::anyhow!(
                    "{} identity checks failed",
                    report.failures()
                )));
            }
        }
    }
    Ok(())
}
