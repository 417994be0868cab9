//! `mixcontrol` command-line front end.
//!
//! Every subcommand takes one or more scenario files; a batch runs its
//! scenarios concurrently and each writes `report.json` plus its CSV outputs
//! into its own directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mixcontrol::experiments::{run_convergence, run_grad_check, run_optimize, run_simulate, ScenarioConfig};
use mixcontrol::Error;
use serde_json::{json, Value};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_GATE: u8 = 4;

#[derive(Parser)]
#[command(name = "mixcontrol", version, about = "Optimal mixing control of a passive scalar")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward run under the configured schedule, with drift diagnostics.
    Simulate(Common),
    /// Conjugate-gradient optimization of the schedule, then a diagnostic run.
    Optimize(Common),
    /// Adjoint gradient against central finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Seed for the random test schedules.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grid-refinement study named in the `[convergence]` table.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario files (TOML).
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    /// Output directory; with several scenarios each gets a subdirectory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the Krylov tolerance of every scenario.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy)]
enum Kind {
    Simulate,
    Optimize,
    GradCheck(u64),
    Convergence,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Optimize => "optimize",
            Kind::GradCheck(_) => "grad-check",
            Kind::Convergence => "convergence",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged { .. } => EXIT_SOLVER,
        Error::MeshMismatch => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

fn output_dir(common: &Common, config: &ScenarioConfig, path: &Path) -> PathBuf {
    let name = if config.name.is_empty() {
        path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
    } else {
        config.name.clone()
    };
    match (&common.out, common.configs.len()) {
        (Some(out), 1) => out.clone(),
        (Some(out), _) => out.join(name),
        (None, _) => match &config.output.dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => config.base_dir.clone().unwrap_or_default().join(d),
            None => PathBuf::from("out").join(name),
        },
    }
}

/// Runs one scenario; returns the process exit code it warrants.
fn run_one(kind: Kind, common: &Common, path: &Path) -> u8 {
    let label = path.display();
    let mut config = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{label}: {e}");
            return exit_code(&e);
        }
    };
    if let Some(tol) = common.tol {
        config.solver.tol = tol;
        if let Err(e) = config.validate() {
            eprintln!("{label}: {e}");
            return exit_code(&e);
        }
    }
    let dir = output_dir(common, &config, path);
    let start = Instant::now();
    let outcome = execute(kind, &config, &dir, &label.to_string());
    let (code, body) = match outcome {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("{label}: {e}");
            (exit_code(&e), json!({ "error": e.to_string() }))
        }
    };
    let report = json!({
        "command": kind.name(),
        "scenario": config.name,
        "config": path.display().to_string(),
        "tol": config.solver.tol,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "exit_code": code,
        "result": body,
    });
    let written = std::fs::create_dir_all(&dir)
        .and_then(|_| std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes") + "\n"));
    if let Err(e) = written {
        eprintln!("{label}: cannot write report: {e}");
        return code.max(EXIT_FAILURE);
    }
    eprintln!("{label}: {} finished in {:.1}s -> {}", kind.name(), start.elapsed().as_secs_f64(), dir.display());
    code
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("report types serialize")
}

fn execute(kind: Kind, config: &ScenarioConfig, dir: &Path, label: &str) -> mixcontrol::Result<(u8, Value)> {
    match kind {
        Kind::Simulate => {
            let result = run_simulate(config)?;
            result.write(dir)?;
            let s = &result.summary;
            eprintln!("{label}: mix-norm {:.6e} -> {:.6e}, budgets ok: {}", s.initial_mix_norm, s.final_mix_norm, s.budgets.all());
            Ok((0, json!({ "summary": to_json(s) })))
        }
        Kind::Optimize => {
            let result = run_optimize(config, |r| {
                eprintln!(
                    "{label}: iter {:>3}  J = {:.9e}  mix = {:.6e}  |g| = {:.3e}  alpha = {:.3e}  backtracks = {}{}",
                    r.iteration,
                    r.objective,
                    r.mix_norm,
                    r.grad_norm,
                    r.alpha,
                    r.backtracks,
                    if r.restarted { "  (restart)" } else { "" }
                );
            })?;
            result.write(dir)?;
            Ok((
                0,
                json!({
                    "termination": to_json(&result.report.termination),
                    "monotone": result.report.is_monotone(),
                    "iterations": to_json(&result.report.iterations),
                    "summary": to_json(&result.simulation.summary),
                }),
            ))
        }
        Kind::GradCheck(seed) => {
            let result = run_grad_check(config, seed)?;
            eprintln!("{label}: max relative error {:.3e} (threshold {:.1e})", result.max_error, result.threshold);
            Ok((if result.passed { 0 } else { EXIT_GATE }, to_json(&result)))
        }
        Kind::Convergence => {
            let result = run_convergence(config)?;
            for (name, orders) in &result.orders {
                eprintln!("{label}: {name} observed orders {orders:?}");
            }
            Ok((if result.passed { 0 } else { EXIT_GATE }, to_json(&result)))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Simulate(c) => (Kind::Simulate, c),
        Command::Optimize(c) => (Kind::Optimize, c),
        Command::GradCheck { common, seed } => (Kind::GradCheck(*seed), common),
        Command::Convergence(c) => (Kind::Convergence, c),
    };
    let codes: Vec<u8> = std::thread::scope(|s| {
        let handles: Vec<_> = common.configs.iter().map(|p| s.spawn(move || run_one(kind, common, p))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or(EXIT_FAILURE)).collect()
    });
    // the most specific failure wins
    ExitCode::from(codes.into_iter().max().unwrap_or(0))
}
