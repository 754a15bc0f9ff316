//! `switchstop` command line: solve, estimate and cross-check the regime
//! switching stopping problem and its detection application.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{CliError, CliResult, Ctx};
use config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "switchstop", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths for value and risk estimation.
    #[arg(long)]
    n_paths: Option<u64>,
    /// Time step for value and risk estimation.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the model assumptions.
    Validate(Common),
    /// Solve both one-dimensional axis problems.
    #[command(name = "solve-1d")]
    Solve1d(Common),
    /// Solve the two-dimensional variational inequality.
    SolveHjb(Common),
    /// Compute the stopping boundary with the configured strategy.
    SolveBoundary {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Estimate the value at the configured points.
    Value {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run the detector on one simulated or replayed observation record.
    Detect {
        #[command(flatten)]
        common: Common,
        /// CSV with columns t,regime,dx1,dx2.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        substream: u64,
    },
    /// Estimate the Bayes risk of the boundary rule.
    Risk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run the acceptance criteria and print a summary table.
    Crosscheck {
        #[command(flatten)]
        common: Common,
        /// Criterion ids to run; all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        /// Exit nonzero when any criterion fails.
        #[arg(long)]
        strict: bool,
    },
}

fn load(c: &Common, strategy: Option<(&str, &Option<String>)>) -> CliResult<Ctx> {
    let ov = Overrides {
        seed: c.seed,
        n_paths: c.n_paths,
        dt: c.dt,
        output_dir: c.out.clone(),
    };
    let mut cfg = ExperimentConfig::load(&c.config, &ov)?;
    if let Some((slot, Some(name))) = strategy {
        match slot {
            "boundary" => cfg.strategies.boundary = name.clone(),
            "value" => cfg.strategies.value = name.clone(),
            _ => cfg.strategies.risk = name.clone(),
        }
    }
    Ctx::new(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Validate(c) => {
            let ctx = load(&c, None)?;
            let rep = commands::validate(&ctx)?;
            println!("{}", serde_json::to_string_pretty(&rep).unwrap_or_default());
        }
        Cmd::Solve1d(c) => {
            let ctx = load(&c, None)?;
            let mut w = ctx.writer("solve-1d")?;
            let axes = commands::solve_1d(&ctx, &mut w)?;
            w.finish()?;
            for a in &axes {
                println!("axis {} thresholds {:?} (cutoff {})", a.axis, a.thresholds, a.cutoff_n);
            }
        }
        Cmd::SolveHjb(c) => {
            let ctx = load(&c, None)?;
            commands::solve_hjb_cmd(&ctx)?;
            println!("wrote {}", ctx.cfg.output_dir.display());
        }
        Cmd::SolveBoundary { common, strategy } => {
            let ctx = load(&common, Some(("boundary", &strategy)))?;
            let mut w = ctx.writer("solve-boundary")?;
            commands::solve_boundary(&ctx, &mut w)?;
            w.finish()?;
            println!("wrote {}", ctx.cfg.output_dir.display());
        }
        Cmd::Value { common, strategy } => {
            let ctx = load(&common, Some(("value", &strategy)))?;
            commands::value(&ctx)?;
            println!("wrote {}", ctx.cfg.output_dir.join("value.json").display());
        }
        Cmd::Detect {
            common,
            replay,
            horizon,
            substream,
        } => {
            let ctx = load(&common, None)?;
            let run = commands::detect(&ctx, replay.as_deref(), horizon, substream)?;
            match run.alarm {
                Some(a) => println!("{}", json!({"tau": a.tau, "Phi": a.phi, "Psi": a.psi, "regime": a.regime})),
                None => println!("{}", json!({"tau": null})),
            }
        }
        Cmd::Risk { common, strategy } => {
            let ctx = load(&common, Some(("risk", &strategy)))?;
            let rep = commands::risk(&ctx)?;
            println!("J = {:.6} ± {:.6} (false alarm {:.6}, delay {:.6})", rep.j.mean, rep.j.std_error, rep.false_alarm.mean, rep.delay.mean);
        }
        Cmd::Crosscheck { common, only, strict } => {
            let ctx = load(&common, None)?;
            let results = commands::crosscheck(&ctx, &only, |r| println!("{}", r.line()))?;
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {} failed", results.len() - failed, failed);
            if strict && failed > 0 {
                return Err(CliError::Criteria {
                    failed,
                    total: results.len(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
