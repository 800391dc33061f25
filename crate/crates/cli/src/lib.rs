//! Command-line runner for the `safedpc` library: certification, policy
//! training, closed-loop simulation and the four-way controller comparison.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Fig2Run, OutputDir, EFFECTIVE_CONFIG_FILE, FIG2_SUMMARY_FILE};
use config::{ReferenceName, ScenarioConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "safedpc",
    version,
    about = "Safety-filtered differentiable predictive control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario config (JSON). The embedded default is used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.output_dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the master seed `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    pub dump_effective_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify the corridor barrier for sampled-data execution.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy and write its weights and training curve.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `training.reference_mode`.
        #[arg(long, value_enum)]
        reference_mode: Option<ReferenceName>,
    },
    /// Run one closed-loop simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `run.mode`.
        #[arg(long)]
        controller: Option<String>,
        /// Policy weight file, required by policy-driven controllers.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Train both policies and compare the four controllers.
    ScenarioFig2 {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Certify { common }
            | Command::Train { common, .. }
            | Command::Simulate { common, .. }
            | Command::ScenarioFig2 { common } => common,
        }
    }
}

fn resolve(command: &Command) -> Result<ScenarioConfig, CliError> {
    let common = command.common();
    let mut cfg = ScenarioConfig::load(common.config.as_deref())?;
    if let Some(dir) = &common.output_dir {
        cfg.run.output_dir = dir.clone();
    }
    match command {
        Command::Train {
            reference_mode: Some(r),
            ..
        } => cfg.training.reference_mode = *r,
        Command::Simulate {
            controller: Some(c),
            ..
        } => cfg.run.mode = c.clone(),
        _ => {}
    }
    cfg.effective(common.seed)
}

/// Runs one subcommand. Results go to the output directory and a short
/// report to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.command)?;
    if cli.command.common().dump_effective_config {
        print!("{}", cfg.to_json());
        return Ok(());
    }
    let out = OutputDir::create(&cfg.run.output_dir)?;
    out.write(EFFECTIVE_CONFIG_FILE, &cfg.to_json())?;

    match &cli.command {
        Command::Certify { .. } => {
            let r = commands::certify(&cfg, &out)?;
            let a = &r.annulus;
            println!(
                "annulus condition: {}",
                if a.pass { "pass" } else { "fail" }
            );
            println!("  a = {} vs h_bar_reach = {:.6}", a.a, a.h_bar_reach);
            println!(
                "  feasible {}/{} grid points, max |u|_inf = {:.4}",
                a.feasible_points, a.grid_points, a.max_input_norm
            );
            println!("whole safe set condition: {}", r.whole_set.verdict());
            println!("report: {}", out.path(commands::CERTIFICATE_FILE).display());
            if !a.pass {
                return Err(CliError::Domain("certification failed".into()));
            }
        }
        Command::Train { .. } => {
            let art = commands::train_policy(&cfg, cfg.training.reference_mode, &out)?;
            let curve = &art.outcome.curve;
            let first = curve.first().expect("curve has an initial row");
            let last = curve.last().expect("curve has an initial row");
            let l = &last.train;
            println!(
                "final loss: total={:.6} tracking={:.6} effort={:.3e} state_pen={:.3e} input_pen={:.3e} barrier_pen={:.3e} validation={:.6}",
                l.total(),
                l.tracking,
                l.effort,
                l.state_pen,
                l.input_pen,
                l.barrier_pen,
                last.validation
            );
            println!(
                "tracking loss {:.6} -> {:.6}; best validation {:.6} at epoch {}",
                first.train.tracking,
                l.tracking,
                art.outcome.best_validation,
                art.outcome.best_epoch
            );
            println!("weights: {}", art.weights.display());
            println!("curve: {}", art.curve.display());
        }
        Command::Simulate { weights, .. } => {
            let mode = cfg.controller()?;
            let policy = match (mode.needs_policy(), weights) {
                (true, None) => {
                    return Err(CliError::Usage(format!(
                        "controller {} needs --weights",
                        mode.as_str()
                    )))
                }
                (true, Some(p)) => Some(commands::load_policy(p)?),
                (false, _) => None,
            };
            let log = commands::simulate(&cfg, mode, policy.as_ref())?;
            commands::write_trajectory(&log, &out)?;
            println!("min_h={}", log.metrics.min_h);
            println!("trigger_fraction={}", log.metrics.trigger_fraction);
            println!(
                "trajectory: {}",
                out.path(&commands::trajectory_file(mode)).display()
            );
        }
        Command::ScenarioFig2 { .. } => {
            let summary = commands::scenario_fig2(&cfg, &out)?;
            print!("{}", summary.table());
            println!(
                "safety pattern (safe, safe, unsafe, safe): {}",
                if summary.pattern_holds() {
                    "reproduced"
                } else {
                    "not reproduced"
                }
            );
            println!("summary: {}", out.path(FIG2_SUMMARY_FILE).display());
            if let Some(run) = Fig2Run::ALL
                .into_iter()
                .find(|r| r.controller().filtered() && summary.get(*r).min_h < 0.0)
            {
                return Err(CliError::Domain(format!(
                    "fig2/{}: filtered run left the safe set",
                    run.label()
                )));
            }
        }
    }
    Ok(())
}
