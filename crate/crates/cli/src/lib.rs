//! Batch experiment driver: loads a JSON plant configuration and runs
//! preview-length sweeps, single simulations and gap-bound tables.

pub mod bound;
pub mod config;
pub mod error;
pub mod output;
pub mod simulate;
pub mod svg;
pub mod sweep;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use preview_core::noncausal::gamma_nc_on_grid;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_num, write_csv};
use crate::simulate::ControllerChoice;

#[derive(Debug, Parser)]
#[command(name = "preview", version, about = "Preview-control synthesis experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` of the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Non-causal H-infinity level, written to gamma_nc.csv.
    GammaNc {
        #[command(flatten)]
        common: Common,
    },
    /// H-infinity, H2 and regret levels for every p of the config.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also write fig1.svg and fig2.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Simulates one controller on a disturbance file into trajectory.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        controller: ControllerChoice,
        #[arg(long, default_value_t = 0)]
        p: usize,
        /// CSV with header `t,d_1,...`.
        #[arg(long)]
        d: PathBuf,
    },
    /// H2-versus-non-causal gap bound for every p of the config.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Decay rate; searched automatically when omitted.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

/// What a successful command reports; `partial` maps to exit code 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub message: String,
    pub partial: bool,
}

impl Outcome {
    fn done(message: String) -> Self {
        Self { message, partial: false }
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.partial)
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::GammaNc { common } => {
            let (cfg, out) = load(&common)?;
            let g = gamma_nc_on_grid(&cfg.plant()?, cfg.grid_size, cfg.bisection_tol)?;
            write_csv(
                &out.join("gamma_nc.csv"),
                &["gamma_nc", "tol", "grid_size"],
                &[vec![fmt_num(g.value), fmt_num(g.tol), g.grid_size.to_string()]],
            )?;
            Ok(Outcome::done(format!("gamma_nc = {}", fmt_num(g.value))))
        }
        Command::Sweep { common, svg } => {
            let (cfg, out) = load(&common)?;
            let result = sweep::run_sweep(&cfg)?;
            sweep::write_sweep(&result, &out, svg)?;
            let failed: Vec<String> = result
                .points
                .iter()
                .filter(|pt| !pt.row.ok())
                .map(|pt| format!("p = {}: {}", pt.row.p, pt.row.status))
                .collect();
            let mut message = format!("{} rows written to {}", result.points.len(), out.join("sweep.csv").display());
            if !failed.is_empty() {
                message.push_str(&format!("\nfailed rows:\n  {}", failed.join("\n  ")));
            }
            Ok(Outcome { message, partial: !failed.is_empty() })
        }
        Command::Simulate { common, controller, p, d } => {
            let (cfg, out) = load(&common)?;
            let d = simulate::read_signal(&d)?;
            let report = simulate::run_simulation(&cfg, controller, p, &d)?;
            simulate::write_trajectory(&report, &out.join("trajectory.csv"))?;
            let mut message = format!("total cost {}", fmt_num(report.total));
            if let Some(r) = report.regret {
                message.push_str(&format!(", regret {}", fmt_num(r)));
            }
            Ok(Outcome::done(message))
        }
        Command::Bound { common, alpha } => {
            let (cfg, out) = load(&common)?;
            let g = bound::run_bound(&cfg, alpha, &out)?;
            Ok(Outcome::done(format!("alpha = {}, T_cut = {}", fmt_num(g.alpha), g.t_cut)))
        }
    }
}
