//! Single-shot simulation of one controller on a disturbance file.

use std::path::Path;

use clap::ValueEnum;
use preview_core::noncausal::{build_noncausal, noncausal_cost, noncausal_trajectory};
use preview_core::preview::{h2_preview, hinf_preview_bisect};
use preview_core::regret::{regret_preview_bisect_with, RegretOptions};
use preview_core::{cost, simulate, Error, Plant, PreviewController, Signal, Trajectory};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_num, write_csv};

/// Decay tolerance of the simulated free response.
pub const DECAY_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerChoice {
    Hinf,
    H2,
    Regret,
    Noncausal,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub trajectory: Trajectory,
    /// Simulated cost plus the exact cost of the remaining free response.
    pub total: f64,
    /// `J(K, d) − J(K_nc, d)`; absent for the non-causal controller itself.
    pub regret: Option<f64>,
}

/// Synthesizes the chosen causal controller at preview length `p`.
pub fn synthesize(cfg: &ExperimentConfig, plant: &Plant, choice: ControllerChoice, p: usize) -> Result<PreviewController, CliError> {
    Ok(match choice {
        ControllerChoice::Hinf => hinf_preview_bisect(plant, p, cfg.bisection_tol)?.controller,
        ControllerChoice::H2 => h2_preview(plant, p)?,
        ControllerChoice::Regret => {
            let opts = RegretOptions { grid_size: cfg.grid_size, fir_order: cfg.fir_order, ..RegretOptions::default() };
            regret_preview_bisect_with(plant, p, cfg.bisection_tol, &opts)?.controller
        }
        ControllerChoice::Noncausal => {
            return Err(CliError::Failure("the non-causal law has no preview-controller form".into()))
        }
    })
}

pub fn run_simulation(
    cfg: &ExperimentConfig,
    choice: ControllerChoice,
    p: usize,
    d: &Signal,
) -> Result<SimulationReport, CliError> {
    let plant = cfg.plant()?;
    if d.n_d() != plant.n_d() {
        return Err(CliError::Validation(format!(
            "disturbance file has {} channels, the plant has {}",
            d.n_d(),
            plant.n_d()
        )));
    }
    let nc = build_noncausal(&plant)?;
    if choice == ControllerChoice::Noncausal {
        let trajectory = noncausal_trajectory(&plant, &nc, d, DECAY_TOL)?;
        let total = cost(&trajectory) + trajectory.truncation_bound;
        return Ok(SimulationReport { trajectory, total, regret: None });
    }
    let ctrl = synthesize(cfg, &plant, choice, p)?;
    let trajectory = match simulate(&plant, &ctrl, d, DECAY_TOL) {
        Ok(t) => t,
        Err(Error::Unstable { spectral_radius }) => {
            return Err(CliError::Failure(format!(
                "unstable pairing: closed-loop spectral radius {spectral_radius} >= 1"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let total = cost(&trajectory) + trajectory.truncation_bound;
    let regret = total - noncausal_cost(&plant, &nc, d)?;
    Ok(SimulationReport { trajectory, total, regret: Some(regret) })
}

pub fn read_signal(path: &Path) -> Result<Signal, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot read disturbance file {}: {e}", path.display())))?;
    Signal::read_csv(file).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Per-step `t, x_*, u_*, stage_cost, running_cost`, then `tail`, `total` and `regret` footer rows.
pub fn write_trajectory(report: &SimulationReport, path: &Path) -> Result<(), CliError> {
    let traj = &report.trajectory;
    let n_x = traj.states[0].len();
    let n_u = traj.inputs.first().map_or(0, |u| u.len());
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n_x).map(|i| format!("x_{i}")));
    header.extend((1..=n_u).map(|i| format!("u_{i}")));
    header.push("stage_cost".into());
    header.push("running_cost".into());

    let width = header.len();
    let mut rows = Vec::with_capacity(traj.inputs.len() + 3);
    let mut running = 0.0;
    for (t, u) in traj.inputs.iter().enumerate() {
        running += traj.stage_costs[t];
        let mut row = vec![t.to_string()];
        row.extend(traj.states[t].iter().map(|&v| fmt_num(v)));
        row.extend(u.iter().map(|&v| fmt_num(v)));
        row.push(fmt_num(traj.stage_costs[t]));
        row.push(fmt_num(running));
        rows.push(row);
    }
    let footer = |label: &str, v: f64| {
        let mut row = vec![label.to_string()];
        row.extend(std::iter::repeat_n(String::new(), width - 2));
        row.push(fmt_num(v));
        row
    };
    rows.push(footer("tail", traj.truncation_bound));
    rows.push(footer("total", report.total));
    if let Some(r) = report.regret {
        rows.push(footer("regret", r));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header, &rows)
}
