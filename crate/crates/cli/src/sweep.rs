//! Preview-length sweep: H∞, H2 and regret levels per p, with the
//! row invariants checked before anything is written.

use std::path::Path;

use preview_core::noncausal::{build_noncausal, gamma_nc_on_grid, noncausal_cost, NoncausalController};
use preview_core::preview::{h2_preview, hinf_preview_bisect, SynthesisResult};
use preview_core::regret::{h2_gap_bound, regret_at_horizon, regret_preview_bisect_with, GapBound, RegretOptions, RegretResult};
use preview_core::riccati::hinf_norm;
use preview_core::{closed_loop, simulate, Plant, PreviewController, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_num, write_csv};
use crate::svg;

/// Slack on `γ_nc ≤ γ∞,p ≤ γ2,p`: the levels come from separate bisections.
pub const SANDWICH_SLACK: f64 = 1e-6;
/// Random disturbances per row for the baseline-optimality check.
pub const BASELINE_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: usize,
    pub gamma_inf_p: Option<f64>,
    /// H∞ norm of the H2-preview closed loop.
    pub gamma_2_p: Option<f64>,
    pub gamma_r_p: Option<f64>,
    pub gamma_nc: f64,
    /// Toeplitz-oracle regret `λ_max(T_KᵀT_K − W_N)` of the regret controller (a squared level).
    pub oracle_regret: Option<f64>,
    /// `None` when `p < T_cut` or no bound is available.
    pub bound_h2: Option<f64>,
    /// `"ok"` or `"failed: …"`.
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// A sweep row with the synthesized objects behind it.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub hinf: Option<SynthesisResult>,
    pub h2: Option<PreviewController>,
    pub regret: Option<RegretResult>,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub gamma_nc: f64,
    pub bound: Option<GapBound>,
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    pub fn rows(&self) -> Vec<&SweepRow> {
        self.points.iter().map(|pt| &pt.row).collect()
    }

    pub fn all_ok(&self) -> bool {
        self.points.iter().all(|pt| pt.row.ok())
    }
}

/// Runs every preview length of the config; points run in parallel and come back ordered by p.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Sweep, CliError> {
    let plant = cfg.plant()?;
    let g_nc = gamma_nc_on_grid(&plant, cfg.grid_size, cfg.bisection_tol)?.value;
    let nc = build_noncausal(&plant)?;
    let bound = if plant.disturbance_decoupled() { None } else { h2_gap_bound(&plant, None).ok() };
    let points = cfg
        .p_values()
        .into_par_iter()
        .map(|p| sweep_point(cfg, &plant, &nc, g_nc, bound.as_ref(), p))
        .collect();
    Ok(Sweep { gamma_nc: g_nc, bound, points })
}

fn sweep_point(
    cfg: &ExperimentConfig,
    plant: &Plant,
    nc: &NoncausalController,
    g_nc: f64,
    bound: Option<&GapBound>,
    p: usize,
) -> SweepPoint {
    let mut row = SweepRow {
        p,
        gamma_inf_p: None,
        gamma_2_p: None,
        gamma_r_p: None,
        gamma_nc: g_nc,
        oracle_regret: None,
        bound_h2: bound.filter(|b| b.is_valid_for(p)).map(|b| b.bound(p)),
        status: "ok".into(),
    };
    let mut point = SweepPoint { row: row.clone(), hinf: None, h2: None, regret: None };
    let mut problems = Vec::new();

    match hinf_preview_bisect(plant, p, cfg.bisection_tol) {
        Ok(res) => {
            row.gamma_inf_p = Some(res.gamma);
            point.hinf = Some(res);
        }
        Err(e) => problems.push(format!("H-infinity synthesis: {e}")),
    }
    match h2_preview(plant, p).and_then(|k| {
        let norm = hinf_norm(&closed_loop(plant, &k)?, cfg.bisection_tol)?;
        Ok((k, norm))
    }) {
        Ok((k, norm)) => {
            row.gamma_2_p = Some(norm);
            point.h2 = Some(k);
        }
        Err(e) => problems.push(format!("H2 norm: {e}")),
    }
    let opts = RegretOptions {
        grid_size: cfg.grid_size,
        fir_order: cfg.fir_order,
        hinf_level: row.gamma_inf_p,
        gamma_nc: Some(g_nc),
        ..RegretOptions::default()
    };
    match regret_preview_bisect_with(plant, p, cfg.bisection_tol, &opts) {
        Ok(res) => {
            row.gamma_r_p = Some(res.gamma);
            match regret_at_horizon(plant, &res.controller, cfg.oracle_horizon) {
                Ok(v) => row.oracle_regret = Some(v),
                Err(e) => problems.push(format!("regret oracle: {e}")),
            }
            point.regret = Some(res);
        }
        Err(e) => problems.push(format!("regret synthesis: {e}")),
    }

    let tol = cfg.bisection_tol;
    if let Some(gi) = row.gamma_inf_p {
        if gi < g_nc - SANDWICH_SLACK {
            problems.push(format!("gamma_inf_p {gi} below gamma_nc {g_nc}"));
        }
        if let Some(g2) = row.gamma_2_p {
            if gi > g2 + SANDWICH_SLACK {
                problems.push(format!("gamma_inf_p {gi} above gamma_2_p {g2}"));
            }
        }
        if let Some(gr) = row.gamma_r_p {
            if gr < gi - g_nc - 2.0 * tol {
                problems.push(format!("gamma_R_p {gr} below gamma_inf_p - gamma_nc = {}", gi - g_nc));
            }
        }
    }
    let controllers: Vec<(&str, &PreviewController)> = [
        ("H-infinity", point.hinf.as_ref().map(|r| &r.controller)),
        ("H2", point.h2.as_ref()),
        ("regret", point.regret.as_ref().map(|r| &r.controller)),
    ]
    .into_iter()
    .filter_map(|(n, k)| k.map(|k| (n, k)))
    .collect();
    if let Err(e) = check_baseline(plant, nc, &controllers, cfg.seed, p) {
        problems.push(e);
    }

    if !problems.is_empty() {
        row.status = format!("failed: {}", problems.join("; "));
    }
    point.row = row;
    point
}

/// `J(K_nc, d) ≤ J(K, d)` on a few seeded random disturbances.
fn check_baseline(
    plant: &Plant,
    nc: &NoncausalController,
    controllers: &[(&str, &PreviewController)],
    seed: u64,
    p: usize,
) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..BASELINE_SAMPLES {
        let flat: Vec<f64> = (0..20 * plant.n_d()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = Signal::from_flat(plant.n_d(), &flat);
        let j_nc = noncausal_cost(plant, nc, &d).map_err(|e| e.to_string())?;
        for (name, k) in controllers {
            let traj = simulate(plant, k, &d, 1e-13).map_err(|e| format!("{name} simulation: {e}"))?;
            let j = preview_core::cost(&traj) + traj.truncation_bound;
            if j_nc > j + 1e-8 * (1.0 + d.norm_squared()) {
                return Err(format!("{name} controller beats the non-causal cost ({j} < {j_nc})"));
            }
        }
    }
    Ok(())
}

pub const SWEEP_HEADER: [&str; 8] =
    ["p", "gamma_inf_p", "gamma_2_p", "gamma_R_p", "gamma_nc", "oracle_regret", "bound_h2", "status"];

/// Writes `sweep.csv`, `fig1.csv`, `fig2.csv` and, if asked, `fig1.svg` and `fig2.svg`.
pub fn write_sweep(sweep: &Sweep, dir: &Path, with_svg: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let rows: Vec<Vec<String>> = sweep
        .points
        .iter()
        .map(|pt| {
            let r = &pt.row;
            vec![
                r.p.to_string(),
                opt(r.gamma_inf_p),
                opt(r.gamma_2_p),
                opt(r.gamma_r_p),
                fmt_num(r.gamma_nc),
                opt(r.oracle_regret),
                r.bound_h2.map(fmt_num).unwrap_or_else(|| "n/a".into()),
                r.status.clone(),
            ]
        })
        .collect();
    write_csv(&dir.join("sweep.csv"), &SWEEP_HEADER, &rows)?;

    let fig1: Vec<Vec<String>> = sweep
        .points
        .iter()
        .map(|pt| vec![pt.row.p.to_string(), opt(pt.row.gamma_inf_p), fmt_num(pt.row.gamma_nc)])
        .collect();
    write_csv(&dir.join("fig1.csv"), &["p", "gamma_inf_p", "gamma_nc"], &fig1)?;
    let fig2: Vec<Vec<String>> =
        sweep.points.iter().map(|pt| vec![pt.row.p.to_string(), opt(pt.row.gamma_r_p)]).collect();
    write_csv(&dir.join("fig2.csv"), &["p", "gamma_R_p"], &fig2)?;

    if with_svg {
        let series = |f: &dyn Fn(&SweepRow) -> Option<f64>| -> Vec<(f64, f64)> {
            sweep.points.iter().filter_map(|pt| f(&pt.row).map(|v| (pt.row.p as f64, v))).collect()
        };
        let fig1 = svg::line_chart(
            "H-infinity preview level versus preview length",
            &[("gamma_inf_p", series(&|r| r.gamma_inf_p)), ("gamma_nc", series(&|r| Some(r.gamma_nc)))],
            false,
        );
        std::fs::write(dir.join("fig1.svg"), fig1)?;
        let fig2 = svg::line_chart(
            "Optimal additive regret versus preview length",
            &[("gamma_R_p", series(&|r| r.gamma_r_p.filter(|v| *v > 0.0)))],
            true,
        );
        std::fs::write(dir.join("fig2.svg"), fig2)?;
    }
    Ok(())
}
