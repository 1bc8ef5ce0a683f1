//! Gap-bound table over the configured preview lengths.

use std::path::Path;

use preview_core::noncausal::build_noncausal;
use preview_core::regret::{h2_gap_bound, GapBound, ALPHA_CEILING};
use preview_core::{Error, Plant};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_num, write_csv};

pub const BOUND_HEADER: [&str; 7] = ["p", "a", "b", "c", "alpha", "T_cut", "bound"];

/// Automatic α unless one is given; on failure, retraces the α search for the error message.
pub fn compute_bound(plant: &Plant, alpha: Option<f64>) -> Result<GapBound, CliError> {
    if plant.disturbance_decoupled() {
        return Err(CliError::Failure("B_d = 0: the H2 and non-causal costs coincide, no bound to report".into()));
    }
    if alpha.is_some() {
        return h2_gap_bound(plant, alpha).map_err(|e| match e {
            Error::Precondition(m) => CliError::Validation(m),
            e => e.into(),
        });
    }
    match h2_gap_bound(plant, None) {
        Err(Error::BoundUnavailable(_)) => {}
        r => return r.map_err(Into::into),
    }
    let rho = build_noncausal(plant)?.spectral_radius();
    let mut trace = Vec::new();
    let mut al = 0.5 * (1.0 + rho);
    while al <= ALPHA_CEILING {
        match h2_gap_bound(plant, Some(al)) {
            Ok(g) => return Ok(g),
            Err(Error::BoundUnavailable(m)) => trace.push(format!("alpha = {al}: {m}")),
            Err(e) => return Err(e.into()),
        }
        al = 0.5 * (1.0 + al);
    }
    Err(CliError::Failure(format!(
        "bound unavailable (spectral radius {rho}); alpha search:\n  {}",
        trace.join("\n  ")
    )))
}

pub fn bound_rows(bound: &GapBound, p_values: &[usize]) -> Vec<Vec<String>> {
    p_values
        .iter()
        .map(|&p| {
            vec![
                p.to_string(),
                fmt_num(bound.a),
                fmt_num(bound.b),
                fmt_num(bound.c),
                fmt_num(bound.alpha),
                bound.t_cut.to_string(),
                if bound.is_valid_for(p) { fmt_num(bound.bound(p)) } else { "n/a".into() },
            ]
        })
        .collect()
}

pub fn run_bound(cfg: &ExperimentConfig, alpha: Option<f64>, dir: &Path) -> Result<GapBound, CliError> {
    let plant = cfg.plant()?;
    let bound = compute_bound(&plant, alpha)?;
    write_csv(&dir.join("bound.csv"), &BOUND_HEADER, &bound_rows(&bound, &cfg.p_values()))?;
    Ok(bound)
}
