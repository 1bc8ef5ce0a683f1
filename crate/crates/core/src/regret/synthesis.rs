//! Regret-optimal preview synthesis by reduction to H∞ preview on a
//! disturbance-filtered plant.
//!
//! With `γ²I + W = Δ*Δ` and `Γ ≈ Δ⁻¹` causal, a controller has regret level
//! `γ` exactly when `‖T_K Γ‖∞ < 1`. Writing `d = Γ v`, the filtered plant has
//! state `[x; v(t−1); …; v(t−L)]` and input `v`, and a level-1 preview
//! controller for it is turned back into one acting on `d` by recovering the
//! previewed `v` samples from `d` recursively.
//!
//! Candidates are accepted on their measured frequency-domain regret, and the
//! bisection starts from the exact Hankel-norm lower bound.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::{ControllerMemory, Plant, PreviewController};
use crate::noncausal::{build_noncausal, gamma_nc, NoncausalController};
use crate::preview::{self, hinf_preview_bisect, hinf_preview_feasible_with, AugmentedPlant, MAX_ESCALATIONS};
use crate::riccati::SolveMode;

use super::frequency::frequency_regret_on;
use super::hankel::hankel_level_from;

use super::spectral::{factorize_escalating, RegretSymbol, SpectralFactor, DEFAULT_FIR_ORDER, DEFAULT_FIT_TOL};
use crate::noncausal::DEFAULT_GRID_SIZE;

/// Knobs of [`regret_preview_bisect_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegretOptions {
    pub grid_size: usize,
    /// Starting FIR order; doubled up to 512 when the fit is not accepted.
    pub fir_order: usize,
    pub fit_tol: f64,
    /// `γ∞,p` if already known; used as the first upper bracket.
    pub hinf_level: Option<f64>,
    /// `γ_nc` if already known.
    pub gamma_nc: Option<f64>,
}

impl Default for RegretOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            fir_order: DEFAULT_FIR_ORDER,
            fit_tol: DEFAULT_FIT_TOL,
            hinf_level: None,
            gamma_nc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretResult {
    /// Smallest regret level found feasible (upper end of the final bracket).
    pub gamma: f64,
    /// Lower bound on the optimal level: the Hankel norm of the unseen feedforward tail.
    pub gamma_lower: f64,
    /// Measured stationary regret level of `controller`, never above `gamma`.
    pub achieved: f64,
    pub controller: PreviewController,
    /// Factor at the returned level; absent when `B_d = 0`.
    pub factor: Option<SpectralFactor>,
}

/// `A_f`, `B_v`, `B_u`, `Q_f` of the plant driven through `d(t) = Σ_k Γ_k v(t−k)`.
pub fn filtered_plant(plant: &Plant, inv_coeffs: &[Mat]) -> (Mat, Mat, Mat, Mat) {
    let (n_x, n_d, n_u) = (plant.n_x(), plant.n_d(), plant.n_u());
    let l = inv_coeffs.len() - 1;
    let n = n_x + l * n_d;
    let mut a = Mat::zeros(n, n);
    let mut b_v = Mat::zeros(n, n_d);
    let mut b_u = Mat::zeros(n, n_u);
    let mut q = Mat::zeros(n, n);
    a.view_mut((0, 0), (n_x, n_x)).copy_from(plant.a());
    for k in 1..=l {
        a.view_mut((0, n_x + (k - 1) * n_d), (n_x, n_d)).copy_from(&(plant.b_d() * &inv_coeffs[k]));
    }
    for k in 1..l {
        a.view_mut((n_x + k * n_d, n_x + (k - 1) * n_d), (n_d, n_d)).fill_with_identity();
    }
    b_v.view_mut((0, 0), (n_x, n_d)).copy_from(&(plant.b_d() * &inv_coeffs[0]));
    if l > 0 {
        b_v.view_mut((n_x, 0), (n_d, n_d)).fill_with_identity();
    }
    b_u.view_mut((0, 0), (n_x, n_u)).copy_from(plant.b_u());
    q.view_mut((0, 0), (n_x, n_x)).copy_from(plant.q());
    (a, b_v, b_u, q)
}

/// Re-expresses `u = −K_f [x; ζ] − Σ_j M_j v(t+j)` on the filtered plant as a
/// controller on `d`, with `ζ = (v(t−1), …, v(t−L))` as its memory.
pub fn map_to_disturbance(plant: &Plant, filtered: &PreviewController, inv_coeffs: &[Mat]) -> Result<PreviewController> {
    let (n_x, n_d) = (plant.n_x(), plant.n_d());
    let l = inv_coeffs.len() - 1;
    let nz = l * n_d;
    let p = filtered.p();
    let g0_inv = linalg::inverse(&inv_coeffs[0], "Γ_0")?;
    let c: Vec<Mat> = inv_coeffs.iter().map(|g| &g0_inv * g).collect();

    // v(t+j) = Σ_{i≤j} E[j][i] d(t+i) + F[j] ζ
    let mut e: Vec<Vec<Mat>> = Vec::with_capacity(p + 1);
    let mut f: Vec<Mat> = Vec::with_capacity(p + 1);
    for j in 0..=p {
        let mut ej = vec![Mat::zeros(n_d, n_d); j + 1];
        ej[j] = g0_inv.clone();
        let mut fj = Mat::zeros(n_d, nz);
        for k in 1..=l {
            if k <= j {
                for (i, eji) in e[j - k].iter().enumerate() {
                    ej[i] -= &c[k] * eji;
                }
                fj -= &c[k] * &f[j - k];
            } else {
                let mut block = fj.view_mut((0, (k - j - 1) * n_d), (n_d, n_d));
                block -= &c[k];
            }
        }
        e.push(ej);
        f.push(fj);
    }

    let k_f = filtered.k_x();
    let k_x = k_f.view((0, 0), (plant.n_u(), n_x)).into_owned();
    let mut k_z = k_f.view((0, n_x), (plant.n_u(), nz)).into_owned();
    let mut taps = vec![Mat::zeros(plant.n_u(), n_d); p + 1];
    for (j, m_j) in filtered.taps().iter().enumerate() {
        k_z += m_j * &f[j];
        for (i, eji) in e[j].iter().enumerate() {
            taps[i] += m_j * eji;
        }
    }

    let mut a_c = Mat::zeros(nz, nz);
    let mut b_c = Mat::zeros(nz, n_d);
    if l > 0 {
        for k in 1..=l {
            a_c.view_mut((0, (k - 1) * n_d), (n_d, n_d)).copy_from(&(-&c[k]));
        }
        for k in 1..l {
            a_c.view_mut((k * n_d, (k - 1) * n_d), (n_d, n_d)).fill_with_identity();
        }
        b_c.view_mut((0, 0), (n_d, n_d)).copy_from(&g0_inv);
    }
    let memory = (l > 0).then_some(ControllerMemory { a: a_c, b: b_c, k: k_z });
    PreviewController::with_memory(k_x, taps, memory)
}

/// A controller found at some level, with its measured regret level.
#[derive(Debug, Clone)]
pub struct RegretCandidate {
    pub controller: PreviewController,
    pub factor: SpectralFactor,
    /// `√ max_ω λ_max(T_K*T_K − W)`
    pub achieved: f64,
}

/// Level-`γ` regret feasibility: a level-1 preview controller on the filtered
/// plant, mapped back to `d`, whose measured regret level is below `gamma`.
pub fn regret_feasible(
    plant: &Plant,
    nc: &NoncausalController,
    symbol: &RegretSymbol,
    p: usize,
    gamma: f64,
    opts: &RegretOptions,
) -> Result<Option<RegretCandidate>> {
    let factor = factorize_escalating(symbol, gamma, opts.fir_order, opts.fit_tol)?;
    let (a, b_v, b_u, q) = filtered_plant(plant, &factor.inv_coeffs);
    let aug = AugmentedPlant::from_parts(&a, &b_v, &b_u, &q, plant.r(), p)?;
    let (_, result) = hinf_preview_feasible_with(&aug, 1.0, SolveMode::Candidate);
    let Some(result) = result else {
        return Ok(None);
    };
    let controller = map_to_disturbance(plant, &result.controller, &factor.inv_coeffs)?;
    let squared = match frequency_regret_on(plant, nc, symbol, &controller) {
        Ok(v) => v,
        Err(Error::Unstable { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let achieved = squared.max(0.0).sqrt();
    Ok((achieved < gamma).then_some(RegretCandidate { controller, factor, achieved }))
}

/// Optimal p-step preview regret level `γ_{R,p}` and a controller achieving it.
pub fn regret_preview_bisect(plant: &Plant, p: usize, tol: f64) -> Result<RegretResult> {
    regret_preview_bisect_with(plant, p, tol, &RegretOptions::default())
}

pub fn regret_preview_bisect_with(plant: &Plant, p: usize, tol: f64, opts: &RegretOptions) -> Result<RegretResult> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("bisection tolerance must be positive, got {tol}")));
    }
    if plant.disturbance_decoupled() {
        return Ok(RegretResult {
            gamma: 0.0,
            gamma_lower: 0.0,
            achieved: 0.0,
            controller: preview::h2_preview(plant, p)?,
            factor: None,
        });
    }
    let g_inf = match opts.hinf_level {
        Some(g) => g,
        None => hinf_preview_bisect(plant, p, tol)?.gamma,
    };
    let g_nc = match opts.gamma_nc {
        Some(g) => g,
        None => gamma_nc(plant, 1e-12)?.value,
    };
    let symbol = RegretSymbol::of_plant(plant, opts.grid_size)?;
    let nc = build_noncausal(plant)?;

    let floor = hankel_level_from(&nc, plant, p)?.max((g_inf * g_inf - g_nc * g_nc).max(0.0).sqrt());
    let mut lo = floor;
    let mut hi = g_inf.max(lo).max(f64::MIN_POSITIVE);
    let mut best = None;
    for _ in 0..=MAX_ESCALATIONS {
        if let Some(found) = regret_feasible(plant, &nc, &symbol, p, hi, opts)? {
            best = Some(found);
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    let mut best =
        best.ok_or_else(|| Error::SynthesisFailure(format!("no feasible regret level up to {:e}", hi / 2.0)))?;
    hi = best.achieved.max(lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match regret_feasible(plant, &nc, &symbol, p, mid, opts)? {
            Some(found) => {
                hi = found.achieved.max(lo);
                best = found;
            }
            None => lo = mid,
        }
    }
    Ok(RegretResult {
        gamma: hi,
        gamma_lower: floor,
        achieved: best.achieved,
        controller: best.controller,
        factor: Some(best.factor),
    })
}
