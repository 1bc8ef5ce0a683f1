//! The optimal non-causal controller, which sees the whole disturbance
//! sequence in advance, and its closed-loop frequency response.
//!
//! With `X` the stabilizing LQR solution, `H = R + B_uᵀXB_u` and
//! `Ã = A − B_u K_x`, the controller is
//!
//! ```text
//! v(t) = Ãᵀ [v(t+1) + X B_d d(t)],   v → 0
//! u(t) = −K_x x(t) − K_v v(t+1) − K_d d(t)
//! ```
//!
//! so that `K_v v(t+1) + K_d d(t) = Σ_{j≥t} K_v (Ãᵀ)^{j−t} X B_d d(j)`.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};
use crate::lti::{self, Plant, Signal, Trajectory};
use crate::riccati::{self, DareSolution};

/// Default grid for the baseline frequency response.
pub const DEFAULT_GRID_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct NoncausalController {
    pub x: Mat,
    pub k_x: Mat,
    pub k_v: Mat,
    pub k_d: Mat,
    pub a_tilde: Mat,
    /// `R + B_uᵀ X B_u`
    pub h: Mat,
    pub dare: DareSolution,
}

impl NoncausalController {
    pub fn spectral_radius(&self) -> f64 {
        self.dare.spectral_radius
    }
}

pub fn build_noncausal(plant: &Plant) -> Result<NoncausalController> {
    let dare = riccati::solve_dare(plant.a(), plant.b_u(), plant.q(), plant.r(), riccati::DEFAULT_DARE_TOL)?;
    let x = dare.x.clone();
    let h = linalg::symmetrize(&(plant.r() + plant.b_u().transpose() * &x * plant.b_u()));
    let k_v = linalg::solve(&h, &plant.b_u().transpose(), "R + B_uᵀXB_u")?;
    let k_x = &k_v * &x * plant.a();
    let k_d = &k_v * &x * plant.b_d();
    let a_tilde = plant.a() - plant.b_u() * &k_x;
    let sv = linalg::singular_values(&a_tilde);
    if let (Some(&top), Some(&bottom)) = (sv.first(), sv.last()) {
        if bottom <= 1e-12 * top {
            return Err(Error::Precondition("closed-loop matrix Ã is singular".into()));
        }
    }
    Ok(NoncausalController { x, k_x, k_v, k_d, a_tilde, h, dare })
}

/// The costate `v(0), …, v(T)` for a finite-support `d` of length `T`; `v(t) = 0` for `t ≥ T`.
pub fn costate(plant: &Plant, ctrl: &NoncausalController, d: &Signal) -> Vec<DVector<f64>> {
    let n_x = plant.n_x();
    let at = ctrl.a_tilde.transpose();
    let xb = &ctrl.x * plant.b_d();
    let len = d.len();
    let mut v = vec![DVector::zeros(n_x); len + 1];
    for t in (0..len).rev() {
        v[t] = &at * (&v[t + 1] + &xb * &d.samples()[t]);
    }
    v
}

/// Simulates the non-causal closed loop from `x(0) = 0` with the same horizon
/// and decay rule as [`lti::simulate`]. The truncation bound is the exact
/// cost-to-go `x(T)ᵀ X x(T)` of the remaining free response.
pub fn noncausal_trajectory(
    plant: &Plant,
    ctrl: &NoncausalController,
    d: &Signal,
    decay_tol: f64,
) -> Result<Trajectory> {
    if d.n_d() != plant.n_d() {
        return Err(Error::Dimension(format!("signal has {} channels, plant has {}", d.n_d(), plant.n_d())));
    }
    let v = costate(plant, ctrl, d);
    let base = lti::base_horizon(d.len(), plant.n_x());
    let mut x = DVector::zeros(plant.n_x());
    let mut states = vec![x.clone()];
    let mut inputs = Vec::new();
    let mut peak: f64 = 0.0;
    let mut t = 0;
    loop {
        let dt = d.at(t);
        let mut u = -(&ctrl.k_x * &x) - &ctrl.k_d * &dt;
        if t + 1 < v.len() {
            u -= &ctrl.k_v * &v[t + 1];
        }
        x = plant.a() * &x + plant.b_d() * &dt + plant.b_u() * &u;
        inputs.push(u);
        t += 1;
        let size = x.norm();
        peak = peak.max(size);
        states.push(x.clone());
        if t >= base && size <= decay_tol * peak {
            break;
        }
        if t >= lti::MAX_SIMULATION_STEPS {
            return Err(Error::Diverging { steps: t });
        }
    }
    let mut traj = Trajectory::from_parts(plant, states, inputs);
    // past the support the law is plain LQR, whose cost-to-go is X
    traj.truncation_bound = x.dot(&(&ctrl.x * &x)).max(0.0);
    Ok(traj)
}

/// `J(K_nc, d)`, including the exact tail beyond the simulated horizon.
pub fn noncausal_cost(plant: &Plant, ctrl: &NoncausalController, d: &Signal) -> Result<f64> {
    let traj = noncausal_trajectory(plant, ctrl, d, 1e-12)?;
    Ok(lti::cost(&traj) + traj.truncation_bound)
}

/// Per-frequency map `d → [Q^{1/2}x; R^{1/2}u]` of the non-causal closed loop and its symbol `W = T*T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoncausalResponse {
    pub omega_grid: Vec<f64>,
    pub t_nc: Vec<CMat>,
    pub w: Vec<CMat>,
}

/// `T_nc(e^{iω})` at any real `omega`, from one joint solve for `(x, u)`.
pub fn transfer_at(plant: &Plant, ctrl: &NoncausalController, omega: f64) -> Result<CMat> {
    let (n_x, n_u, n_d) = (plant.n_x(), plant.n_u(), plant.n_d());
    let z = Complex64::from_polar(1.0, omega);
    let c = linalg::to_complex;
    let at = c(&ctrl.a_tilde.transpose());

    // v̂ = (I − z Ãᵀ)⁻¹ Ãᵀ X B_d
    let lhs_v = CMat::identity(n_x, n_x) - &at * z;
    let v = lhs_v
        .lu()
        .solve(&(&at * c(&(&ctrl.x * plant.b_d()))))
        .ok_or(Error::SingularResolvent { omega })?;

    // [zI − A, −B_u; K_x, I] [x; u] = [B_d; −z K_v v̂ − K_d]
    let n = n_x + n_u;
    let mut m = CMat::zeros(n, n);
    m.view_mut((0, 0), (n_x, n_x)).copy_from(&(-c(plant.a())));
    for i in 0..n_x {
        m[(i, i)] += z;
    }
    m.view_mut((0, n_x), (n_x, n_u)).copy_from(&(-c(plant.b_u())));
    m.view_mut((n_x, 0), (n_u, n_x)).copy_from(&c(&ctrl.k_x));
    for i in 0..n_u {
        m[(n_x + i, n_x + i)] = Complex64::new(1.0, 0.0);
    }
    let mut rhs = CMat::zeros(n, n_d);
    rhs.view_mut((0, 0), (n_x, n_d)).copy_from(&c(plant.b_d()));
    rhs.view_mut((n_x, 0), (n_u, n_d))
        .copy_from(&(-(c(&ctrl.k_v) * &v * z) - c(&ctrl.k_d)));

    let lu = m.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
    let pmax = pivots.iter().copied().fold(0.0, f64::max).max(1.0);
    if pivots.iter().any(|&p| p <= 1e-12 * pmax) {
        return Err(Error::SingularResolvent { omega });
    }
    let sol = lu.solve(&rhs).ok_or(Error::SingularResolvent { omega })?;
    let xs = sol.view((0, 0), (n_x, n_d)).into_owned();
    let us = sol.view((n_x, 0), (n_u, n_d)).into_owned();
    Ok(linalg::vstack_c(&[&(c(plant.q_sqrt()) * xs), &(c(plant.r_sqrt()) * us)]))
}

pub(crate) fn transfer_retry(plant: &Plant, ctrl: &NoncausalController, omega: f64) -> Result<CMat> {
    match transfer_at(plant, ctrl, omega) {
        Err(Error::SingularResolvent { .. }) => transfer_at(plant, ctrl, omega + 1e-9),
        other => other,
    }
}

pub fn noncausal_response(plant: &Plant, ctrl: &NoncausalController, omega_grid: &[f64]) -> Result<NoncausalResponse> {
    if let Some(&w) = omega_grid.iter().find(|w| !(0.0..=std::f64::consts::PI).contains(*w)) {
        return Err(Error::Precondition(format!("frequency {w} outside [0, pi]")));
    }
    let t_nc: Vec<CMat> = omega_grid
        .iter()
        .map(|&w| transfer_retry(plant, ctrl, w))
        .collect::<Result<_>>()?;
    let w = t_nc.iter().map(|t| t.adjoint() * t).collect();
    Ok(NoncausalResponse { omega_grid: omega_grid.to_vec(), t_nc, w })
}

/// `γ_nc` with the frequency where it is attained and the refinement tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaNc {
    pub value: f64,
    pub omega: f64,
    pub tol: f64,
    pub grid_size: usize,
}

/// `max_ω σ_max(T_nc(ω))` on a uniform grid, refined by golden section around the three largest peaks.
pub fn gamma_nc(plant: &Plant, tol: f64) -> Result<GammaNc> {
    gamma_nc_on_grid(plant, DEFAULT_GRID_SIZE, tol)
}

pub fn gamma_nc_on_grid(plant: &Plant, grid_size: usize, tol: f64) -> Result<GammaNc> {
    if plant.disturbance_decoupled() {
        return Ok(GammaNc { value: 0.0, omega: 0.0, tol, grid_size });
    }
    let ctrl = build_noncausal(plant)?;
    let grid = lti::uniform_grid(grid_size.max(2));
    let values: Vec<f64> = grid
        .iter()
        .map(|&w| transfer_retry(plant, &ctrl, w).map(|t| linalg::cnorm2(&t)))
        .collect::<Result<_>>()?;
    let (omega, value) = linalg::refine_grid_max(
        |w| transfer_retry(plant, &ctrl, w).map_or(f64::NEG_INFINITY, |t| linalg::cnorm2(&t)),
        &grid,
        &values,
        3,
        tol,
    );
    Ok(GammaNc { value, omega, tol, grid_size })
}
