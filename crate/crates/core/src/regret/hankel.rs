//! Exact lower bound on the preview regret level.
//!
//! Along any trajectory `J(K, d) − J(K_nc, d) = Σ_t ‖H^{1/2}(u(t) − u_nc(t))‖²`,
//! where `u_nc(t) = −K_x x(t) − Σ_{j≥0} M_j d(t+j)` is the non-causal law
//! evaluated on that trajectory. A p-preview controller can reproduce every
//! term with `j ≤ p`; the rest, `Σ_{k≥1} M_{p+k} d(t+p+k)`, is strictly
//! anticausal relative to its information, so no causal correction gets below
//! the Hankel norm of that tail.

use crate::error::Result;
use crate::linalg;
use crate::lti::Plant;
use crate::noncausal::{build_noncausal, NoncausalController};

/// Hankel norm of `k ↦ H^{1/2} M_{p+1+k}` with `M_j = K_v (Ãᵀ)ʲ X B_d`.
pub fn hankel_regret_level(plant: &Plant, p: usize) -> Result<f64> {
    if plant.disturbance_decoupled() {
        return Ok(0.0);
    }
    let nc = build_noncausal(plant)?;
    hankel_level_from(&nc, plant, p)
}

pub fn hankel_level_from(nc: &NoncausalController, plant: &Plant, p: usize) -> Result<f64> {
    let a = nc.a_tilde.transpose();
    let b = &nc.x * plant.b_d();
    // P = A P Aᵀ + B Bᵀ
    let ctrb = linalg::solve_stein(&nc.a_tilde, &(&b * b.transpose()))?;
    let mut c = linalg::sym_sqrt(&nc.h) * &nc.k_v;
    for _ in 0..=p {
        c = &c * &a;
    }
    let obsv = linalg::solve_stein(&a, &(c.transpose() * &c))?;
    let root = linalg::sym_sqrt(&ctrb);
    Ok(linalg::max_sym_eig(&(&root * obsv * &root)).max(0.0).sqrt())
}

/// `‖H^{1/2} M_j‖` summed past the preview window; a cheap upper bound on the same Hankel norm.
pub fn tail_sum(nc: &NoncausalController, plant: &Plant, p: usize, terms: usize) -> f64 {
    let a = nc.a_tilde.transpose();
    let hs = linalg::sym_sqrt(&nc.h) * &nc.k_v;
    let mut s = &nc.x * plant.b_d();
    for _ in 0..=p {
        s = &a * s;
    }
    let mut total = 0.0;
    for _ in 0..terms {
        total += linalg::norm2(&(&hs * &s));
        s = &a * s;
    }
    total
}
