//! p-step preview synthesis.
//!
//! Preview is handled by appending a delay chain holding `d(t), …, d(t+p−1)`
//! to the plant state, so that the newest sample `d(t+p)` becomes the
//! exogenous input of an ordinary full-information problem:
//!
//! ```text
//! x̂(t+1) = Â x̂(t) + B̂_d d(t+p) + B̂_u u(t)
//!
//!     ⎡A  B_d  0 … 0⎤        ⎡0⎤        ⎡B_u⎤
//!     ⎢0   0   I    ⎥        ⎢⋮⎥        ⎢ 0 ⎥
//! Â = ⎢        ⋱    ⎥  B̂_d = ⎢0⎥  B̂_u = ⎢ ⋮ ⎥
//!     ⎢0   …   0   I⎥        ⎢ ⎥        ⎢   ⎥
//!     ⎣0   …   …   0⎦        ⎣I⎦        ⎣ 0 ⎦
//! ```

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::{Plant, PreviewController, StateSpace};
use crate::noncausal::{self, build_noncausal};
use crate::riccati::{self, Feasibility, SolveMode};

/// Default bisection width for the optimal preview level.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-10;

/// Upper-bracket doublings before a bisection gives up.
pub const MAX_ESCALATIONS: usize = 60;

/// A plant with its p-step disturbance delay chain appended.
///
/// The base system need not be a validated [`Plant`]: the regret reduction
/// augments a disturbance-filtered plant the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub a_hat: Mat,
    pub b_u_hat: Mat,
    pub b_d_hat: Mat,
    pub q_hat: Mat,
    pub r: Mat,
    pub p: usize,
    base_a: Mat,
    base_b_d: Mat,
    base_b_u: Mat,
}

impl AugmentedPlant {
    pub fn from_parts(a: &Mat, b_d: &Mat, b_u: &Mat, q: &Mat, r: &Mat, p: usize) -> Result<Self> {
        let n = a.nrows();
        let (n_d, n_u) = (b_d.ncols(), b_u.ncols());
        if a.ncols() != n || b_d.nrows() != n || b_u.nrows() != n || q.shape() != (n, n) || r.shape() != (n_u, n_u) {
            return Err(Error::Dimension("augmentation blocks are inconsistent".into()));
        }
        let dim = n + p * n_d;
        let mut a_hat = Mat::zeros(dim, dim);
        let mut b_d_hat = Mat::zeros(dim, n_d);
        let mut b_u_hat = Mat::zeros(dim, n_u);
        let mut q_hat = Mat::zeros(dim, dim);
        a_hat.view_mut((0, 0), (n, n)).copy_from(a);
        b_u_hat.view_mut((0, 0), (n, n_u)).copy_from(b_u);
        q_hat.view_mut((0, 0), (n, n)).copy_from(q);
        if p == 0 {
            b_d_hat.copy_from(b_d);
        } else {
            a_hat.view_mut((0, n), (n, n_d)).copy_from(b_d);
            for j in 0..p - 1 {
                a_hat.view_mut((n + j * n_d, n + (j + 1) * n_d), (n_d, n_d)).fill_with_identity();
            }
            b_d_hat.view_mut((n + (p - 1) * n_d, 0), (n_d, n_d)).fill_with_identity();
        }
        Ok(Self {
            a_hat,
            b_u_hat,
            b_d_hat,
            q_hat,
            r: r.clone(),
            p,
            base_a: a.clone(),
            base_b_d: b_d.clone(),
            base_b_u: b_u.clone(),
        })
    }

    /// Dimension of the un-augmented state.
    pub fn n_base(&self) -> usize {
        self.base_a.nrows()
    }
    pub fn n_d(&self) -> usize {
        self.base_b_d.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.base_b_u.ncols()
    }
    pub fn dim(&self) -> usize {
        self.a_hat.nrows()
    }
}

pub fn augment(plant: &Plant, p: usize) -> AugmentedPlant {
    AugmentedPlant::from_parts(plant.a(), plant.b_d(), plant.b_u(), plant.q(), plant.r(), p)
        .expect("a validated plant has consistent dimensions")
}

/// A γ-suboptimal preview controller with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub gamma: f64,
    /// Largest level known to be infeasible (the lower end of the bisection bracket).
    pub gamma_lower: f64,
    pub controller: PreviewController,
    pub feasibility: Feasibility,
    /// `X̂⁰, X̂¹, …, X̂ᵖ`: the first `n` rows of `X̂` split into the state block and one block per previewed sample.
    pub x_hat_blocks: Vec<Mat>,
    /// Augmented-form gains: `u = −K̂_x x̂ − K̂_d d(t+p)`.
    pub k_x_hat: Mat,
    pub k_d_hat: Mat,
}

/// Riccati feasibility test of level `gamma` on the augmented plant; on
/// success also returns the controller synthesized at that level.
pub fn hinf_preview_feasible(aug: &AugmentedPlant, gamma: f64) -> (Feasibility, Option<SynthesisResult>) {
    hinf_preview_feasible_with(aug, gamma, SolveMode::Certified)
}

pub fn hinf_preview_feasible_with(
    aug: &AugmentedPlant,
    gamma: f64,
    mode: SolveMode,
) -> (Feasibility, Option<SynthesisResult>) {
    let feas = riccati::hinf_feasibility_with(&aug.a_hat, &aug.b_u_hat, &aug.b_d_hat, &aug.q_hat, &aug.r, gamma, mode);
    if !feas.feasible {
        return (feas, None);
    }
    let result = feas.solution.as_ref().and_then(|sol| synthesize(aug, &sol.x, gamma, &feas).ok());
    (feas, result)
}

fn synthesize(aug: &AugmentedPlant, x_hat: &Mat, gamma: f64, feas: &Feasibility) -> Result<SynthesisResult> {
    let h = linalg::symmetrize(&(&aug.r + aug.b_u_hat.transpose() * x_hat * &aug.b_u_hat));
    let hb = linalg::solve(&h, &(aug.b_u_hat.transpose() * x_hat), "H")?;
    let k_x_hat = &hb * &aug.a_hat;
    let k_d_hat = &hb * &aug.b_d_hat;
    let blocks = x_hat_blocks(aug, x_hat);
    let controller = taps_from_blocks(&h, &aug.base_a, &aug.base_b_d, &aug.base_b_u, &blocks)?;
    Ok(SynthesisResult {
        gamma,
        gamma_lower: f64::NAN,
        controller,
        feasibility: feas.clone(),
        x_hat_blocks: blocks,
        k_x_hat,
        k_d_hat,
    })
}

fn x_hat_blocks(aug: &AugmentedPlant, x_hat: &Mat) -> Vec<Mat> {
    let (n, n_d) = (aug.n_base(), aug.n_d());
    let mut blocks = vec![x_hat.view((0, 0), (n, n)).into_owned()];
    for j in 1..=aug.p {
        blocks.push(x_hat.view((0, n + (j - 1) * n_d), (n, n_d)).into_owned());
    }
    blocks
}

/// `K_x = H⁻¹B_uᵀX̂⁰A`, `M_0 = H⁻¹B_uᵀX̂⁰B_d`, `M_j = H⁻¹B_uᵀX̂ʲ`.
fn taps_from_blocks(h: &Mat, a: &Mat, b_d: &Mat, b_u: &Mat, blocks: &[Mat]) -> Result<PreviewController> {
    let k_v = linalg::solve(h, &b_u.transpose(), "H")?;
    let x0 = &blocks[0];
    let k_x = &k_v * x0 * a;
    let mut taps = vec![&k_v * x0 * b_d];
    taps.extend(blocks[1..].iter().map(|xj| &k_v * xj));
    PreviewController::new(k_x, taps)
}

/// Tap form of a synthesized controller, rebuilt from its `X̂` blocks.
pub fn to_tap_form(result: &SynthesisResult, plant: &Plant) -> Result<PreviewController> {
    let x0 = &result.x_hat_blocks[0];
    if x0.nrows() != plant.n_x() {
        return Err(Error::Dimension("result was not synthesized for this plant".into()));
    }
    let h = linalg::symmetrize(&(plant.r() + plant.b_u().transpose() * x0 * plant.b_u()));
    taps_from_blocks(&h, plant.a(), plant.b_d(), plant.b_u(), &result.x_hat_blocks)
}

/// Certified test first; near the optimum, where the Riccati pencil crowds the
/// unit circle, a relaxed solve is kept only if its closed loop is below `gamma`.
fn feasible_at(aug: &AugmentedPlant, gamma: f64) -> Option<SynthesisResult> {
    if let (_, Some(r)) = hinf_preview_feasible(aug, gamma) {
        return Some(r);
    }
    let (_, r) = hinf_preview_feasible_with(aug, gamma, SolveMode::Candidate);
    r.filter(|r| closed_loop_below(aug, r, gamma))
}

/// Bounded-real test of the augmented loop `u = −K̂_x x̂ − K̂_d d`.
fn closed_loop_below(aug: &AugmentedPlant, r: &SynthesisResult, gamma: f64) -> bool {
    let a = &aug.a_hat - &aug.b_u_hat * &r.k_x_hat;
    let b = &aug.b_d_hat - &aug.b_u_hat * &r.k_d_hat;
    let q_sqrt = linalg::sym_sqrt(&aug.q_hat);
    let r_sqrt = linalg::sym_sqrt(&aug.r);
    let c = linalg::vstack(&[&q_sqrt, &(-(&r_sqrt * &r.k_x_hat))]);
    let d = linalg::vstack(&[&Mat::zeros(aug.dim(), aug.n_d()), &(-(&r_sqrt * &r.k_d_hat))]);
    match StateSpace::new(a, b, c, d) {
        Ok(sys) => sys.spectral_radius() < 1.0 && riccati::bounded_real(&sys, gamma),
        Err(_) => false,
    }
}

/// Smallest feasible level on `aug` to within `tol`, starting from a known
/// lower bound `lo` (which may itself be feasible).
pub fn bisect_level(aug: &AugmentedPlant, lo: f64, tol: f64) -> Result<SynthesisResult> {
    let mut lo = lo.max(0.0);
    if lo > 0.0 {
        if let Some(mut r) = feasible_at(aug, lo) {
            r.gamma_lower = lo;
            return Ok(r);
        }
    }
    let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
    let mut best = None;
    for _ in 0..=MAX_ESCALATIONS {
        if let Some(r) = feasible_at(aug, hi) {
            best = Some(r);
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    let mut best = best.ok_or_else(|| {
        Error::SynthesisFailure(format!("no feasible level found up to {:e}", hi / 2.0))
    })?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match feasible_at(aug, mid) {
            Some(r) => {
                hi = mid;
                best = r;
            }
            _ => lo = mid,
        }
    }
    best.gamma_lower = lo;
    Ok(best)
}

/// Optimal p-step preview H∞ level `γ∞,p` (upper end of a bracket of width `tol`) and its controller.
pub fn hinf_preview_bisect(plant: &Plant, p: usize, tol: f64) -> Result<SynthesisResult> {
    let aug = augment(plant, p);
    if plant.disturbance_decoupled() {
        return decoupled_result(plant, &aug);
    }
    let lower = noncausal::gamma_nc(plant, 1e-12)?.value;
    bisect_level(&aug, lower, tol)
}

/// With `B_d = 0` every level is achieved by LQR and the level reported is 0.
fn decoupled_result(plant: &Plant, aug: &AugmentedPlant) -> Result<SynthesisResult> {
    let nc = build_noncausal(plant)?;
    let dim = aug.dim();
    let mut x_hat = Mat::zeros(dim, dim);
    x_hat.view_mut((0, 0), (plant.n_x(), plant.n_x())).copy_from(&nc.x);
    let blocks = x_hat_blocks(aug, &x_hat);
    let controller = to_tap_form_parts(plant, &blocks)?;
    let feasibility = Feasibility {
        feasible: true,
        gamma: 0.0,
        h_min_eig: linalg::min_sym_eig(&nc.h),
        delta_min_eig: f64::INFINITY,
        x_min_eig: linalg::min_sym_eig(&nc.x),
        solution: None,
        reason: None,
    };
    Ok(SynthesisResult {
        gamma: 0.0,
        gamma_lower: 0.0,
        controller,
        feasibility,
        x_hat_blocks: blocks,
        k_x_hat: linalg::hstack(&[&nc.k_x, &Mat::zeros(plant.n_u(), dim - plant.n_x())]),
        k_d_hat: Mat::zeros(plant.n_u(), plant.n_d()),
    })
}

fn to_tap_form_parts(plant: &Plant, blocks: &[Mat]) -> Result<PreviewController> {
    let h = linalg::symmetrize(&(plant.r() + plant.b_u().transpose() * &blocks[0] * plant.b_u()));
    taps_from_blocks(&h, plant.a(), plant.b_d(), plant.b_u(), blocks)
}

/// H2 preview controller: the non-causal law with its feedforward sum cut after `p` samples,
/// `M_j = K_v (Ãᵀ)ʲ X B_d`.
pub fn h2_preview(plant: &Plant, p: usize) -> Result<PreviewController> {
    let nc = build_noncausal(plant)?;
    Ok(h2_from_noncausal(&nc, plant, p))
}

pub fn h2_from_noncausal(nc: &noncausal::NoncausalController, plant: &Plant, p: usize) -> PreviewController {
    let at = nc.a_tilde.transpose();
    let mut s = &nc.x * plant.b_d();
    let mut taps = Vec::with_capacity(p + 1);
    for _ in 0..=p {
        taps.push(&nc.k_v * &s);
        s = &at * s;
    }
    PreviewController::new(nc.k_x.clone(), taps).expect("gain shapes follow from the plant")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{self, Signal};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn p_zero_is_the_plant() {
        let plant = Plant::reference_example();
        let aug = augment(&plant, 0);
        assert_eq!(&aug.a_hat, plant.a());
        assert_eq!(&aug.b_d_hat, plant.b_d());
        assert_eq!(&aug.b_u_hat, plant.b_u());
        assert_eq!(&aug.q_hat, plant.q());
    }

    #[test]
    fn p_two_structure() {
        let plant = Plant::reference_example();
        let aug = augment(&plant, 2);
        #[rustfmt::skip]
        let a_hat = Mat::from_row_slice(4, 4, &[
            3.0, 1.0, 1.0, 0.0,
            -1.0, -2.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 0.0,
        ]);
        assert_eq!(aug.a_hat, a_hat);
        assert_eq!(aug.b_d_hat, Mat::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(aug.b_u_hat, Mat::from_column_slice(4, 1, &[3.0, -1.0, 0.0, 0.0]));
        let mut q_hat = Mat::zeros(4, 4);
        q_hat[(0, 0)] = 3.0;
        q_hat[(1, 1)] = 3.0;
        assert_eq!(aug.q_hat, q_hat);
    }

    #[test]
    fn large_gamma_approaches_lqr() {
        let plant = Plant::reference_example();
        let (feas, res) = hinf_preview_feasible(&augment(&plant, 0), 1e6);
        assert!(feas.feasible);
        let nc = build_noncausal(&plant).unwrap();
        let x = &feas.solution.unwrap().x;
        assert!((x - &nc.x).norm() <= 1e-3 * nc.x.norm());
        let ctrl = res.unwrap().controller;
        assert!((ctrl.k_x() - &nc.k_x).norm() <= 1e-3);
    }

    #[test]
    fn taps_rebuild_from_blocks() {
        let plant = Plant::reference_example();
        let res = hinf_preview_bisect(&plant, 3, 1e-8).unwrap();
        let again = to_tap_form(&res, &plant).unwrap();
        assert!((again.k_x() - res.controller.k_x()).norm() <= 1e-12);
        for (a, b) in again.taps().iter().zip(res.controller.taps()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn augmented_and_tap_forms_agree() {
        let plant = Plant::reference_example();
        let p = 4;
        let res = hinf_preview_bisect(&plant, p, 1e-8).unwrap();
        let aug = augment(&plant, p);
        let d = Signal::from_flat(1, &[0.3, -1.2, 0.7, 0.0, 2.0, -0.4, 0.9, 0.1]);
        let ctrl = &res.controller;
        let mut x = DVector::zeros(2);
        let mut xh = DVector::zeros(aug.dim());
        for j in 0..p {
            xh[2 + j] = d.at(j)[0];
        }
        for t in 0..30 {
            let mut u_tap = -(ctrl.k_x() * &x);
            for (j, m) in ctrl.taps().iter().enumerate() {
                u_tap -= m * d.at(t + j);
            }
            let u_aug = -(&res.k_x_hat * &xh) - &res.k_d_hat * d.at(t + p);
            assert!((&u_tap - &u_aug).norm() <= 1e-10 * (1.0 + u_tap.norm()), "t = {t}");
            x = plant.a() * &x + plant.b_d() * d.at(t) + plant.b_u() * &u_tap;
            xh = &aug.a_hat * &xh + &aug.b_d_hat * d.at(t + p) + &aug.b_u_hat * &u_aug;
            assert!((xh.rows(0, 2) - &x).norm() <= 1e-10 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn decoupled_disturbance_needs_no_taps() {
        let s = |v| Mat::from_element(1, 1, v);
        let plant = Plant::new(s(1.5), s(0.0), s(1.0), s(1.0), s(1.0)).unwrap();
        let res = hinf_preview_bisect(&plant, 2, 1e-10).unwrap();
        assert_eq!(res.gamma, 0.0);
        assert!(res.controller.taps().iter().all(|m| m.norm() == 0.0));
        let (feas, _) = hinf_preview_feasible(&augment(&plant, 2), 1e-3);
        assert!(feas.feasible);
    }

    #[test]
    fn h2_single_tap_is_full_information() {
        let plant = Plant::reference_example();
        let nc = build_noncausal(&plant).unwrap();
        let ctrl = h2_preview(&plant, 0).unwrap();
        assert_eq!(ctrl.taps().len(), 1);
        assert_relative_eq!(ctrl.taps()[0], nc.k_d, epsilon = 1e-14);
        let sys = lti::closed_loop(&plant, &h2_preview(&plant, 6).unwrap()).unwrap();
        assert!(sys.spectral_radius() < 1.0);
    }
}
