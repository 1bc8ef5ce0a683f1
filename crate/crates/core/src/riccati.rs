//! Stabilizing solutions of the discrete algebraic Riccati equation
//!
//! ```text
//! 0 = X − AᵀXA − Q + AᵀXB (R̂ + BᵀXB)⁻¹ BᵀXA
//! ```
//!
//! for definite (LQR) and indefinite (H∞, `R̂ = diag(R, −γ²I)`) weights, and
//! the bounded-real H∞ norm of a causal system built on top of it.
//!
//! The solver works on the symplectic pencil `M − λL` with
//! `M = [A 0; −Q I]`, `L = [I G; 0 Aᵀ]`, `G = B R̂⁻¹ Bᵀ`. A Cayley transform
//! maps the pencil to a single matrix whose eigenvalues split across the
//! imaginary axis exactly as the pencil's split across the unit circle, and
//! the matrix sign function of that matrix yields the stable deflating
//! subspace `[I; X]` without inverting `A`. Newton steps polish the result.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::{self, StateSpace};

/// Default relative residual tolerance: `‖defect‖_F ≤ tol · (1 + ‖X‖_F)`.
pub const DEFAULT_DARE_TOL: f64 = 1e-9;

/// Residual tolerance of the H∞ feasibility test, relative to the size of the
/// terms `‖X‖ + ‖A_clᵀXA_cl‖ + ‖Q‖ + ‖KᵀR̂K‖` that the equation balances.
/// Near the optimal level these terms can exceed `‖X‖` by orders of magnitude.
pub const FEASIBILITY_DARE_TOL: f64 = 1e-9;

/// How much an unsettled sign iteration is trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Levels whose sign iteration does not settle are rejected.
    Certified,
    /// The last sign iterate is handed to Newton and the certificate even when
    /// it has not settled. Accepted levels must be verified independently.
    Candidate,
}

impl SolveMode {
    /// Relative change below which a stalled iteration is accepted.
    fn stall_band(self) -> f64 {
        match self {
            SolveMode::Certified => 1e-6,
            SolveMode::Candidate => 1e-4,
        }
    }

    /// Relative size of the last step of an unsettled iteration that is still handed on.
    fn unsettled_band(self) -> f64 {
        match self {
            SolveMode::Certified => 0.0,
            SolveMode::Candidate => 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResidualScale {
    /// `1 + ‖X‖_F`
    Solution,
    /// `1 + ‖X‖_F + ‖A_clᵀXA_cl‖_F + ‖Q‖_F + ‖KᵀR̂K‖_F`
    Terms,
}

/// Closed-loop spectral radius must stay below `1 − STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Cayley-transformed pencils worse conditioned than this fall back to the difference iteration.
const MAX_PENCIL_CONDITION: f64 = 1e12;

const MAX_SIGN_ITERATIONS: usize = 100;
const MAX_NEWTON_STEPS: usize = 6;
const MAX_DIFFERENCE_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub x: Mat,
    /// `(R̂ + BᵀXB)⁻¹ BᵀXA`
    pub gain: Mat,
    /// `A − B · gain`
    pub closed_loop_matrix: Mat,
    /// Frobenius norm of the Riccati defect at `x`.
    pub residual: f64,
    pub spectral_radius: f64,
}

/// Frobenius norm of `X − AᵀXA − Q + AᵀXB(R̂ + BᵀXB)⁻¹BᵀXA`.
///
/// Evaluated in the equivalent closed-loop form `X − A_clᵀXA_cl − Q − KᵀR̂K`,
/// which is stationary in `K` and so insensitive to the rounding in the gain
/// solve when `R̂ + BᵀXB` is badly conditioned.
pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat, x: &Mat) -> Result<f64> {
    let (gain, acl) = gain_and_loop(a, b, r_hat, x)?;
    let defect = x - acl.transpose() * x * &acl - q - gain.transpose() * r_hat * &gain;
    Ok(linalg::symmetrize(&defect).norm())
}

fn gain_and_loop(a: &Mat, b: &Mat, r_hat: &Mat, x: &Mat) -> Result<(Mat, Mat)> {
    let s = r_hat + b.transpose() * x * b;
    let gain = linalg::solve(&s, &(b.transpose() * x * a), "R + BᵀXB")?;
    let acl = a - b * &gain;
    Ok((gain, acl))
}

fn check_dims(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r_hat.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "DARE data: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r_hat.shape()
        )));
    }
    Ok(())
}

/// Stabilizing solution of the DARE defined by `(A, B, Q, R̂)`.
///
/// `R̂` may be indefinite but must be nonsingular. The returned solution has
/// residual at most `tol · (1 + ‖X‖_F)` and a closed loop with spectral
/// radius below `1 − 1e-9`.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat, tol: f64) -> Result<DareSolution> {
    solve_dare_scaled(a, b, q, r_hat, tol, ResidualScale::Solution, SolveMode::Certified)
}

fn solve_dare_scaled(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r_hat: &Mat,
    tol: f64,
    scale: ResidualScale,
    mode: SolveMode,
) -> Result<DareSolution> {
    check_dims(a, b, q, r_hat)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DareSolution {
            x: Mat::zeros(0, 0),
            gain: Mat::zeros(b.ncols(), 0),
            closed_loop_matrix: Mat::zeros(0, 0),
            residual: 0.0,
            spectral_radius: 0.0,
        });
    }
    let q = linalg::symmetrize(q);
    let x = match subspace_solution(a, b, &q, r_hat, mode)? {
        Some(x) => x,
        None => difference_iteration(a, b, &q, r_hat)?,
    };
    let x = newton_polish(a, b, &q, r_hat, x);
    certify(a, b, &q, r_hat, x, tol, scale)
}

fn certify(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat, x: Mat, tol: f64, scale: ResidualScale) -> Result<DareSolution> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Infeasible("non-finite Riccati solution".into()));
    }
    let (gain, acl) = gain_and_loop(a, b, r_hat, &x)?;
    let residual = dare_residual(a, b, q, r_hat, &x)?;
    let rho = linalg::spectral_radius(&acl);
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(Error::Infeasible(format!(
            "closed-loop spectral radius {rho} (pencil eigenvalues on or near the unit circle)"
        )));
    }
    let size = match scale {
        ResidualScale::Solution => 1.0 + x.norm(),
        ResidualScale::Terms => {
            1.0 + x.norm()
                + (acl.transpose() * &x * &acl).norm()
                + q.norm()
                + (gain.transpose() * r_hat * &gain).norm()
        }
    };
    if residual > tol * size {
        return Err(Error::Infeasible(format!(
            "Riccati residual {residual:e} exceeds tolerance {:e}",
            tol * size
        )));
    }
    Ok(DareSolution { x, gain, closed_loop_matrix: acl, residual, spectral_radius: rho })
}

/// Cayley transform `Z` of the symplectic pencil and the condition number of
/// its denominator. An eigenvalue `μ` of `Z` corresponds to the pencil
/// eigenvalue `λ` with `|λ| = |1 + μ| / |1 − μ|`, so the unit disc maps to the
/// open left half plane.
fn cayley(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat) -> Result<Option<(f64, Mat)>> {
    let n = a.nrows();
    let r_inv = linalg::inverse(r_hat, "R̂")?;
    let g = linalg::symmetrize(&(b * r_inv * b.transpose()));
    let eye = Mat::identity(n, n);
    let zero = Mat::zeros(n, n);
    let m = linalg::vstack(&[&linalg::hstack(&[a, &zero]), &linalg::hstack(&[&(-q), &eye])]);
    let l = linalg::vstack(&[&linalg::hstack(&[&eye, &g]), &linalg::hstack(&[&zero, &a.transpose()])]);

    // Cayley point at λ = −1 or λ = +1, whichever keeps the transform better conditioned.
    // Both send the open unit disc to the open left half plane.
    let candidates = [(&m + &l, &m - &l), (&m - &l, &m + &l)];
    let mut best: Option<(f64, Mat)> = None;
    for (den, num) in candidates {
        let Some(inv) = den.clone().try_inverse() else { continue };
        let cond = one_norm(&den) * one_norm(&inv);
        if best.as_ref().map_or(true, |(c, _)| cond < *c) {
            best = Some((cond, inv * num));
        }
    }
    Ok(best)
}

/// Stable deflating subspace via the sign function; `None` when the pencil is too badly conditioned.
fn subspace_solution(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat, mode: SolveMode) -> Result<Option<Mat>> {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let Some((cond, mut z)) = cayley(a, b, q, r_hat)? else { return Ok(None) };
    if !cond.is_finite() || cond > MAX_PENCIL_CONDITION {
        return Ok(None);
    }

    let dim = 2 * n;
    let mut converged = false;
    let mut prev_change = f64::INFINITY;
    let mut last = f64::INFINITY;
    for k in 0..MAX_SIGN_ITERATIONS {
        let lu = z.clone().lu();
        let u = lu.u();
        let Some(zinv) = lu.try_inverse() else {
            return Err(Error::Infeasible("pencil has an eigenvalue on the unit circle".into()));
        };
        // determinant scaling speeds up the early iterations
        let scale = if k < 20 {
            let logdet: f64 = (0..dim).map(|i| u[(i, i)].abs().ln()).sum();
            let c = (-logdet / dim as f64).exp();
            if c.is_finite() && c > 0.0 { c } else { 1.0 }
        } else {
            1.0
        };
        let next = (&z * scale + zinv / scale) * 0.5;
        let change = one_norm(&(&next - &z));
        let size = one_norm(&next);
        last = change / size;
        z = next;
        if !size.is_finite() {
            break;
        }
        // near the unit circle rounding stalls the iteration above 1e-13; Newton and certify clean up
        if change <= 1e-13 * size || (change <= mode.stall_band() * size && change >= prev_change) {
            converged = true;
            break;
        }
        prev_change = change;
    }
    if !converged && !(last <= mode.unsettled_band()) {
        return Err(Error::Infeasible(
            "sign iteration did not converge (pencil eigenvalues near the unit circle)".into(),
        ));
    }
    let trace = z.trace();
    if trace.abs() > 0.5 {
        return Err(Error::Infeasible(format!(
            "pencil does not split evenly across the unit circle (sign trace {trace:.3})"
        )));
    }

    // (S + I)[I; X] = 0  ⇒  [S12; S22 + I] X = −[S11 + I; S21]
    let s11 = z.view((0, 0), (n, n)).into_owned() + &eye;
    let s12 = z.view((0, n), (n, n)).into_owned();
    let s21 = z.view((n, 0), (n, n)).into_owned();
    let s22 = z.view((n, n), (n, n)).into_owned() + &eye;
    let lhs = linalg::vstack(&[&s12, &s22]);
    let rhs = -linalg::vstack(&[&s11, &s21]);
    let qr = lhs.qr();
    let qtb = qr.q().transpose() * rhs;
    let x = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Infeasible("stable subspace is not a graph over [I; X]".into()))?;
    Ok(Some(linalg::symmetrize(&x)))
}

fn one_norm(m: &Mat) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Newton (Hewer) refinement: `X⁺ = Acl(X)ᵀ X⁺ Acl(X) + Q + K(X)ᵀ R̂ K(X)`.
fn newton_polish(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat, mut x: Mat) -> Mat {
    let Ok(mut res) = dare_residual(a, b, q, r_hat, &x) else { return x };
    for _ in 0..MAX_NEWTON_STEPS {
        if res <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
        let Ok((k, acl)) = gain_and_loop(a, b, r_hat, &x) else { break };
        let rhs = q + k.transpose() * r_hat * &k;
        let Ok(next) = linalg::stein_doubling(&acl, &rhs) else { break };
        let Ok(next_res) = dare_residual(a, b, q, r_hat, &next) else { break };
        if !(next_res < res) {
            break;
        }
        x = next;
        res = next_res;
    }
    x
}

/// Riccati difference iteration `X ← Q + AᵀXA − AᵀXB(R̂ + BᵀXB)⁻¹BᵀXA` from `X = Q`.
fn difference_iteration(a: &Mat, b: &Mat, q: &Mat, r_hat: &Mat) -> Result<Mat> {
    let mut x = q.clone();
    for _ in 0..MAX_DIFFERENCE_ITERATIONS {
        let (gain, _) = gain_and_loop(a, b, r_hat, &x)?;
        let next = linalg::symmetrize(&(q + a.transpose() * &x * a - a.transpose() * &x * b * gain));
        let change = (&next - &x).norm();
        x = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-14 * (1.0 + x.norm()) {
            return Ok(x);
        }
    }
    Err(Error::Infeasible("Riccati difference iteration did not converge".into()))
}

/// Outcome of the full-information H∞ test at level `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub gamma: f64,
    /// `λ_min(R + B_uᵀ X B_u)`
    pub h_min_eig: f64,
    /// `λ_min(γ²I − B_dᵀXB_d + B_dᵀXB_u H⁻¹ B_uᵀXB_d)`
    pub delta_min_eig: f64,
    /// `λ_min(X)`; a valid certificate needs `X ⪰ 0`.
    pub x_min_eig: f64,
    pub solution: Option<DareSolution>,
    /// Why the level was rejected, when it was.
    pub reason: Option<String>,
}

impl Feasibility {
    fn rejected(gamma: f64, reason: String) -> Self {
        Self {
            feasible: false,
            gamma,
            h_min_eig: f64::NAN,
            delta_min_eig: f64::NAN,
            x_min_eig: f64::NAN,
            solution: None,
            reason: Some(reason),
        }
    }
}

/// Full-information H∞ feasibility of level `gamma` for
/// `x⁺ = A x + B_u u + B_d w` with cost `xᵀQx + uᵀRu`.
///
/// Feasible when the DARE with `B = [B_u, B_d]`, `R̂ = diag(R, −γ²I)` has a
/// stabilizing solution `X ⪰ 0` with `H ≻ 0` and `Δ ≻ 0`.
pub fn hinf_feasibility(a: &Mat, b_u: &Mat, b_d: &Mat, q: &Mat, r: &Mat, gamma: f64) -> Feasibility {
    hinf_feasibility_with(a, b_u, b_d, q, r, gamma, SolveMode::Certified)
}

pub fn hinf_feasibility_with(
    a: &Mat,
    b_u: &Mat,
    b_d: &Mat,
    q: &Mat,
    r: &Mat,
    gamma: f64,
    mode: SolveMode,
) -> Feasibility {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Feasibility::rejected(gamma, format!("gamma must be positive, got {gamma}"));
    }
    let (n_u, n_d) = (b_u.ncols(), b_d.ncols());
    let b = linalg::hstack(&[b_u, b_d]);
    let r_hat = linalg::block_diag(&[r, &(Mat::identity(n_d, n_d) * (-gamma * gamma))]);
    let sol = match solve_dare_scaled(a, &b, q, &r_hat, FEASIBILITY_DARE_TOL, ResidualScale::Terms, mode) {
        Ok(s) => s,
        Err(e) => return Feasibility::rejected(gamma, e.to_string()),
    };
    let x = &sol.x;
    let h = linalg::symmetrize(&(r + b_u.transpose() * x * b_u));
    let h_min = linalg::min_sym_eig(&h);
    let x_min = linalg::min_sym_eig(x);
    let delta_min = if h_min > 0.0 {
        match linalg::solve(&h, &(b_u.transpose() * x * b_d), "H") {
            Ok(hb) => {
                let delta = Mat::identity(n_d, n_d) * (gamma * gamma) - b_d.transpose() * x * b_d
                    + b_d.transpose() * x * b_u * hb;
                linalg::min_sym_eig(&delta)
            }
            Err(_) => f64::NAN,
        }
    } else {
        f64::NAN
    };
    debug_assert_eq!(h.nrows(), n_u);
    let psd = x_min >= -1e-9 * (1.0 + x.norm());
    let feasible = h_min > 0.0 && delta_min > 0.0 && psd && sol.spectral_radius < 1.0 - STABILITY_MARGIN;
    let reason = (!feasible).then(|| {
        if !(h_min > 0.0) {
            format!("H not positive definite (min eigenvalue {h_min:e})")
        } else if !(delta_min > 0.0) {
            format!("Delta not positive definite (min eigenvalue {delta_min:e})")
        } else {
            format!("X not positive semidefinite (min eigenvalue {x_min:e})")
        }
    });
    Feasibility {
        feasible,
        gamma,
        h_min_eig: h_min,
        delta_min_eig: delta_min,
        x_min_eig: x_min,
        solution: Some(sol),
        reason,
    }
}

/// Pencil eigenvalues closer than this to the unit circle count as lying on it.
const UNIT_CIRCLE_BAND: f64 = 1e-9;

/// Bounded-real test: `‖sys‖∞ < gamma` for Schur `sys`.
///
/// With `R̂ = DᵀD − γ²I ≺ 0` and the cross term `S = CᵀD` removed, the norm is
/// below `gamma` exactly when the symplectic pencil of the DARE
/// `(A − B R̂⁻¹Sᵀ, B, CᵀC − S R̂⁻¹Sᵀ, R̂)` has no eigenvalue on the unit circle.
/// The eigenvalues are read off the Cayley transform, which stays well
/// conditioned when the stabilizing `X` itself blows up (nearly all-pass
/// closed loops at the optimal level). Badly conditioned transforms fall back
/// to solving the DARE.
pub fn bounded_real(sys: &StateSpace, gamma: f64) -> bool {
    let (c, d) = (&sys.c, &sys.d);
    let m = sys.n_inputs();
    let r_hat = d.transpose() * d - Mat::identity(m, m) * (gamma * gamma);
    if linalg::max_sym_eig(&r_hat) >= 0.0 {
        return false;
    }
    if sys.n_states() == 0 {
        return true;
    }
    let Ok(r_inv) = linalg::inverse(&r_hat, "DᵀD − γ²I") else { return false };
    let s = c.transpose() * d;
    let a_bar = &sys.a - &sys.b * &r_inv * s.transpose();
    let q_bar = linalg::symmetrize(&(c.transpose() * c - &s * &r_inv * s.transpose()));
    match cayley(&a_bar, &sys.b, &q_bar, &r_hat) {
        Ok(Some((cond, z))) if cond.is_finite() && cond <= MAX_PENCIL_CONDITION => {
            let one = num_complex::Complex64::new(1.0, 0.0);
            !linalg::eigenvalues(&z).iter().any(|&mu| {
                let modulus = (one + mu).norm() / (one - mu).norm();
                (modulus - 1.0).abs() <= UNIT_CIRCLE_BAND
            })
        }
        Ok(_) => match solve_dare_scaled(&a_bar, &sys.b, &q_bar, &r_hat, FEASIBILITY_DARE_TOL, ResidualScale::Terms, SolveMode::Certified) {
            Ok(sol) => {
                let psd = linalg::min_sym_eig(&sol.x) >= -1e-9 * (1.0 + sol.x.norm());
                let margin = -(r_hat + sys.b.transpose() * &sol.x * &sys.b);
                psd && linalg::min_sym_eig(&margin) > 0.0
            }
            Err(_) => false,
        },
        Err(_) => false,
    }
}

/// Number of grid points seeding the H∞-norm lower bound.
const NORM_GRID: usize = 512;

/// H∞ norm of a Schur system to absolute accuracy `tol`, by bisection on the
/// bounded-real test between a refined frequency-grid lower bound and a
/// doubling upper bound.
pub fn hinf_norm(sys: &StateSpace, tol: f64) -> Result<f64> {
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::Precondition(format!("system is not Schur (spectral radius {rho})")));
    }
    let d_gain = linalg::norm2(&sys.d);
    if sys.n_states() == 0 || sys.n_inputs() == 0 || sys.n_outputs() == 0 {
        return Ok(d_gain);
    }
    let grid = lti::uniform_grid(NORM_GRID);
    let values: Vec<f64> = grid.iter().map(|&w| lti::gain_at(sys, w)).collect::<Result<_>>()?;
    let (_, peak) = linalg::refine_grid_max(
        |w| lti::gain_at(sys, w).unwrap_or(f64::NEG_INFINITY),
        &grid,
        &values,
        3,
        1e-12,
    );
    let mut lo = peak.max(d_gain);
    if lo == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 2.0 * lo;
    let mut escalations = 0;
    while !bounded_real(sys, hi) {
        lo = hi;
        hi *= 2.0;
        escalations += 1;
        if escalations > 60 {
            return Err(Error::SynthesisFailure("no bounded-real upper bracket found".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if bounded_real(sys, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
