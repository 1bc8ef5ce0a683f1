//! Brute-force finite-horizon operators: the stacked maps from input and
//! disturbance sequences to the cost output, the non-causal optimum as a
//! quadratic form, and the regret of a causal controller as a top eigenvalue.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::{self, Plant, PreviewController, Signal};
use crate::noncausal::build_noncausal;

/// Largest horizon accepted by [`build_finite_horizon`].
pub const MAX_HORIZON: usize = 2000;
/// Largest `n_x + n_d` accepted by [`build_finite_horizon`].
pub const MAX_ORDER: usize = 10;
/// Default starting horizon of [`regret_eval`].
pub const DEFAULT_HORIZON: usize = 200;
/// Largest horizon [`regret_eval`] doubles up to.
pub const HORIZON_CAP: usize = 1600;

/// What the operators charge for the state left at the end of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// Nothing: the plain truncated sum over `t < N`.
    None,
    /// The LQR cost-to-go `x(N)ᵀ X x(N)`. With it `dᵀ W_N d` is the exact
    /// infinite-horizon non-causal cost of any `d` supported on `[0, N)`.
    CostToGo,
}

/// Stacked horizon-`N` operators from `x(0) = 0`.
///
/// Inputs are parametrized around the LQR gain, `u = −K_x x + ũ`, which keeps
/// the stacked matrices bounded for unstable `A` and leaves the optimum
/// unchanged. The outputs are pre-weighted (`[Q^{1/2}x; R^{1/2}u]` per step,
/// then `X^{1/2}x(N)` with [`Terminal::CostToGo`]), so the cost of a stacked
/// pair is `‖F ũ + G d‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonOperators {
    pub horizon: usize,
    pub terminal: Terminal,
    pub f: Mat,
    pub g: Mat,
    /// `J_nc^N(d) = dᵀ W d`, with `W = Gᵀ(I − F F⁺)G`.
    pub w: Mat,
    /// The gain `K_x` of the input parametrization.
    pub k: Mat,
}

/// Operators over the plain horizon (no terminal weight).
pub fn build_finite_horizon(plant: &Plant, n: usize) -> Result<FiniteHorizonOperators> {
    build_finite_horizon_with(plant, n, Terminal::None)
}

pub fn build_finite_horizon_with(plant: &Plant, n: usize, terminal: Terminal) -> Result<FiniteHorizonOperators> {
    if n == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    let (n_x, n_u, n_d) = (plant.n_x(), plant.n_u(), plant.n_d());
    if n > MAX_HORIZON || n_x + n_d > MAX_ORDER {
        return Err(Error::Resource(format!(
            "horizon {n} with order {} exceeds the caps N <= {MAX_HORIZON}, n <= {MAX_ORDER}",
            n_x + n_d
        )));
    }
    let nc = build_noncausal(plant)?;
    let k = nc.k_x.clone();
    let n_y = n_x + n_u;
    let n_term = if terminal == Terminal::CostToGo { n_x } else { 0 };
    let rows = n * n_y + n_term;

    // output map of the state: [Q^{1/2}; −R^{1/2}K]
    let c_z = linalg::vstack(&[plant.q_sqrt(), &(-(plant.r_sqrt() * &k))]);
    let x_half = linalg::sym_sqrt(&nc.x);
    // markov[k] = Ã^k, up to k = n − 1
    let mut powers = Vec::with_capacity(n);
    let mut pw = Mat::identity(n_x, n_x);
    for _ in 0..n {
        powers.push(pw.clone());
        pw = &nc.a_tilde * pw;
    }
    let cu: Vec<Mat> = powers.iter().map(|p| &c_z * p * plant.b_u()).collect();
    let cd: Vec<Mat> = powers.iter().map(|p| &c_z * p * plant.b_d()).collect();

    let mut f = Mat::zeros(rows, n * n_u);
    let mut g = Mat::zeros(rows, n * n_d);
    for t in 0..n {
        f.view_mut((t * n_y + n_x, t * n_u), (n_u, n_u)).copy_from(plant.r_sqrt());
        for s in 0..t {
            f.view_mut((t * n_y, s * n_u), (n_y, n_u)).copy_from(&cu[t - 1 - s]);
            g.view_mut((t * n_y, s * n_d), (n_y, n_d)).copy_from(&cd[t - 1 - s]);
        }
    }
    if n_term > 0 {
        let r0 = n * n_y;
        for s in 0..n {
            let p = &powers[n - 1 - s];
            f.view_mut((r0, s * n_u), (n_x, n_u)).copy_from(&(&x_half * p * plant.b_u()));
            g.view_mut((r0, s * n_d), (n_x, n_d)).copy_from(&(&x_half * p * plant.b_d()));
        }
    }

    let q1 = f.clone().qr().q();
    let g_perp = &g - &q1 * (q1.transpose() * &g);
    let w = linalg::symmetrize(&(g_perp.transpose() * &g_perp));
    Ok(FiniteHorizonOperators { horizon: n, terminal, f, g, w, k })
}

impl FiniteHorizonOperators {
    /// `dᵀ W d` for `d` truncated to the horizon.
    pub fn noncausal_cost(&self, d: &Signal) -> f64 {
        let v = stacked(d, self.horizon);
        v.dot(&(&self.w * &v))
    }

    /// Stacked map from `d(0..N)` to the cost output of `ctrl`, including the
    /// exact tail beyond the horizon when the terminal weight is the cost-to-go.
    pub fn controller_operator(&self, plant: &Plant, ctrl: &PreviewController) -> Result<Mat> {
        closed_loop_operator(plant, ctrl, self.horizon, self.terminal)
    }

    /// Regret over disturbances arriving once the preview buffer of `ctrl` has
    /// been filled from rest, `d` supported on `[p, N)`; the convention under
    /// which preview certificates are stated.
    pub fn regret(&self, plant: &Plant, ctrl: &PreviewController) -> Result<f64> {
        self.regret_from(plant, ctrl, ctrl.p())
    }

    /// `λ_max(T_Kᵀ T_K − W_N)` restricted to `d` supported on `[start, N)`.
    pub fn regret_from(&self, plant: &Plant, ctrl: &PreviewController, start: usize) -> Result<f64> {
        if start >= self.horizon {
            return Err(Error::Precondition(format!("support start {start} is past the horizon {}", self.horizon)));
        }
        let n_d = plant.n_d();
        let k = (self.horizon - start) * n_d;
        let t_k = self.controller_operator(plant, ctrl)?;
        let t_k = t_k.columns(start * n_d, k);
        let w = self.w.view((start * n_d, start * n_d), (k, k));
        let m = linalg::symmetrize(&(t_k.transpose() * t_k - w));
        Ok(linalg::max_sym_eig(&m))
    }
}

fn stacked(d: &Signal, n: usize) -> nalgebra::DVector<f64> {
    let n_d = d.n_d();
    let mut v = nalgebra::DVector::zeros(n * n_d);
    for t in 0..n.min(d.len()) {
        v.rows_mut(t * n_d, n_d).copy_from(&d.samples()[t]);
    }
    v
}

/// Columns are the cost-output responses to unit disturbances `e_c` at times `j < N`.
fn closed_loop_operator(plant: &Plant, ctrl: &PreviewController, n: usize, terminal: Terminal) -> Result<Mat> {
    let sys = lti::closed_loop(plant, ctrl)?;
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::Precondition(format!("controller is not stabilizing (spectral radius {rho})")));
    }
    let (n_d, p) = (plant.n_d(), ctrl.p());
    let n_y = sys.n_outputs();
    let n_z = sys.n_states();
    let tail = match terminal {
        Terminal::CostToGo => Some(linalg::sym_sqrt(&sys.observability_gramian()?)),
        Terminal::None => None,
    };
    let n_term = tail.as_ref().map_or(0, |_| n_z);
    let mut t_k = Mat::zeros(n * n_y + n_term, n * n_d);

    for c in 0..n_d {
        // unit disturbance at time p enters as the first input from a zero state;
        // a unit disturbance at j ≥ p is the same response delayed by j − p
        let mut z = nalgebra::DVector::zeros(n_z);
        let mut ys = Vec::with_capacity(n + p);
        let mut zs = Vec::with_capacity(n + p + 1);
        for s in 0..n + p {
            zs.push(z.clone());
            let mut y = &sys.c * &z;
            if s == 0 {
                y += sys.d.column(c);
                z = &sys.a * &z + sys.b.column(c);
            } else {
                z = &sys.a * &z;
            }
            ys.push(y);
        }
        zs.push(z);
        for j in p.min(n)..n {
            let col = j * n_d + c;
            for t in j - p..n {
                t_k.view_mut((t * n_y, col), (n_y, 1)).copy_from(&ys[t + p - j]);
            }
            if let Some(root) = &tail {
                t_k.view_mut((n * n_y, col), (n_z, 1)).copy_from(&(root * &zs[n + p - j]));
            }
        }
        // disturbances already inside the preview window at t = 0 start in the buffer
        for j in 0..p.min(n) {
            let col = j * n_d + c;
            let mut z = nalgebra::DVector::zeros(n_z);
            z[plant.n_x() + ctrl.memory_dim() + j * n_d + c] = 1.0;
            for t in 0..n {
                let y = &sys.c * &z;
                t_k.view_mut((t * n_y, col), (n_y, 1)).copy_from(&y);
                z = &sys.a * &z;
            }
            if let Some(root) = &tail {
                t_k.view_mut((n * n_y, col), (n_z, 1)).copy_from(&(root * &z));
            }
        }
    }
    Ok(t_k)
}

/// Regret estimate with the horizon it settled at and the change from the previous horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretEstimate {
    /// `λ_max(T_KᵀT_K − W_N)`, an estimate of the squared regret level.
    pub value: f64,
    pub horizon: usize,
    /// Relative change from the horizon before; infinite when only one horizon was evaluated.
    pub delta: f64,
}

/// Regret of `ctrl` over `n` disturbance samples following its preview fill,
/// with the exact cost-to-go tail.
pub fn regret_at_horizon(plant: &Plant, ctrl: &PreviewController, n: usize) -> Result<f64> {
    build_finite_horizon_with(plant, n + ctrl.p(), Terminal::CostToGo)?.regret(plant, ctrl)
}

/// Regret of `ctrl`, doubling the horizon from `n` until the relative change
/// drops below `1e-4` or the horizon reaches [`HORIZON_CAP`].
pub fn regret_eval(plant: &Plant, ctrl: &PreviewController, n: usize) -> Result<RegretEstimate> {
    let mut horizon = n.max(1);
    let mut value = regret_at_horizon(plant, ctrl, horizon)?;
    let mut delta = f64::INFINITY;
    while horizon * 2 <= HORIZON_CAP.max(n) {
        let next = regret_at_horizon(plant, ctrl, horizon * 2)?;
        delta = (next - value).abs() / next.abs().max(f64::MIN_POSITIVE);
        horizon *= 2;
        value = next;
        if delta < 1e-4 {
            break;
        }
    }
    Ok(RegretEstimate { value, horizon, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noncausal::noncausal_cost;
    use approx::assert_relative_eq;

    #[test]
    fn one_step_truncation_sees_nothing() {
        let plant = Plant::reference_example();
        let ops = build_finite_horizon(&plant, 1).unwrap();
        assert_eq!(ops.w.shape(), (1, 1));
        assert_eq!(ops.w[(0, 0)], 0.0);
    }

    #[test]
    fn quadratic_form_matches_noncausal_cost() {
        let plant = Plant::reference_example();
        let ops = build_finite_horizon_with(&plant, 200, Terminal::CostToGo).unwrap();
        let nc = build_noncausal(&plant).unwrap();
        let d = Signal::impulse(1, 0, 0);
        assert_relative_eq!(ops.noncausal_cost(&d), noncausal_cost(&plant, &nc, &d).unwrap(), max_relative = 1e-6);
        let d = Signal::from_flat(1, &[0.4, -1.0, 0.0, 2.5, 0.3]).delayed(20);
        assert_relative_eq!(ops.noncausal_cost(&d), noncausal_cost(&plant, &nc, &d).unwrap(), max_relative = 1e-8);
    }

    #[test]
    fn memoryless_scalar_plant_matches_noncausal_cost() {
        let plant = Plant::new(
            Mat::from_element(1, 1, 1e-9),
            Mat::from_element(1, 1, 1.5),
            Mat::from_element(1, 1, 0.7),
            Mat::from_element(1, 1, 2.0),
            Mat::from_element(1, 1, 0.4),
        )
        .unwrap();
        let ops = build_finite_horizon(&plant, 50).unwrap();
        let nc = build_noncausal(&plant).unwrap();
        let d = Signal::impulse(1, 0, 0);
        // x(1) = b_d + b_u u(0) is charged q, u(0) is charged r: optimum q b_d² r / (r + q b_u²)
        let closed = 2.0 * 1.5 * 1.5 * 0.4 / (0.4 + 2.0 * 0.49);
        assert_relative_eq!(ops.noncausal_cost(&d), closed, max_relative = 1e-8);
        assert_relative_eq!(ops.noncausal_cost(&d), noncausal_cost(&plant, &nc, &d).unwrap(), max_relative = 1e-8);
    }

    #[test]
    fn w_grows_with_horizon() {
        let plant = Plant::reference_example();
        let short = build_finite_horizon(&plant, 20).unwrap();
        let long = build_finite_horizon(&plant, 40).unwrap();
        let lead = long.w.view((0, 0), (20, 20)).into_owned();
        assert!(linalg::min_sym_eig(&linalg::symmetrize(&(lead - &short.w))) >= -1e-9);
    }

    #[test]
    fn w_is_psd() {
        let plant = Plant::reference_example();
        let ops = build_finite_horizon_with(&plant, 200, Terminal::CostToGo).unwrap();
        assert!(linalg::min_sym_eig(&ops.w) >= -1e-9);
    }

    #[test]
    fn controller_operator_reproduces_simulation() {
        let plant = Plant::reference_example();
        let ctrl = crate::preview::h2_preview(&plant, 3).unwrap();
        let ops = build_finite_horizon_with(&plant, 60, Terminal::CostToGo).unwrap();
        let t_k = ops.controller_operator(&plant, &ctrl).unwrap();
        let d = Signal::from_flat(1, &[1.0, -0.5, 0.25, 0.0, 0.7, -1.1]);
        let v = stacked(&d, 60);
        let traj = lti::simulate(&plant, &ctrl, &d, 1e-13).unwrap();
        assert_relative_eq!((&t_k * v).norm_squared(), lti::cost(&traj) + traj.truncation_bound, max_relative = 1e-9);
    }

    #[test]
    fn long_preview_has_no_regret_on_short_horizon() {
        // preview covering the whole horizon reproduces the non-causal law there
        let plant = Plant::reference_example();
        let n = 30;
        let ctrl = crate::preview::h2_preview(&plant, n).unwrap();
        let ops = build_finite_horizon_with(&plant, n, Terminal::CostToGo).unwrap();
        let r = ops.regret_from(&plant, &ctrl, 0).unwrap();
        assert!(r.abs() <= 1e-8, "{r}");
    }

    #[test]
    fn caps_are_enforced() {
        let plant = Plant::reference_example();
        assert!(matches!(build_finite_horizon(&plant, MAX_HORIZON + 1), Err(Error::Resource(_))));
    }
}
