//! Stationary regret of a preview controller in the frequency domain,
//! `max_ω λ_max(T_K(ω)*T_K(ω) − W(ω))`.

use nalgebra::linalg::Hessenberg;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};
use crate::lti::{uniform_grid, Plant, PreviewController};
use crate::noncausal::{build_noncausal, transfer_retry, NoncausalController};

use super::spectral::RegretSymbol;

/// Golden-section tolerance of the refinement around the largest grid peaks.
const REFINE_TOL: f64 = 1e-10;
const REFINE_PEAKS: usize = 3;

/// Evaluates `T_K(ω)` for one controller in `O(n²)` per frequency by keeping
/// its memory in Hessenberg form.
struct ControllerResponse {
    z_cl: Mat,
    b_d: Mat,
    b_u: Mat,
    k_x: Mat,
    q_sqrt: Mat,
    r_sqrt: Mat,
    taps: Vec<Mat>,
    /// `K Q`, `H`, `Qᵀ B` of the memory `A = Q H Qᵀ`.
    mem: Option<(Mat, Mat, Mat)>,
}

impl ControllerResponse {
    fn new(plant: &Plant, ctrl: &PreviewController) -> Result<Self> {
        ctrl.check_against(plant)?;
        let z_cl = plant.a() - plant.b_u() * ctrl.k_x();
        let mut rho = linalg::spectral_radius(&z_cl);
        let mem = match ctrl.memory() {
            Some(m) if m.dim() > 0 => {
                rho = rho.max(linalg::spectral_radius(&m.a));
                let (q, h) = Hessenberg::new(m.a.clone()).unpack();
                Some((&m.k * &q, h, q.transpose() * &m.b))
            }
            _ => None,
        };
        if rho >= 1.0 {
            return Err(Error::Unstable { spectral_radius: rho });
        }
        Ok(Self {
            z_cl,
            b_d: plant.b_d().clone(),
            b_u: plant.b_u().clone(),
            k_x: ctrl.k_x().clone(),
            q_sqrt: plant.q_sqrt().clone(),
            r_sqrt: plant.r_sqrt().clone(),
            taps: ctrl.taps().to_vec(),
            mem,
        })
    }

    fn at(&self, omega: f64) -> Result<CMat> {
        let z = Complex64::from_polar(1.0, omega);
        let c = linalg::to_complex;
        // feedforward u = F d with F = −K (zI − A_c)⁻¹ B_c − Σ_j M_j z^j
        let mut f = CMat::zeros(self.b_u.ncols(), self.b_d.ncols());
        let mut zj = Complex64::new(1.0, 0.0);
        for tap in &self.taps {
            f -= c(tap) * zj;
            zj *= z;
        }
        if let Some((kq, h, qb)) = &self.mem {
            let y = hessenberg_resolvent(h, z, &c(qb)).ok_or(Error::SingularResolvent { omega })?;
            f -= c(kq) * y;
        }
        let n = self.z_cl.nrows();
        let mut lhs = -c(&self.z_cl);
        for i in 0..n {
            lhs[(i, i)] += z;
        }
        let x = lhs
            .lu()
            .solve(&(c(&self.b_d) + c(&self.b_u) * &f))
            .ok_or(Error::SingularResolvent { omega })?;
        let u = -(c(&self.k_x) * &x) + f;
        Ok(linalg::vstack_c(&[&(c(&self.q_sqrt) * x), &(c(&self.r_sqrt) * u)]))
    }
}

/// `(zI − H)⁻¹ R` for upper Hessenberg `H`, by elimination with adjacent-row pivoting.
fn hessenberg_resolvent(h: &Mat, z: Complex64, rhs: &CMat) -> Option<CMat> {
    let n = h.nrows();
    let mut m = CMat::from_fn(n, n, |i, j| {
        let v = Complex64::new(-h[(i, j)], 0.0);
        if i == j { v + z } else { v }
    });
    let mut r = rhs.clone();
    for i in 0..n.saturating_sub(1) {
        if m[(i + 1, i)].norm() > m[(i, i)].norm() {
            m.swap_rows(i, i + 1);
            r.swap_rows(i, i + 1);
        }
        let piv = m[(i, i)];
        if piv.norm() == 0.0 {
            return None;
        }
        let l = m[(i + 1, i)] / piv;
        if l.norm() != 0.0 {
            for j in i..n {
                let v = m[(i, j)];
                m[(i + 1, j)] -= l * v;
            }
            for j in 0..r.ncols() {
                let v = r[(i, j)];
                r[(i + 1, j)] -= l * v;
            }
        }
    }
    for i in (0..n).rev() {
        let piv = m[(i, i)];
        if piv.norm() == 0.0 {
            return None;
        }
        for j in 0..r.ncols() {
            let mut s = r[(i, j)];
            for k in i + 1..n {
                s -= m[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / piv;
        }
    }
    Some(r)
}

fn excess(t: &CMat, w: &CMat) -> f64 {
    let m = t.adjoint() * t - w;
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    m.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Squared regret level of `ctrl` against the non-causal baseline, on the grid
/// of `symbol` and refined around its largest peaks.
pub fn frequency_regret_on(plant: &Plant, nc: &NoncausalController, symbol: &RegretSymbol, ctrl: &PreviewController) -> Result<f64> {
    let resp = ControllerResponse::new(plant, ctrl)?;
    let values: Vec<f64> = symbol
        .omega
        .iter()
        .zip(&symbol.w)
        .map(|(&om, w)| resp.at(om).map(|t| excess(&t, w)))
        .collect::<Result<_>>()?;
    let (_, best) = linalg::refine_grid_max(
        |om| match (resp.at(om), transfer_retry(plant, nc, om)) {
            (Ok(t), Ok(t_nc)) => excess(&t, &(t_nc.adjoint() * &t_nc)),
            _ => f64::NEG_INFINITY,
        },
        &symbol.omega,
        &values,
        REFINE_PEAKS,
        REFINE_TOL,
    );
    Ok(best)
}

/// [`frequency_regret_on`] with its own uniform grid of `grid_size` points.
pub fn frequency_regret(plant: &Plant, ctrl: &PreviewController, grid_size: usize) -> Result<f64> {
    if grid_size < 3 {
        return Err(Error::Precondition("the frequency grid needs at least 3 points".into()));
    }
    let nc = build_noncausal(plant)?;
    let symbol = RegretSymbol::of_plant(plant, grid_size)?;
    debug_assert_eq!(symbol.omega, uniform_grid(grid_size));
    frequency_regret_on(plant, &nc, &symbol, ctrl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{closed_loop, freq_response, ControllerMemory};
    use crate::preview::h2_preview;
    use approx::assert_relative_eq;

    #[test]
    fn hessenberg_solve_matches_dense() {
        let h = Mat::from_row_slice(3, 3, &[0.2, 0.5, -0.1, 0.4, 0.1, 0.3, 0.0, -0.6, 0.05]);
        let rhs = CMat::from_fn(3, 2, |i, j| Complex64::new(i as f64 + 1.0, j as f64 - 0.5));
        let z = Complex64::from_polar(1.0, 0.7);
        let got = hessenberg_resolvent(&h, z, &rhs).unwrap();
        let dense = (CMat::identity(3, 3) * z - linalg::to_complex(&h)).lu().solve(&rhs).unwrap();
        assert_relative_eq!((got - dense).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn response_matches_the_closed_loop_realization() {
        let plant = Plant::reference_example();
        let base = h2_preview(&plant, 2).unwrap();
        let mem = ControllerMemory {
            a: Mat::from_row_slice(2, 2, &[0.3, -0.2, 1.0, 0.0]),
            b: Mat::from_column_slice(2, 1, &[1.0, 0.0]),
            k: Mat::from_row_slice(1, 2, &[0.05, -0.02]),
        };
        let ctrl = PreviewController::with_memory(base.k_x().clone(), base.taps().to_vec(), Some(mem)).unwrap();
        let resp = ControllerResponse::new(&plant, &ctrl).unwrap();
        let grid = [0.0, 0.4, 1.3, 2.9];
        let dense = freq_response(&closed_loop(&plant, &ctrl).unwrap(), &grid).unwrap();
        for (om, t) in grid.iter().zip(&dense) {
            // the realization is driven by d(t+p): same Gram matrix, different phase
            let ours = resp.at(*om).unwrap();
            assert_relative_eq!((ours.adjoint() * &ours - t.adjoint() * t).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn h2_regret_is_positive_and_shrinks() {
        let plant = Plant::reference_example();
        let vals: Vec<f64> = (0..5).map(|p| frequency_regret(&plant, &h2_preview(&plant, p).unwrap(), 1025).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0] && w[1] > 0.0, "{vals:?}");
        }
    }
}
