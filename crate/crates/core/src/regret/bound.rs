//! Explicit bound on the extra cost of H2 preview over the non-causal law,
//! decaying geometrically in the preview length.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::Plant;
use crate::noncausal::build_noncausal;

/// Closest `α` may get to 1 before the bound is declared unavailable.
pub const ALPHA_CEILING: f64 = 1.0 - 1e-6;
/// Consecutive powers checked past `T_cut`.
pub const CHECK_WINDOW: usize = 51;
const MAX_POWER: usize = 200_000;

/// `0 ≤ J(K_{2,p}, d) − J(K_nc, d) ≤ bound(p)·‖d‖²` for `p ≥ t_cut`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapBound {
    pub a: f64,
    pub b: f64,
    /// `Σ_k ‖Ãᵏ‖`, summed until the geometric tail is below rounding and then closed off.
    pub c: f64,
    pub alpha: f64,
    /// `‖Ãʲ‖ ≤ αʲ` holds for every `j ≥ t_cut`.
    pub t_cut: usize,
    pub spectral_radius: f64,
}

impl GapBound {
    /// `(4a + 2bc)·α^{p+1}/(1 − α)`.
    pub fn bound(&self, p: usize) -> f64 {
        (4.0 * self.a + 2.0 * self.b * self.c) * self.alpha.powi(p as i32 + 1) / (1.0 - self.alpha)
    }

    pub fn is_valid_for(&self, p: usize) -> bool {
        p >= self.t_cut
    }
}

/// Gap bound for the H2 preview controllers of `plant`.
///
/// The constants do not depend on the preview length; evaluate [`GapBound::bound`]
/// at the lengths of interest.
pub fn h2_gap_bound(plant: &Plant, alpha: Option<f64>) -> Result<GapBound> {
    let nc = build_noncausal(plant)?;
    let bd = linalg::norm2(plant.b_d());
    let x = linalg::norm2(&nc.x);
    let a = bd * x * bd;
    let b = bd * x * linalg::norm2(&nc.k_v) * linalg::norm2(&nc.h) * x * bd;
    gap_bound_from(&nc.a_tilde, a, b, alpha)
}

/// Certifies `α` and `T_cut` for `a_tilde` and assembles the bound from given `a`, `b`.
pub fn gap_bound_from(a_tilde: &Mat, a: f64, b: f64, alpha: Option<f64>) -> Result<GapBound> {
    let rho = linalg::spectral_radius(a_tilde);
    if !(rho < 1.0) {
        return Err(Error::Precondition(format!("closed loop is not Schur (spectral radius {rho})")));
    }
    let norms = PowerNorms::new(a_tilde);
    let (alpha, t_cut, mut norms) = match alpha {
        Some(al) => {
            if !(al > rho && al < 1.0) {
                return Err(Error::Precondition(format!("alpha = {al} must lie in ({rho}, 1)")));
            }
            let mut norms = norms;
            let t = certify(&mut norms, al)
                .ok_or_else(|| Error::BoundUnavailable(format!("‖Ãʲ‖ ≤ αʲ could not be certified for alpha = {al}")))?;
            (al, t, norms)
        }
        None => {
            let mut al = 0.5 * (1.0 + rho);
            let mut norms = norms;
            loop {
                if let Some(t) = certify(&mut norms, al) {
                    break (al, t, norms);
                }
                al = 0.5 * (1.0 + al);
                if al > ALPHA_CEILING {
                    return Err(Error::BoundUnavailable(format!(
                        "no alpha below {ALPHA_CEILING} satisfies ‖Ãʲ‖ ≤ αʲ (spectral radius {rho})"
                    )));
                }
            }
        }
    };
    let c = power_sum(&mut norms, alpha, t_cut);
    Ok(GapBound { a, b, c, alpha, t_cut, spectral_radius: rho })
}

/// `‖Ãʲ‖` computed on demand.
struct PowerNorms {
    a: Mat,
    power: Mat,
    norms: Vec<f64>,
}

impl PowerNorms {
    fn new(a: &Mat) -> Self {
        let n = a.nrows();
        Self { a: a.clone(), power: Mat::identity(n, n), norms: Vec::new() }
    }

    fn get(&mut self, j: usize) -> f64 {
        while self.norms.len() <= j {
            self.norms.push(linalg::norm2(&self.power));
            self.power = &self.a * &self.power;
        }
        self.norms[j]
    }
}

fn below(norms: &mut PowerNorms, alpha: f64, j: usize) -> bool {
    let n = norms.get(j);
    n == 0.0 || n.ln() <= j as f64 * alpha.ln()
}

/// Smallest `T` with `‖Ãʲ‖ ≤ αʲ` on `[T, T + w)`, where `w ≥ m` and `‖Ãᵐ‖ ≤ αᵐ`.
/// Submultiplicativity then extends the inequality to every `j ≥ T`.
fn certify(norms: &mut PowerNorms, alpha: f64) -> Option<usize> {
    let m = (1..MAX_POWER).find(|&m| below(norms, alpha, m))?;
    let w = m.max(CHECK_WINDOW);
    let mut t = 0;
    let mut run = 0;
    let mut j = 0;
    while j < MAX_POWER {
        if below(norms, alpha, j) {
            run += 1;
            if run == w {
                return Some(t);
            }
        } else {
            run = 0;
            t = j + 1;
        }
        j += 1;
    }
    None
}

/// `Σ_{k<K} ‖Ãᵏ‖ + α^K/(1 − α)` with `K ≥ t_cut` large enough that the closed-off tail is negligible.
fn power_sum(norms: &mut PowerNorms, alpha: f64, t_cut: usize) -> f64 {
    let mut sum = 0.0;
    let mut k = 0;
    loop {
        let tail = alpha.powi(k as i32) / (1.0 - alpha);
        if k >= t_cut && (tail <= 1e-16 * sum || k >= MAX_POWER) {
            return sum + tail;
        }
        sum += norms.get(k);
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn deadbeat_closed_loop() {
        let z = Mat::zeros(2, 2);
        for alpha in [0.1, 0.5, 0.9] {
            let g = gap_bound_from(&z, 1.0, 2.0, Some(alpha)).unwrap();
            assert_eq!(g.t_cut, 0);
            assert_relative_eq!(g.c, 1.0, epsilon = 1e-12);
            assert_relative_eq!(g.bound(3), 8.0 * alpha.powi(4) / (1.0 - alpha), max_relative = 1e-12);
        }
    }

    #[test]
    fn ratio_is_alpha() {
        let g = h2_gap_bound(&Plant::reference_example(), None).unwrap();
        for p in 0..20 {
            assert_relative_eq!(g.bound(p + 1) / g.bound(p), g.alpha, max_relative = 1e-12);
        }
    }

    #[test]
    fn certificate_holds_far_out() {
        let plant = Plant::reference_example();
        let g = h2_gap_bound(&plant, None).unwrap();
        assert!(g.alpha > g.spectral_radius && g.alpha < 1.0);
        let nc = build_noncausal(&plant).unwrap();
        let mut pw = Mat::identity(2, 2);
        for j in 0..2000 {
            if j >= g.t_cut {
                assert!(linalg::norm2(&pw) <= g.alpha.powi(j as i32) * (1.0 + 1e-12));
            }
            pw = &nc.a_tilde * pw;
        }
    }

    #[test]
    fn non_normal_needs_a_cutoff() {
        // ‖Ãʲ‖ grows before it decays
        let a = Mat::from_row_slice(2, 2, &[0.5, 40.0, 0.0, 0.5]);
        let g = gap_bound_from(&a, 1.0, 1.0, Some(0.75)).unwrap();
        assert!(g.t_cut > 0);
        let explicit: f64 = (0..5000)
            .scan(Mat::identity(2, 2), |pw, _| {
                let n = linalg::norm2(pw);
                *pw = &a * &*pw;
                Some(n)
            })
            .sum();
        assert!(g.c >= explicit * (1.0 - 1e-12));
        assert!(g.c <= explicit * (1.0 + 1e-6));
    }

    #[test]
    fn alpha_outside_range_is_rejected() {
        let plant = Plant::reference_example();
        assert!(matches!(h2_gap_bound(&plant, Some(1.5)), Err(Error::Precondition(_))));
        assert!(matches!(h2_gap_bound(&plant, Some(1e-9)), Err(Error::Precondition(_))));
    }
}
