//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_sym_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_sym_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Symmetric square root; eigenvalues below 1e-12 in magnitude (or negative) clamp to zero.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let n = m.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig
        .eigenvalues
        .map(|l| if l < 1e-12 { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    v * Mat::from_diagonal(&roots) * v.transpose()
}

/// Largest eigenvalue modulus. Zero for an empty matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Induced 2-norm.
pub fn norm2(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn cnorm2(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::DegeneratePencil(format!("{what} is singular")))
}

/// Solves `m * x = rhs` by LU.
pub fn solve(m: &Mat, rhs: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::DegeneratePencil(format!("{what} is singular")))
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Block diagonal of real matrices.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn vstack_c(blocks: &[&CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Solves the Stein equation `X = Aᵀ X A + Q` for Schur `A` by Smith doubling.
pub fn solve_stein(a: &Mat, q: &Mat) -> Result<Mat> {
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    stein_doubling(a, q)
}

/// Smith doubling without the up-front spectral check; fails when the powers of `A` do not die out.
pub(crate) fn stein_doubling(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let mut x = symmetrize(q);
    let mut ak = a.clone();
    for _ in 0..64 {
        let step = ak.transpose() * &x * &ak;
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        let done = step.norm() <= 1e-17 * (1.0 + x.norm());
        x += step;
        if done {
            return Ok(symmetrize(&x));
        }
        ak = &ak * &ak;
    }
    Err(Error::Unstable { spectral_radius: spectral_radius(a) })
}

pub fn stack_vectors(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut i = 0;
    for p in parts {
        out.rows_mut(i, p.len()).copy_from(*p);
        i += p.len();
    }
    out
}

/// Golden-section maximisation of a unimodal function on `[lo, hi]` until the bracket is narrower than `tol`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
            if f2 > best.1 {
                best = (x2, f2);
            }
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
            if f1 > best.1 {
                best = (x1, f1);
            }
        }
    }
    best
}

/// Grid maximisation followed by golden-section refinement around the `top` largest local maxima.
///
/// Returns `(argmax, max)`. The grid must be sorted ascending.
pub fn refine_grid_max<F: FnMut(f64) -> f64>(mut f: F, grid: &[f64], values: &[f64], top: usize, tol: f64) -> (f64, f64) {
    let n = grid.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] >= values[i - 1];
            let right = i + 1 == n || values[i] >= values[i + 1];
            left && right
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    peaks.truncate(top);
    let mut best = peaks
        .first()
        .map_or((0.0, f64::NEG_INFINITY), |&i| (grid[i], values[i]));
    for &i in &peaks {
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(n - 1)];
        if hi - lo <= tol {
            continue;
        }
        let cand = golden_max(&mut f, lo, hi, tol);
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}
