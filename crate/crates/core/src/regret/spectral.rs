//! Canonical spectral factorization `γ²I + W(ω) = Δ(ω)*Δ(ω)` with a causal,
//! causally invertible FIR factor `Δ(z) = Σ_k Δ_k z^{-k}`.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};
use crate::lti::{uniform_grid, Plant};
use crate::noncausal::{build_noncausal, noncausal_response};

pub const DEFAULT_FIR_ORDER: usize = 64;
pub const MAX_FIR_ORDER: usize = 512;
pub const DEFAULT_FIT_TOL: f64 = 1e-8;
pub const MAX_WILSON_ITERATIONS: usize = 200;
const WILSON_TOL: f64 = 1e-14;

/// FIR factor of `Φ_γ = γ²I + W` and the truncated taps of its causal inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFactor {
    pub gamma: f64,
    /// `Δ_0 … Δ_L`; `Δ_0` is upper triangular with positive diagonal.
    pub coeffs: Vec<Mat>,
    /// `Γ_0 … Γ_L` with `Γ(z)Δ(z) = I` up to the truncation.
    pub inv_coeffs: Vec<Mat>,
    /// Largest relative residual `‖Δ*Δ − Φ_γ‖ / ‖Φ_γ‖` over the grid.
    pub fit_error: f64,
    /// `Σ_{m=L+1}^{8L} ‖Γ_m‖`: what the inverse loses by truncation.
    pub tail: f64,
    pub iterations: usize,
}

impl SpectralFactor {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// The noncausal symbol `W(ω)` sampled on a uniform grid of `[0, π]`.
#[derive(Debug, Clone)]
pub struct RegretSymbol {
    pub omega: Vec<f64>,
    pub w: Vec<CMat>,
}

impl RegretSymbol {
    pub fn of_plant(plant: &Plant, grid_size: usize) -> Result<Self> {
        if grid_size < 3 {
            return Err(Error::Precondition("the factorization grid needs at least 3 points".into()));
        }
        let nc = build_noncausal(plant)?;
        let omega = uniform_grid(grid_size);
        let resp = noncausal_response(plant, &nc, &omega)?;
        Ok(Self { omega, w: resp.w })
    }

    /// `W(ω)` given directly on a uniform `[0, π]` grid.
    pub fn from_samples(w: Vec<CMat>) -> Result<Self> {
        if w.len() < 3 {
            return Err(Error::Precondition("the factorization grid needs at least 3 points".into()));
        }
        let n = w[0].nrows();
        if w.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::Dimension("symbol samples differ in shape".into()));
        }
        Ok(Self { omega: uniform_grid(w.len()), w })
    }

    pub fn dim(&self) -> usize {
        self.w[0].nrows()
    }
}

pub fn spectral_factorize(plant: &Plant, gamma: f64, order: usize, grid_size: usize) -> Result<SpectralFactor> {
    let symbol = RegretSymbol::of_plant(plant, grid_size)?;
    factorize_symbol(&symbol, gamma, order, DEFAULT_FIT_TOL)
}

/// Wilson's iteration on the whole circle followed by FIR truncation at `order`.
pub fn factorize_symbol(symbol: &RegretSymbol, gamma: f64, order: usize, fit_tol: f64) -> Result<SpectralFactor> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Precondition(format!("the level must be positive, got {gamma}")));
    }
    if order == 0 {
        return Err(Error::Precondition("the FIR order must be at least 1".into()));
    }
    let n = symbol.dim();
    let g = symbol.w.len();
    let m = 2 * (g - 1);
    let shift = Complex64::new(gamma * gamma, 0.0);
    let half: Vec<CMat> = symbol
        .w
        .iter()
        .map(|w| {
            let mut phi = w.clone();
            for i in 0..n {
                phi[(i, i)] += shift;
            }
            hermitian_part(&phi)
        })
        .collect();
    // Wilson works with S = Φᵀ = ψψ*, so that Δ = ψᵀ satisfies Δ*Δ = Φ
    let s: Vec<CMat> = (0..m)
        .map(|k| if k < g { half[k].transpose() } else { half[m - k].map(|z| z.conj()).transpose() })
        .collect();

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);

    let mean = s.iter().fold(CMat::zeros(n, n), |acc, x| acc + x) / Complex64::new(m as f64, 0.0);
    let mean_re = linalg::symmetrize(&mean.map(|z| z.re));
    let chol = Cholesky::new(mean_re).ok_or_else(|| Error::Factorization("mean spectrum is not positive definite".into()))?;
    let psi0 = linalg::to_complex(&chol.l());
    let mut psi: Vec<CMat> = vec![psi0; m];

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_WILSON_ITERATIONS {
        iterations = it + 1;
        let mut gs = Vec::with_capacity(m);
        let mut resid: f64 = 0.0;
        for k in 0..m {
            let pinv = psi[k]
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Factorization(format!("singular factor at iteration {it}")))?;
            let inner = &pinv * &s[k] * pinv.adjoint();
            let dev = &inner - CMat::identity(n, n);
            resid = resid.max(linalg::cnorm2(&dev));
            gs.push(inner + CMat::identity(n, n));
        }
        trace.push(resid);
        if resid <= WILSON_TOL {
            converged = true;
            break;
        }
        let plus = causal_part(&gs, n, fwd.as_ref(), inv.as_ref());
        for k in 0..m {
            psi[k] = &psi[k] * &plus[k];
        }
    }
    if !converged {
        let tail: Vec<String> = trace.iter().rev().take(5).rev().map(|r| format!("{r:.3e}")).collect();
        return Err(Error::Factorization(format!(
            "Wilson iteration did not converge in {MAX_WILSON_ITERATIONS} iterations; last residuals [{}]",
            tail.join(", ")
        )));
    }

    let a_coeffs = coefficients(&psi, n, inv.as_ref());
    let coeffs: Vec<Mat> = a_coeffs.iter().take(order + 1).map(|a| a.map(|z| z.re).transpose()).collect();
    let fit_error = fit_error(&coeffs, &half, &symbol.omega);
    let long = inverse_taps(&coeffs, 8 * order)?;
    let tail: f64 = long[order + 1..].iter().map(linalg::norm2).sum();
    if !(fit_error <= fit_tol) || !(tail <= fit_tol) {
        return Err(Error::OrderTooSmall { order, fit_error, tail });
    }
    Ok(SpectralFactor {
        gamma,
        coeffs,
        inv_coeffs: long[..=order].to_vec(),
        fit_error,
        tail,
        iterations,
    })
}

/// Doubles the FIR order from `order` up to [`MAX_FIR_ORDER`] until the fit is accepted.
pub fn factorize_escalating(symbol: &RegretSymbol, gamma: f64, order: usize, fit_tol: f64) -> Result<SpectralFactor> {
    let mut order = order.max(1);
    loop {
        match factorize_symbol(symbol, gamma, order, fit_tol) {
            Err(Error::OrderTooSmall { .. }) if order * 2 <= MAX_FIR_ORDER => order *= 2,
            other => return other,
        }
    }
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Fourier coefficients `c_k` of samples `f(ω_j) = Σ_k c_k e^{-ikω_j}`, entry by entry.
fn coefficients(samples: &[CMat], n: usize, inv: &dyn Fft<f64>) -> Vec<CMat> {
    let m = samples.len();
    let mut out = vec![CMat::zeros(n, n); m];
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let scale = 1.0 / m as f64;
    for i in 0..n {
        for j in 0..n {
            for (b, s) in buf.iter_mut().zip(samples) {
                *b = s[(i, j)];
            }
            inv.process(&mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                o[(i, j)] = b * scale;
            }
        }
    }
    out
}

fn samples_of(coeffs: &[CMat], n: usize, fwd: &dyn Fft<f64>) -> Vec<CMat> {
    let m = coeffs.len();
    let mut out = vec![CMat::zeros(n, n); m];
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        for j in 0..n {
            for (b, c) in buf.iter_mut().zip(coeffs) {
                *b = c[(i, j)];
            }
            fwd.process(&mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                o[(i, j)] = *b;
            }
        }
    }
    out
}

/// Causal projection: positive lags kept, lag 0 reduced to its lower triangle with half diagonal.
fn causal_part(samples: &[CMat], n: usize, fwd: &dyn Fft<f64>, inv: &dyn Fft<f64>) -> Vec<CMat> {
    let m = samples.len();
    let mut c = coefficients(samples, n, inv);
    for i in 0..n {
        for j in 0..n {
            if j > i {
                c[0][(i, j)] = Complex64::new(0.0, 0.0);
            } else if i == j {
                c[0][(i, j)] *= 0.5;
            }
        }
    }
    for (k, ck) in c.iter_mut().enumerate().skip(1) {
        if 2 * k == m {
            *ck *= Complex64::new(0.5, 0.0);
        } else if 2 * k > m {
            ck.fill(Complex64::new(0.0, 0.0));
        }
    }
    samples_of(&c, n, fwd)
}

fn fir_at(coeffs: &[Mat], omega: f64) -> CMat {
    let n = coeffs[0].nrows();
    let mut acc = CMat::zeros(n, coeffs[0].ncols());
    for (k, c) in coeffs.iter().enumerate() {
        let z = Complex64::from_polar(1.0, -(k as f64) * omega);
        acc += linalg::to_complex(c) * z;
    }
    acc
}

fn fit_error(coeffs: &[Mat], phi: &[CMat], omega: &[f64]) -> f64 {
    omega
        .iter()
        .zip(phi)
        .map(|(&w, p)| {
            let d = fir_at(coeffs, w);
            linalg::cnorm2(&(d.adjoint() * &d - p)) / linalg::cnorm2(p)
        })
        .fold(0.0, f64::max)
}

/// `Γ_0 … Γ_len` of `Δ(z)^{-1}` by long division.
pub fn inverse_taps(coeffs: &[Mat], len: usize) -> Result<Vec<Mat>> {
    let d0_inv = linalg::inverse(&coeffs[0], "Δ_0")?;
    let n = coeffs[0].nrows();
    let mut out: Vec<Mat> = Vec::with_capacity(len + 1);
    out.push(d0_inv.clone());
    for mm in 1..=len {
        let mut acc = Mat::zeros(n, n);
        for k in 1..=mm.min(coeffs.len() - 1) {
            acc += &coeffs[k] * &out[mm - k];
        }
        out.push(-(&d0_inv * acc));
    }
    Ok(out)
}
