//! Plant data, disturbance signals, preview controllers and closed-loop
//! simulation for `x(t+1) = A x(t) + B_d d(t) + B_u u(t)`.

use std::io::{Read, Write};

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};

/// Steps after which a simulation that has not decayed is declared divergent.
pub const MAX_SIMULATION_STEPS: usize = 1_000_000;

/// The problem data `(A, B_d, B_u, Q, R)`.
///
/// Construction validates the standing assumptions: consistent dimensions,
/// `Q ⪰ 0`, `R ≻ 0`, `A` nonsingular, `(A, B_u)` stabilizable and no
/// unobservable mode of `(A, Q)` on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: Mat,
    b_d: Mat,
    b_u: Mat,
    q: Mat,
    r: Mat,
    q_sqrt: Mat,
    r_sqrt: Mat,
}

impl Plant {
    pub fn new(a: Mat, b_d: Mat, b_u: Mat, q: Mat, r: Mat) -> Result<Self> {
        let violations = Self::violations(&a, &b_d, &b_u, &q, &r);
        if !violations.is_empty() {
            return Err(Error::InvalidPlant(violations));
        }
        let q_sqrt = linalg::sym_sqrt(&q);
        let r_sqrt = linalg::sym_sqrt(&r);
        Ok(Self { a, b_d, b_u, q, r, q_sqrt, r_sqrt })
    }

    /// The two-state example system used throughout the test suite and as the CLI default.
    pub fn reference_example() -> Self {
        Self::new(
            Mat::from_row_slice(2, 2, &[3.0, 1.0, -1.0, -2.0]),
            Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            Mat::from_row_slice(2, 1, &[3.0, -1.0]),
            Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]),
            Mat::from_row_slice(1, 1, &[1.0]),
        )
        .expect("reference example satisfies the standing assumptions")
    }

    /// Human-readable list of every violated assumption; empty when the data is valid.
    pub fn violations(a: &Mat, b_d: &Mat, b_u: &Mat, q: &Mat, r: &Mat) -> Vec<String> {
        let mut out = Vec::new();
        let n = a.nrows();
        if a.ncols() != n {
            out.push(format!("A must be square, got {}x{}", a.nrows(), a.ncols()));
            return out;
        }
        if n == 0 {
            out.push("A must have at least one state".into());
            return out;
        }
        if b_d.nrows() != n {
            out.push(format!("B_d must have {n} rows, got {}", b_d.nrows()));
        }
        if b_u.nrows() != n {
            out.push(format!("B_u must have {n} rows, got {}", b_u.nrows()));
        }
        if b_u.ncols() == 0 {
            out.push("B_u must have at least one column".into());
        }
        if b_d.ncols() == 0 {
            out.push("B_d must have at least one column".into());
        }
        if q.shape() != (n, n) {
            out.push(format!("Q must be {n}x{n}, got {}x{}", q.nrows(), q.ncols()));
        }
        let m = b_u.ncols();
        if r.shape() != (m, m) {
            out.push(format!("R must be {m}x{m}, got {}x{}", r.nrows(), r.ncols()));
        }
        if !out.is_empty() {
            return out;
        }
        let finite = |x: &Mat| x.iter().all(|v| v.is_finite());
        if ![a, b_d, b_u, q, r].iter().all(|x| finite(x)) {
            out.push("matrices must contain only finite entries".into());
            return out;
        }

        if (q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm()) {
            out.push("Q must be symmetric".into());
        } else if linalg::min_sym_eig(q) < -1e-12 {
            out.push(format!("Q must be positive semidefinite (min eigenvalue {:e})", linalg::min_sym_eig(q)));
        }
        if (r - r.transpose()).norm() > 1e-12 * (1.0 + r.norm()) {
            out.push("R must be symmetric".into());
        } else if linalg::min_sym_eig(r) <= 0.0 {
            out.push(format!("R must be positive definite (min eigenvalue {:e})", linalg::min_sym_eig(r)));
        }

        let sv = linalg::singular_values(a);
        let (smax, smin) = (sv[0], sv[sv.len() - 1]);
        if smin <= 1e-12 * smax {
            out.push(format!("A must be nonsingular (sigma_min {smin:e}, sigma_max {smax:e})"));
        }

        let eig = linalg::eigenvalues(a);
        let q_sqrt = linalg::sym_sqrt(q);
        for lambda in &eig {
            if lambda.norm() >= 1.0 - 1e-12 && !pbh_full_rank(a, b_u, *lambda, false) {
                out.push(format!("(A, B_u) is not stabilizable: mode {lambda} fails the PBH test"));
            }
            if (lambda.norm() - 1.0).abs() <= 1e-9 && !pbh_full_rank(a, &q_sqrt, *lambda, true) {
                out.push(format!("(A, Q) has an unobservable mode on the unit circle at {lambda}"));
            }
        }
        out
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b_d(&self) -> &Mat {
        &self.b_d
    }
    pub fn b_u(&self) -> &Mat {
        &self.b_u
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    /// Symmetric square root of `Q`.
    pub fn q_sqrt(&self) -> &Mat {
        &self.q_sqrt
    }
    /// Symmetric square root of `R`.
    pub fn r_sqrt(&self) -> &Mat {
        &self.r_sqrt
    }
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_d(&self) -> usize {
        self.b_d.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.b_u.ncols()
    }
    /// True when the disturbance does not enter the dynamics.
    pub fn disturbance_decoupled(&self) -> bool {
        self.b_d.iter().all(|v| *v == 0.0)
    }
}

/// Rank test of `[λI − A, M]` (or its stacked transpose form when `rows` is set).
fn pbh_full_rank(a: &Mat, m: &Mat, lambda: Complex64, rows: bool) -> bool {
    let n = a.nrows();
    let mut shifted = -linalg::to_complex(a);
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let mc = linalg::to_complex(m);
    let test = if rows {
        let mut t = CMat::zeros(n + m.nrows(), n);
        t.view_mut((0, 0), (n, n)).copy_from(&shifted);
        t.view_mut((n, 0), (m.nrows(), n)).copy_from(&mc);
        t
    } else {
        let mut t = CMat::zeros(n, n + m.ncols());
        t.view_mut((0, 0), (n, n)).copy_from(&shifted);
        t.view_mut((0, n), (n, m.ncols())).copy_from(&mc);
        t
    };
    let sv = test.singular_values();
    let scale = sv.max().max(1.0);
    sv.iter().filter(|s| **s > 1e-9 * scale).count() >= n
}

/// A finite-support disturbance `d(0), d(1), …`, zero afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    n_d: usize,
    samples: Vec<DVector<f64>>,
}

impl Signal {
    pub fn new(n_d: usize, samples: Vec<DVector<f64>>) -> Result<Self> {
        if let Some((t, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != n_d) {
            return Err(Error::Signal(format!("sample {t} has {} entries, expected {n_d}", s.len())));
        }
        if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Signal("non-finite sample".into()));
        }
        Ok(Self { n_d, samples })
    }

    pub fn zeros(n_d: usize, len: usize) -> Self {
        Self { n_d, samples: vec![DVector::zeros(n_d); len] }
    }

    /// Unit impulse on `channel` at time `at`.
    pub fn impulse(n_d: usize, channel: usize, at: usize) -> Self {
        let mut s = Self::zeros(n_d, at + 1);
        s.samples[at][channel] = 1.0;
        s
    }

    pub fn from_flat(n_d: usize, flat: &[f64]) -> Self {
        assert!(n_d > 0 && flat.len() % n_d == 0, "flat length must be a multiple of n_d");
        let samples = flat.chunks(n_d).map(DVector::from_column_slice).collect();
        Self { n_d, samples }
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    /// Number of stored samples (the support length).
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    /// `d(t)`, zero outside the stored support.
    pub fn at(&self, t: usize) -> DVector<f64> {
        self.samples.get(t).cloned().unwrap_or_else(|| DVector::zeros(self.n_d))
    }

    pub fn norm_squared(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_squared()).sum()
    }

    /// Stacked samples `[d(0); d(1); …]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { n_d: self.n_d, samples: self.samples.iter().map(|s| s * alpha).collect() }
    }

    /// Delays the signal by `k` samples.
    pub fn delayed(&self, k: usize) -> Self {
        let mut samples = vec![DVector::zeros(self.n_d); k];
        samples.extend(self.samples.iter().cloned());
        Self { n_d: self.n_d, samples }
    }

    /// Reads the `t,d_1,...,d_nd` CSV layout. Missing time steps are zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || &headers[0] != "t" {
            return Err(Error::Signal("header must start with `t`".into()));
        }
        let n_d = headers.len() - 1;
        if n_d == 0 {
            return Err(Error::Signal("no disturbance columns".into()));
        }
        for (i, h) in headers.iter().skip(1).enumerate() {
            if h != format!("d_{}", i + 1) {
                return Err(Error::Signal(format!("column {} must be named d_{}, got `{h}`", i + 1, i + 1)));
            }
        }
        let mut rows: Vec<(usize, DVector<f64>)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Signal(format!("row {}: `{s}`: {e}", line + 1)))
            };
            let t = rec[0]
                .parse::<usize>()
                .map_err(|e| Error::Signal(format!("row {}: bad time index `{}`: {e}", line + 1, &rec[0])))?;
            let v: Vec<f64> = rec.iter().skip(1).map(parse).collect::<Result<_>>()?;
            rows.push((t, DVector::from_vec(v)));
        }
        let len = rows.iter().map(|(t, _)| t + 1).max().unwrap_or(0);
        let mut samples = vec![DVector::zeros(n_d); len];
        for (t, v) in rows {
            samples[t] = v;
        }
        Self::new(n_d, samples)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_d).map(|i| format!("d_{i}")));
        w.write_record(&header)?;
        for (t, s) in self.samples.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Finite-dimensional controller memory `ζ(t+1) = A ζ(t) + B d(t)` entering the
/// control law as `−K ζ(t)`. Regret-optimal controllers carry one; H∞ and H2
/// preview controllers do not.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerMemory {
    pub a: Mat,
    pub b: Mat,
    pub k: Mat,
}

impl ControllerMemory {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// `u(t) = −K_x x(t) − K_ζ ζ(t) − Σ_{j=0}^{p} M_j d(t+j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewController {
    k_x: Mat,
    taps: Vec<Mat>,
    memory: Option<ControllerMemory>,
}

impl PreviewController {
    pub fn new(k_x: Mat, taps: Vec<Mat>) -> Result<Self> {
        Self::with_memory(k_x, taps, None)
    }

    pub fn with_memory(k_x: Mat, taps: Vec<Mat>, memory: Option<ControllerMemory>) -> Result<Self> {
        let Some(first) = taps.first() else {
            return Err(Error::Dimension("a preview controller needs at least one tap".into()));
        };
        let (n_u, n_d) = first.shape();
        if k_x.nrows() != n_u {
            return Err(Error::Dimension(format!("K_x has {} rows, taps have {n_u}", k_x.nrows())));
        }
        if let Some(j) = taps.iter().position(|m| m.shape() != (n_u, n_d)) {
            return Err(Error::Dimension(format!("tap {j} is not {n_u}x{n_d}")));
        }
        if let Some(mem) = &memory {
            let c = mem.a.nrows();
            if mem.a.ncols() != c || mem.b.shape() != (c, n_d) || mem.k.shape() != (n_u, c) {
                return Err(Error::Dimension("controller memory blocks are inconsistent".into()));
            }
        }
        Ok(Self { k_x, taps, memory })
    }

    /// All-zero controller with `p` preview steps.
    pub fn zero(plant: &Plant, p: usize) -> Self {
        Self {
            k_x: Mat::zeros(plant.n_u(), plant.n_x()),
            taps: vec![Mat::zeros(plant.n_u(), plant.n_d()); p + 1],
            memory: None,
        }
    }

    pub fn k_x(&self) -> &Mat {
        &self.k_x
    }
    pub fn taps(&self) -> &[Mat] {
        &self.taps
    }
    pub fn memory(&self) -> Option<&ControllerMemory> {
        self.memory.as_ref()
    }
    /// Preview length.
    pub fn p(&self) -> usize {
        self.taps.len() - 1
    }
    pub fn n_u(&self) -> usize {
        self.k_x.nrows()
    }
    pub fn n_x(&self) -> usize {
        self.k_x.ncols()
    }
    pub fn n_d(&self) -> usize {
        self.taps[0].ncols()
    }
    pub fn memory_dim(&self) -> usize {
        self.memory.as_ref().map_or(0, ControllerMemory::dim)
    }

    pub(crate) fn check_against(&self, plant: &Plant) -> Result<()> {
        if self.n_x() != plant.n_x() || self.n_u() != plant.n_u() || self.n_d() != plant.n_d() {
            return Err(Error::Dimension(format!(
                "controller is ({} inputs, {} states, {} disturbances), plant is ({}, {}, {})",
                self.n_u(),
                self.n_x(),
                self.n_d(),
                plant.n_u(),
                plant.n_x(),
                plant.n_d()
            )));
        }
        Ok(())
    }
}

/// `x(t+1) = A x + B w`, `y = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension("state-space blocks are inconsistent".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Memoryless gain `D`.
    pub fn static_gain(d: Mat) -> Self {
        let (p, m) = d.shape();
        Self { a: Mat::zeros(0, 0), b: Mat::zeros(0, m), c: Mat::zeros(p, 0), d }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// `Σ_t ‖y(t)‖²` from `x0` and inputs `w`, plus the exact tail energy of the
    /// free response after the inputs end. Requires a Schur `A`.
    pub fn output_energy(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<f64> {
        let mut x = x0.clone();
        let mut energy = 0.0;
        for w in inputs {
            let y = &self.c * &x + &self.d * w;
            energy += y.norm_squared();
            x = &self.a * &x + &self.b * w;
        }
        let gram = self.observability_gramian()?;
        Ok(energy + x.dot(&(&gram * &x)))
    }

    /// `P = Aᵀ P A + Cᵀ C`.
    pub fn observability_gramian(&self) -> Result<Mat> {
        linalg::solve_stein(&self.a, &(self.c.transpose() * &self.c))
    }
}

/// The closed loop of `plant` under `ctrl`, with state `[x; ζ; d(t); …; d(t+p−1)]`,
/// input `d(t+p)` and output `[Q^{1/2} x; R^{1/2} u]`.
pub fn closed_loop(plant: &Plant, ctrl: &PreviewController) -> Result<StateSpace> {
    ctrl.check_against(plant)?;
    let (n_x, n_d, n_u) = (plant.n_x(), plant.n_d(), plant.n_u());
    let p = ctrl.p();
    let n_c = ctrl.memory_dim();
    let n = n_x + n_c + p * n_d;
    let buf0 = n_x + n_c;

    // u = K_state z + K_in w
    let mut k_state = Mat::zeros(n_u, n);
    let mut k_in = Mat::zeros(n_u, n_d);
    k_state.view_mut((0, 0), (n_u, n_x)).copy_from(&(-ctrl.k_x()));
    if let Some(mem) = ctrl.memory() {
        k_state.view_mut((0, n_x), (n_u, n_c)).copy_from(&(-&mem.k));
    }
    for (j, tap) in ctrl.taps().iter().enumerate() {
        if j < p {
            k_state.view_mut((0, buf0 + j * n_d), (n_u, n_d)).copy_from(&(-tap));
        } else {
            k_in.copy_from(&(-tap));
        }
    }

    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, n_d);
    a.view_mut((0, 0), (n_x, n_x)).copy_from(plant.a());
    // current disturbance d(t): buffer head when p > 0, the input otherwise
    if p > 0 {
        a.view_mut((0, buf0), (n_x, n_d)).copy_from(plant.b_d());
    } else {
        b.view_mut((0, 0), (n_x, n_d)).copy_from(plant.b_d());
    }
    let bu_k = plant.b_u() * &k_state;
    let mut top = a.view_mut((0, 0), (n_x, n));
    top += &bu_k;
    let mut btop = b.view_mut((0, 0), (n_x, n_d));
    btop += plant.b_u() * &k_in;

    if let Some(mem) = ctrl.memory() {
        a.view_mut((n_x, n_x), (n_c, n_c)).copy_from(&mem.a);
        if p > 0 {
            a.view_mut((n_x, buf0), (n_c, n_d)).copy_from(&mem.b);
        } else {
            b.view_mut((n_x, 0), (n_c, n_d)).copy_from(&mem.b);
        }
    }
    for j in 0..p {
        let row = buf0 + j * n_d;
        if j + 1 < p {
            a.view_mut((row, buf0 + (j + 1) * n_d), (n_d, n_d)).fill_with_identity();
        } else {
            b.view_mut((row, 0), (n_d, n_d)).fill_with_identity();
        }
    }

    let n_y = n_x + n_u;
    let mut c = Mat::zeros(n_y, n);
    let mut d = Mat::zeros(n_y, n_d);
    c.view_mut((0, 0), (n_x, n_x)).copy_from(plant.q_sqrt());
    c.view_mut((n_x, 0), (n_u, n)).copy_from(&(plant.r_sqrt() * &k_state));
    d.view_mut((n_x, 0), (n_u, n_d)).copy_from(&(plant.r_sqrt() * &k_in));
    StateSpace::new(a, b, c, d)
}

/// Initial closed-loop state `[0; 0; d(0); …; d(p−1)]` and input sequence `d(p), d(p+1), …`
/// that reproduce the plant response to `d` from `x(0) = 0`.
pub fn closed_loop_drive(plant: &Plant, ctrl: &PreviewController, d: &Signal) -> (DVector<f64>, Vec<DVector<f64>>) {
    let (n_x, n_d) = (plant.n_x(), plant.n_d());
    let p = ctrl.p();
    let n = n_x + ctrl.memory_dim() + p * n_d;
    let mut z0 = DVector::zeros(n);
    let buf0 = n_x + ctrl.memory_dim();
    for j in 0..p {
        z0.rows_mut(buf0 + j * n_d, n_d).copy_from(&d.at(j));
    }
    let inputs = (p..d.len().max(p)).map(|t| d.at(t)).collect();
    (z0, inputs)
}

/// A simulated response from `x(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    cost: f64,
    /// Exact cost of the free response beyond the simulated horizon.
    pub truncation_bound: f64,
}

impl Trajectory {
    /// Builds a trajectory from `states x(0..=T)` and `inputs u(0..T)`, accumulating the quadratic cost.
    pub fn from_parts(plant: &Plant, states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Self {
        let stage_costs: Vec<f64> = inputs
            .iter()
            .enumerate()
            .map(|(t, u)| {
                let x = &states[t];
                x.dot(&(plant.q() * x)) + u.dot(&(plant.r() * u))
            })
            .collect();
        let cost = stage_costs.iter().sum();
        Self { states, inputs, stage_costs, cost, truncation_bound: 0.0 }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

/// `Σ_t x(t)ᵀ Q x(t) + u(t)ᵀ R u(t)` over the simulated horizon.
pub fn cost(traj: &Trajectory) -> f64 {
    traj.cost
}

/// Simulation horizon before the decay criterion is checked.
pub fn base_horizon(support: usize, n_x: usize) -> usize {
    (support + 50 * n_x).max(2 * support)
}

/// Simulates the plant under `ctrl` from `x(0) = 0`, stopping once the state
/// has decayed below `decay_tol` times its running maximum.
pub fn simulate(plant: &Plant, ctrl: &PreviewController, d: &Signal, decay_tol: f64) -> Result<Trajectory> {
    ctrl.check_against(plant)?;
    if d.n_d() != plant.n_d() {
        return Err(Error::Dimension(format!("signal has {} channels, plant has {}", d.n_d(), plant.n_d())));
    }
    let sys = closed_loop(plant, ctrl)?;
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }

    let p = ctrl.p();
    let base = base_horizon(d.len(), plant.n_x()).max(d.len() + p);
    let mut x = DVector::zeros(plant.n_x());
    let mut zeta = DVector::zeros(ctrl.memory_dim());
    let mut states = vec![x.clone()];
    let mut inputs = Vec::new();
    let mut peak: f64 = 0.0;
    let mut t = 0;
    loop {
        let mut u = -(ctrl.k_x() * &x);
        if let Some(mem) = ctrl.memory() {
            u -= &mem.k * &zeta;
        }
        for (j, tap) in ctrl.taps().iter().enumerate() {
            u -= tap * d.at(t + j);
        }
        let dt = d.at(t);
        x = plant.a() * &x + plant.b_d() * &dt + plant.b_u() * &u;
        if let Some(mem) = ctrl.memory() {
            zeta = &mem.a * &zeta + &mem.b * &dt;
        }
        inputs.push(u);
        t += 1;
        let size = (x.norm_squared() + zeta.norm_squared()).sqrt();
        peak = peak.max(size);
        states.push(x.clone());
        if t >= base && size <= decay_tol * peak {
            break;
        }
        if t >= MAX_SIMULATION_STEPS {
            return Err(Error::Diverging { steps: t });
        }
    }

    let mut traj = Trajectory::from_parts(plant, states, inputs);
    // remaining free response: closed-loop state [x; ζ; d(T..T+p−1)] with zero future input
    let (n_x, n_c, n_d) = (plant.n_x(), ctrl.memory_dim(), plant.n_d());
    let mut z = DVector::zeros(n_x + n_c + p * n_d);
    z.rows_mut(0, n_x).copy_from(&x);
    z.rows_mut(n_x, n_c).copy_from(&zeta);
    for j in 0..p {
        z.rows_mut(n_x + n_c + j * n_d, n_d).copy_from(&d.at(t + j));
    }
    let gram = sys.observability_gramian()?;
    traj.truncation_bound = z.dot(&(&gram * &z)).max(0.0);
    Ok(traj)
}

/// `D + C (e^{iω} I − A)^{-1} B` at every grid frequency.
pub fn freq_response(sys: &StateSpace, omega_grid: &[f64]) -> Result<Vec<CMat>> {
    omega_grid.iter().map(|&w| eval_transfer(sys, w)).collect()
}

pub(crate) fn eval_transfer(sys: &StateSpace, omega: f64) -> Result<CMat> {
    if !(0.0..=std::f64::consts::PI).contains(&omega) {
        return Err(Error::Precondition(format!("frequency {omega} outside [0, pi]")));
    }
    let d = linalg::to_complex(&sys.d);
    let n = sys.n_states();
    if n == 0 {
        return Ok(d);
    }
    let z = Complex64::from_polar(1.0, omega);
    let mut res = -linalg::to_complex(&sys.a);
    for i in 0..n {
        res[(i, i)] += z;
    }
    let lu = res.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
    let pmax = pivots.iter().copied().fold(0.0, f64::max).max(1.0);
    if pivots.iter().any(|&v| v <= 1e-12 * pmax) {
        return Err(Error::SingularResolvent { omega });
    }
    let x = lu
        .solve(&linalg::to_complex(&sys.b))
        .ok_or(Error::SingularResolvent { omega })?;
    Ok(d + linalg::to_complex(&sys.c) * x)
}

/// Largest singular value of the transfer matrix at `omega`.
pub(crate) fn gain_at(sys: &StateSpace, omega: f64) -> Result<f64> {
    Ok(linalg::cnorm2(&eval_transfer(sys, omega)?))
}

/// `n` uniformly spaced frequencies on `[0, π]`, endpoints included.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| std::f64::consts::PI * k as f64 / (n - 1) as f64).collect(),
    }
}
