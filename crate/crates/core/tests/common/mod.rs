#![allow(dead_code)]

use nalgebra::DVector;
use preview_core::linalg::Mat;
use preview_core::{simulate, Plant, PreviewController, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A random plant accepted by the standing assumptions; A is scaled so that
/// roughly half the draws are open-loop unstable.
pub fn random_plant(rng: &mut ChaCha8Rng, n_x: usize, n_u: usize, n_d: usize) -> Plant {
    loop {
        let a = random_mat(rng, n_x, n_x) * (1.6 / (n_x as f64).sqrt());
        let b_u = random_mat(rng, n_x, n_u);
        let b_d = random_mat(rng, n_x, n_d);
        let c = random_mat(rng, n_x, n_x);
        let q = c.transpose() * c + Mat::identity(n_x, n_x) * 0.1;
        let m = random_mat(rng, n_u, n_u);
        let r = Mat::identity(n_u, n_u) + m.transpose() * m * 0.5;
        if let Ok(plant) = Plant::new(a, b_d, b_u, q, r) {
            if preview_core::noncausal::build_noncausal(&plant).is_ok() {
                return plant;
            }
        }
    }
}

pub fn random_signal(rng: &mut ChaCha8Rng, n_d: usize, len: usize) -> Signal {
    let samples = (0..len).map(|_| DVector::from_fn(n_d, |_, _| rng.random_range(-1.0..1.0))).collect();
    Signal::new(n_d, samples).unwrap()
}

pub fn unit_signal(rng: &mut ChaCha8Rng, n_d: usize, len: usize) -> Signal {
    let d = random_signal(rng, n_d, len);
    let norm = d.norm_squared().sqrt();
    d.scaled(1.0 / norm)
}

/// Infinite-horizon cost: simulated stages plus the exact tail.
pub fn total_cost(plant: &Plant, ctrl: &PreviewController, d: &Signal) -> f64 {
    let traj = simulate(plant, ctrl, d, 1e-13).unwrap();
    preview_core::cost(&traj) + traj.truncation_bound
}
