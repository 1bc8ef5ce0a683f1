mod common;

use std::sync::OnceLock;

use preview_core::linalg::Mat;
use preview_core::lti::{self, uniform_grid};
use preview_core::noncausal::{build_noncausal, gamma_nc, noncausal_cost, noncausal_response};
use preview_core::preview::{h2_preview, hinf_preview_bisect};
use preview_core::regret::{
    build_finite_horizon_with, h2_gap_bound, regret_at_horizon, regret_eval, regret_preview_bisect,
    frequency_regret as library_frequency_regret, hankel_regret_level, spectral_factorize, FiniteHorizonOperators,
    Terminal,
};
use preview_core::{closed_loop, Plant, PreviewController};
use proptest::prelude::*;

fn example_operators() -> &'static FiniteHorizonOperators {
    static OPS: OnceLock<FiniteHorizonOperators> = OnceLock::new();
    OPS.get_or_init(|| build_finite_horizon_with(&Plant::reference_example(), 120, Terminal::CostToGo).unwrap())
}

/// `max_ω λ_max(T_K*T_K − W)` on a uniform grid.
fn frequency_regret(plant: &Plant, ctrl: &PreviewController) -> f64 {
    let nc = build_noncausal(plant).unwrap();
    let grid = uniform_grid(4097);
    let w = noncausal_response(plant, &nc, &grid).unwrap().w;
    let t = lti::freq_response(&closed_loop(plant, ctrl).unwrap(), &grid).unwrap();
    t.iter()
        .zip(&w)
        .map(|(t, w)| {
            let m = t.adjoint() * t - w;
            m.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn oracle_agrees_with_frequency_domain_for_h2() {
    let plant = Plant::reference_example();
    for p in 0..=4 {
        let ctrl = h2_preview(&plant, p).unwrap();
        let oracle = regret_at_horizon(&plant, &ctrl, 400).unwrap();
        let freq = frequency_regret(&plant, &ctrl);
        assert!(oracle <= freq * (1.0 + 1e-6), "p = {p}: {oracle} above {freq}");
        assert!(oracle >= freq * (1.0 - 1e-3), "p = {p}: {oracle} far below {freq}");
    }
}

#[test]
fn doubling_reports_a_settled_estimate() {
    let plant = Plant::reference_example();
    let est = regret_eval(&plant, &h2_preview(&plant, 2).unwrap(), 100).unwrap();
    assert!(est.delta < 1e-4, "{est:?}");
    assert!(est.horizon >= 200);
}

#[test]
fn synthesized_regret_is_certified_and_tight() {
    let plant = Plant::reference_example();
    let g_nc = gamma_nc(&plant, 1e-12).unwrap().value;
    let mut prev = f64::INFINITY;
    for p in 0..=3 {
        let r = regret_preview_bisect(&plant, p, 1e-8).unwrap();
        let g2 = r.gamma * r.gamma;
        let oracle = regret_at_horizon(&plant, &r.controller, 400).unwrap();
        assert!(oracle <= g2 * (1.0 + 1e-3), "p = {p}: oracle {oracle} above {g2}");
        assert!(oracle >= g2 * (1.0 - 1e-3), "p = {p}: oracle {oracle} well below {g2}");
        assert!(r.gamma <= prev);
        let g_inf = hinf_preview_bisect(&plant, p, 1e-8).unwrap().gamma;
        assert!(r.gamma >= g_inf - g_nc - 2e-8);
        assert!(g2 >= g_inf * g_inf - g_nc * g_nc - 1e-6);
        assert!(r.gamma_lower <= r.achieved * (1.0 + 1e-9) && r.achieved <= r.gamma);
        assert!(r.gamma <= r.gamma_lower * (1.0 + 1e-5), "p = {p}: {} vs {}", r.gamma, r.gamma_lower);
        let dense = frequency_regret(&plant, &r.controller).sqrt();
        assert!((dense - r.achieved).abs() <= 1e-6 * r.achieved, "p = {p}: {dense} vs {}", r.achieved);
        let f = r.factor.unwrap();
        assert!(f.fit_error <= 1e-8 && f.tail <= 1e-8);
        prev = r.gamma;
    }
}

#[test]
fn hankel_level_is_below_every_controller() {
    let plant = Plant::reference_example();
    for p in 0..=6 {
        let lower = hankel_regret_level(&plant, p).unwrap();
        let ctrl = h2_preview(&plant, p).unwrap();
        let measured = library_frequency_regret(&plant, &ctrl, 2049).unwrap();
        assert!(lower * lower <= measured * (1.0 + 1e-9), "p = {p}: {lower} vs {measured}");
        // a longer preview window, truncated back to p taps, is still a p-preview controller
        let longer = h2_preview(&plant, p + 3).unwrap();
        let cut = PreviewController::new(longer.k_x().clone(), longer.taps()[..=p].to_vec()).unwrap();
        assert!(lower * lower <= library_frequency_regret(&plant, &cut, 2049).unwrap() * (1.0 + 1e-9));
    }
}

#[test]
fn fast_response_matches_the_dense_realization() {
    let plant = Plant::reference_example();
    for p in [0, 2, 5] {
        let ctrl = h2_preview(&plant, p).unwrap();
        let dense = frequency_regret(&plant, &ctrl);
        let fast = library_frequency_regret(&plant, &ctrl, 4097).unwrap();
        assert!((dense - fast).abs() <= 1e-9 * (1.0 + dense), "p = {p}: {dense} vs {fast}");
    }
}

#[test]
fn factor_fits_at_small_level() {
    let f = spectral_factorize(&Plant::reference_example(), 0.1, 64, 4096).unwrap();
    assert!(f.fit_error <= 1e-8, "{}", f.fit_error);
    assert!(f.tail <= 1e-8, "{}", f.tail);
}

#[test]
fn h2_gap_stays_below_the_bound() {
    let plant = Plant::reference_example();
    let nc = build_noncausal(&plant).unwrap();
    let bound = h2_gap_bound(&plant, None).unwrap();
    let mut rng = common::rng(7);
    for p in bound.t_cut..=bound.t_cut + 5 {
        let ctrl = h2_preview(&plant, p).unwrap();
        for _ in 0..20 {
            let d = common::unit_signal(&mut rng, 1, 40);
            let gap = common::total_cost(&plant, &ctrl, &d) - noncausal_cost(&plant, &nc, &d).unwrap();
            assert!(gap >= -1e-9 && gap <= bound.bound(p), "p = {p}: gap {gap}");
        }
        assert!(regret_at_horizon(&plant, &ctrl, 200).unwrap() <= bound.bound(p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn regret_is_never_negative(seed in any::<u64>(), p in 0usize..4, scale in 0.0f64..0.3) {
        let plant = Plant::reference_example();
        let base = h2_preview(&plant, p).unwrap();
        let mut rng = common::rng(seed);
        let k_x = base.k_x() + common::random_mat(&mut rng, 1, 2) * scale;
        let taps: Vec<Mat> = base.taps().iter().map(|m| m + common::random_mat(&mut rng, 1, 1) * scale).collect();
        let ctrl = PreviewController::new(k_x, taps).unwrap();
        prop_assume!(closed_loop(&plant, &ctrl).unwrap().spectral_radius() < 0.98);
        let ops = example_operators();
        prop_assert!(ops.regret(&plant, &ctrl).unwrap() >= -1e-9);
        prop_assert!(ops.regret_from(&plant, &ctrl, 0).unwrap() >= -1e-9);
    }

    #[test]
    fn stacked_operator_is_the_simulated_cost(seed in any::<u64>(), p in 0usize..4) {
        let plant = Plant::reference_example();
        let ctrl = hinf_preview_bisect(&plant, p, 1e-6).unwrap().controller;
        let ops = example_operators();
        let t_k = ops.controller_operator(&plant, &ctrl).unwrap();
        let mut rng = common::rng(seed);
        let d = common::random_signal(&mut rng, 1, 50);
        let v = nalgebra::DVector::from_fn(120, |i, _| if i < 50 { d.at(i)[0] } else { 0.0 });
        let stacked = (&t_k * &v).norm_squared();
        let simulated = common::total_cost(&plant, &ctrl, &d);
        prop_assert!((stacked - simulated).abs() <= 1e-8 * (1.0 + simulated));
        let quad = v.dot(&(&ops.w * &v));
        prop_assert!(quad <= stacked + 1e-8 * (1.0 + stacked));
    }
}
