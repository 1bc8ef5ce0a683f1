//! Additive regret against the non-causal baseline: finite-horizon oracles,
//! spectral factorization, regret-optimal preview synthesis and the H2 gap bound.

pub mod bound;
pub mod finite_horizon;
pub mod frequency;
pub mod hankel;
pub mod spectral;
pub mod synthesis;

pub use bound::{gap_bound_from, h2_gap_bound, GapBound, ALPHA_CEILING};
pub use finite_horizon::{
    build_finite_horizon, build_finite_horizon_with, regret_at_horizon, regret_eval, FiniteHorizonOperators,
    RegretEstimate, Terminal,
};
pub use frequency::{frequency_regret, frequency_regret_on};
pub use hankel::hankel_regret_level;
pub use spectral::{factorize_symbol, spectral_factorize, RegretSymbol, SpectralFactor};
pub use synthesis::{regret_preview_bisect, regret_preview_bisect_with, RegretOptions, RegretResult};
