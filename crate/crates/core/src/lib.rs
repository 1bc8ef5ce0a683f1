//! Synthesis and analysis of discrete-time LTI preview controllers.
//!
//! The crate builds the optimal non-causal baseline controller of a plant
//! `x(t+1) = A x(t) + B_d d(t) + B_u u(t)` with cost `Σ xᵀQx + uᵀRu`,
//! synthesizes p-step H∞, H2 and regret-optimal preview controllers, and
//! provides the independent oracles (bounded-real H∞ norms, finite-horizon
//! Toeplitz operators, explicit gap bounds) used to check them.

pub mod error;
pub mod linalg;
pub mod lti;
pub mod noncausal;
pub mod preview;
pub mod regret;
pub mod riccati;

pub use error::{Error, Result};
pub use lti::{closed_loop, cost, freq_response, simulate, Plant, PreviewController, Signal, StateSpace, Trajectory};
