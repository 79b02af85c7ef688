//! Deterministic virtual-time simulator for asynchronous, heterogeneous,
//! model-free LQR policy-gradient design.
//!
//! * [`matops`]: dense matrices, discrete Lyapunov and Riccati solvers.
//! * [`lqr`]: exact cost, analytic gradient, optimum, gradient dominance.
//! * [`fleet`]: heterogeneous fleet generation and gradient heterogeneity.
//! * [`zo`]: two-point zeroth-order gradient estimator.
//! * [`engine`]: event-driven asynchronous server and synchronous baseline.
//! * [`harness`]: presets, experiment runner, summaries and verification suites.

pub mod engine;
pub mod error;
pub mod fleet;
pub mod harness;
pub mod lqr;
pub mod matops;
pub mod nominal;
pub mod oracle;
pub mod rng;
pub mod zo;

pub use error::{Error, Result};
pub use matops::Mat;
