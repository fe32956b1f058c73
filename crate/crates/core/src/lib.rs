//! Numerical laboratory for linear (Ornstein–Uhlenbeck type) diffusion
//! processes `dx = f(t) x dt + g(t) dw` and the generative samplers built on
//! their exact solution.
//!
//! The crate is organised bottom-up:
//!
//! - [`process`]: drift/noise definitions, schedules, time grids, config ingestion.
//! - [`evolution`]: the evolution operator `U(t)` as a time-ordered product and
//!   the transition kernel `K(t, t') = U(t) U⁻¹(t')`.
//! - [`covariance`]: `Σ(t)` by quadrature, by ODE and by the DDIM closed form,
//!   plus the factor `V(t)` with `Σ = V Vᵀ`.
//! - [`tables`]: the bundle of evolution and covariance data that scores and
//!   samplers read from.
//! - [`score`]: exact single-point and mixture scores, ε-space transform and a
//!   Monte-Carlo score-matching cost.
//! - [`samplers`]: forward Euler–Maruyama, reverse SDE family, probability-flow
//!   ODE, exponential-integrator / DDIM / principal-axis DDIM steps.
//! - [`equilibrium`]: Sylvester/Lyapunov solves, probability currents and the
//!   rotating-basis analysis of `U(t)`.

pub mod covariance;
pub mod csvio;
pub mod equilibrium;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod process;
pub mod samplers;
pub mod score;
pub mod tables;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dense real matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
