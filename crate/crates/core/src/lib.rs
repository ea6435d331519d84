//! Mean-field interacting point processes with reset: exact finite-N
//! simulation of the social pressure model, a Monte Carlo Picard solver for
//! its McKean–Vlasov limit, a coupled strong-error estimator, and the
//! invariant-measure / phase-transition engine of the limit equation.

pub mod acceptance;
pub mod cli;
pub mod coupling;
pub mod finite_system;
pub mod invariant;
pub mod io;
pub mod limit_sde;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod stats;

pub use finite_system::{InitialCondition, ModelParams, Opinion, SystemState};
pub use rates::{RateFamily, RateFunction, Reach};
