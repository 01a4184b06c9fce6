//! Functional network autoregressive (FNAR) panel models.
//!
//! Outcome functions `Y_it(s)` on `[0, 1]` interact through a known network `W`
//! and a linear functional `A(., s)`:
//!
//! ```text
//! Y_it(s) = alpha(s) A(sum_j w_ij Y_jt, s) + X_it' beta(s) + f_i(s) + eps_it(s)
//! ```
//!
//! The crate simulates such panels, estimates `alpha` and `beta` with an
//! integrated GMM estimator built on first-differenced linear and quadratic
//! moment conditions, computes pointwise standard errors, and propagates
//! covariate changes and external shocks through the network.

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod interaction;
pub mod io;
pub mod montecarlo;
pub mod network;
pub mod rng;
pub mod simulate;
pub mod sparse;

pub use basis::{BasisSystem, QuadratureGrid};
pub use error::{FnarError, Result};
pub use estimator::{Estimator, FitOptions, GmmFit, MomentSpec, MomentSystem, OmegaChoice};
pub use interaction::{FunctionOnGrid, InteractionOperator, Kernel};
pub use network::{NetworkWeights, QuadWeightMatrix};
pub use simulate::{DgpConfig, FunctionalPanel};
