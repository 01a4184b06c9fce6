//! Integrated GMM estimation of the interaction and covariate functions.

mod fit;
mod instruments;
mod interp;
mod moments;
mod variance;

pub use fit::{estimate, fit_2sls, fit_gmm, Estimator, FitOptions, GmmFit, OmegaChoice, RANK_FLOOR};
pub use instruments::{build_instruments, Instruments, IvSpec};
pub use interp::interpolate_response;
pub use moments::{MomentSpec, MomentSystem};
pub use variance::{estimate_fixed_effects, estimate_variance, moment_covariance};
