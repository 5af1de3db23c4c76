//! Kernel learning from multiple sampled extrapolations.
//!
//! Given training data and several predicted curves on a test grid, recover
//! the covariance kernel that produced the predictions, either parametrically
//! (spectral mixture fitted to the predictive conditional marginal
//! likelihood) or nonparametrically (empirical covariance of the draws).

pub mod empirical;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod kernels;
pub mod learn;
pub mod linalg;
pub mod optimize;
pub mod responses;
pub mod seeds;

pub use empirical::{degenerate_mle, empirical_moments, psd_project, sample_empirical, EmpiricalGaussian};
pub use error::{Error, Result};
pub use gp::{
    log_marginal_likelihood, lml_grad, posterior_predictive, predictive_conditional_lml,
    sample_posterior, sample_prior, DrawSet, GpModel,
};
pub use kernels::{
    default_sm_init, eval_kernel, flatten_params, kernel_grads, kernel_matrix, unflatten_params,
    KernelSpec, SmComponent,
};
pub use learn::{fit_data_kernel, fit_prediction_kernel, FitObjective, FitOptions, FitReport};
pub use optimize::{optimize, OptimizeOptions, OptimizeResult};
