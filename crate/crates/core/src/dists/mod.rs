//! Distributions, special functions and the Gaussian-copula joint model.

mod joint;
mod lognormal;
mod marginal;
mod special;

pub use joint::{implied_correlation, nataf_fit, nataf_fit_with, CorrelationMatrix, GaussianCopulaJoint};
pub use lognormal::LognormalLinearProblem;
pub use marginal::{Marginal, MarginalKind, TAIL_CLAMP};
pub use special::{
    bivariate_normal_cdf, std_normal, std_normal_cdf, std_normal_inv, std_normal_inv_upper, std_normal_pdf,
};
