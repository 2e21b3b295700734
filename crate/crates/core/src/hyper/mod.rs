//! Hyperparameter priors and posteriors: sampling, Laplace approximation,
//! empirical-Bayes priors and a 1-D quadrature reference.

pub mod laplace;
pub mod mcmc;
pub mod prior;
pub mod quadrature;

pub use laplace::{empirical_bayes_precision, empirical_bayes_prior, laplace_approximation, laplace_from_log_density, LaplaceApprox};
pub use mcmc::{metropolis, posterior_mass_in_box, sample_posterior, PosteriorSampleSet, SamplerConfig};
pub use prior::{log_unnormalized_posterior, HyperPrior};
pub use quadrature::{quadrature_posterior_1d, GridDensity};
