//! Learning coefficients of Poisson mixtures.
//!
//! The crate computes the real log canonical threshold (learning coefficient)
//! of simplex Vandermonde matrix type singularities — the singularities of
//! Poisson mixture models — three independent ways and cross-checks them:
//!
//! * closed form: `(3r + H - 2)/4` in one dimension, `(Mr + H - 1)/2` above,
//!   where `H` counts model components and `r` true components;
//! * enumeration of local collapse partitions, minimizing the local
//!   coefficient (`rlct` module);
//! * seeded Bayesian simulation of the generalization-error law
//!   `E[G_n] = L(w0) + lambda/n` (`experiment` module).
//!
//! Supporting machinery: mixture densities and divergences (`model`),
//! elementary-symmetric-polynomial recursions (`sympoly`), the singularity
//! function and its affine variety (`vandermonde`), and reusable verification
//! suites (`checks`).

pub mod checks;
pub mod experiment;
pub mod lattice;
pub mod model;
pub mod rlct;
pub mod rng;
pub mod sympoly;
pub mod vandermonde;

pub use experiment::{
    fit_lambda, run_experiment, wbic_lambda, ExperimentConfig, ExperimentError, ExperimentRecord,
    LambdaFit, PriorSpec, SamplerSettings,
};
pub use lattice::LatticeBox;
pub use model::{
    kl_mean_error, log_loss, mixture_log_pmf, poisson_log_pmf, poisson_pmf, sample, sq_surrogate,
    Count, MixtureParams, ModelError, RateVector, TrueModel,
};
pub use rlct::{
    combine_product, combine_sum, local_lambda, regular_reference, rlct_closed_form,
    rlct_enumerate, ModelSignature, RlctError, RlctSource, RlctValue,
};
pub use vandermonde::{
    aoyagi_local_split, compute_inv_sets, h_function, ratio_bound_probe, sample_variety_point,
    variety_membership, PartitionSpec, VandermondeInstance, VarietyError,
};
