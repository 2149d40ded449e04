//! Within-host HIV dynamics under time-varying antiretroviral efficacy, plus a
//! hierarchical Bayesian machinery for fitting the model to longitudinal
//! viral-load measurements.
//!
//! The model tracks uninfected target cells, productively infected cells, and
//! free virus. Treatment enters through a time-varying efficacy `gamma(t)` in
//! [0, 1) built from drug trough concentrations, evolving IC50 values, and
//! interval-censored adherence. A dimensionless rescaling reduces the system
//! to five parameters per subject (`c`, `delta`, `d_T`, `rho`, `R0`) plus the
//! efficacy shape parameter `phi`; all six are estimated on the log scale with
//! a Gibbs-within-Metropolis sampler over a three-stage mixed-effects model.
//!
//! # Modules
//!
//! - [`ode`]: the dynamical system in original and rescaled form, a
//!   discontinuity-aware adaptive Runge-Kutta integrator, and viral-load
//!   prediction on the log10 scale.
//! - [`efficacy`]: IC50 ramps, adherence step functions, inhibitory
//!   quotients, and the efficacy function `gamma(t)`.
//! - [`inference`]: the hierarchical model, conjugate conditional samplers,
//!   the adaptive random-walk Metropolis update for subject parameters, the
//!   chain driver, and posterior summaries.
//! - [`study`]: synthetic cohort generation, virological response
//!   classification, and the correlation / group-comparison analyses.
//! - [`stats`]: Spearman rank correlation and the Wilcoxon rank-sum test.
//! - [`data`]: dataset and chain file formats.
//! - [`cli`]: the `simulate` / `fit` / `summarize` / `analyze` / `efficacy`
//!   commands wrapped by the `hivdyn` binary.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example threshold_dichotomy   # eradication vs rebound around e_c
//! cargo run --release --example rescaling_equivalence # original vs rescaled trajectories
//! cargo run --release --example efficacy_profile      # gamma(t) from IC50 + adherence inputs
//! cargo run --release --example simulate_cohort       # synthetic cohort written to disk
//! cargo run --release --example fit_synthetic         # end-to-end posterior fit (short chain)
//! cargo run --release --example response_analysis     # classification + nonparametric analyses
//! ```

pub mod cli;
pub mod data;
pub mod efficacy;
pub mod error;
pub mod inference;
pub mod ode;
pub mod stats;
pub mod study;

pub use error::Error;

/// Number of subject-level parameters: log phi, log c, log delta, log d_T,
/// log rho, log R0.
pub const N_PARAMS: usize = 6;

/// Order in which the six log-parameters appear in vectors and files.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["phi", "c", "delta", "d_T", "rho", "R0"];

/// Subject parameters as a vector, always on the log scale.
pub type ParamVector = nalgebra::SVector<f64, N_PARAMS>;

/// Covariance or precision over the six log-parameters.
pub type ParamMatrix = nalgebra::SMatrix<f64, N_PARAMS, N_PARAMS>;
