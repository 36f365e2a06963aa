//! Bayesian optimization inside adaptive hyper-ellipsoid local regions.
//!
//! The search distribution of a covariance-matrix-adaptation (CMA) loop
//! defines a confidence ellipsoid; a Bayesian-optimization inner loop picks
//! evaluation points inside it with Thompson sampling over a Gaussian-process
//! surrogate. Three variants are provided (plain, trust-scaled, and
//! subspace-embedded), together with standard BO, trust-region BO, and plain
//! CMA-ES baselines, a synthetic benchmark suite, and an experiment runner.

pub mod cma;
pub mod embedding;
pub mod gp;
pub mod linalg;
pub mod region;
pub mod scalar;
pub mod trscale;

pub use linalg::FactorizationError;
pub use scalar::Scalar;
