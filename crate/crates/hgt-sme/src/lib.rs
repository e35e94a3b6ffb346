//! Bayesian hierarchical spatial mixed-effect models for areal survey data
//! with covariate measurement error.
//!
//! The model stack is:
//!
//! * a generalized transformation layer that replaces Gaussian / Poisson /
//!   Binomial responses with a continuous transformed response `h` drawn from
//!   a conjugate conditional (`hgt`),
//! * a latent Gaussian mixed-effect model `h ~ N(Wβ + Sδ + Mη + ξ, τ²I)`
//!   where the error-prone covariates `W` are latent with CAR priors and the
//!   observed `X = W + u` carries known, spatially varying measurement-error
//!   variances (`sampler`),
//! * Moran's I basis functions `M`, orthogonal to the fixed design, for the
//!   residual spatial term (`spatial`),
//! * a fully conjugate Gibbs sampler cycling the closed-form full
//!   conditionals, plus the "naive" variant that ignores measurement error.
//!
//! `simharness` generates pseudo-data studies comparing the two models and
//! `evaluation` provides prediction metrics, DIC and WAIC.

pub mod areal;
pub mod error;
pub mod evaluation;
pub mod hgt;
pub mod sampler;
pub mod simharness;
pub mod spatial;
pub mod stochastics;

pub use error::{Error, Result};
