//! Noisy sparse-support recovery toolkit.
//!
//! A `k`-sparse signal in dimension `p` is observed through `m` noisy linear
//! measurements `y = Φθ + ε` with white Gaussian noise. This crate studies the
//! problem of recovering the *support* of `θ` (the sorted tuple of nonzero
//! positions) under the squared `ℓ2` error between index tuples:
//!
//! - [`decoders`]: the exhaustive maximum-likelihood subspace decoder (closest
//!   `k`-column subspace to `y`) and the maximum-correlation baseline.
//! - [`bounds`]: the Hammersley-Chapman-Robbins (HCR) lower bound on the
//!   covariance trace of unbiased support estimators, evaluated exhaustively
//!   by subspace projection, together with closed-form error bounds for the
//!   ML decoder and necessary/sufficient measurement counts for the standard
//!   Gaussian ensemble.
//! - [`experiments`]: a seeded, reproducible Monte Carlo harness that measures
//!   error rate, bias, and covariance trace of the decoders and checks them
//!   against every bound.
//! - [`numerics`] and [`model`]: dense linear algebra (QR, projections),
//!   chi-square/Gaussian distribution functions, and the signal/measurement
//!   model shared by everything above.
//!
//! All randomness flows through one documented generator (see [`rng`]), so
//! every result in the crate is bit-reproducible from its seeds.

use thiserror::Error;

pub mod bounds;
pub mod decoders;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod stats;

pub use model::{MeasurementSetup, SparseSignal, Support};
pub use numerics::Mat;

/// Hard limit on exhaustive support enumeration unless overridden.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is numerically rank deficient{}", support_suffix(.support))]
    RankDeficient { support: Option<Vec<usize>> },

    #[error("support enumeration needs {required} subsets, above the cap of {cap}")]
    CapExceeded { required: u128, cap: u64 },

    #[error("invalid support: {reason}")]
    InvalidSupport { reason: String },

    #[error("invalid signal: {reason}")]
    InvalidSignal { reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("2k-independence is impossible: 2k = {two_k} columns cannot be independent with m = {m} rows")]
    Infeasible { two_k: usize, m: usize },

    #[error("the finite-sum chi-square identity requires an even number of degrees of freedom, got {dof}")]
    OddDof { dof: u32 },

    #[error("the ML error bound requires an even number of measurements, got m = {m}")]
    OddM { m: u32 },

    #[error("distinguishability factor must exceed 1, got beta = {beta}")]
    BetaOutOfRange { beta: f64 },

    #[error("alternative support equals the true support")]
    SameSupport,

    #[error("alternative subspace {support:?} contains the noiseless measurement; supports are indistinguishable")]
    DegenerateSubspace { support: Vec<usize> },

    #[error("no alternative support exists (k = p)")]
    NoAlternativeSupport,

    #[error("invalid dimensions: need p > k, got p = {p}, k = {k}")]
    InvalidDims { p: usize, k: usize },

    #[error("theta_min^2/sigma^2 = {ratio} is at or below the validity floor of 8")]
    SnrTooLow { ratio: f64 },

    #[error("parse error: {reason}")]
    Parse { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn support_suffix(support: &Option<Vec<usize>>) -> String {
    match support {
        Some(s) => format!(" for support {s:?}"),
        None => String::new(),
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
