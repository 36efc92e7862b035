//! Stochastic flows of Dirichlet matrices on finite sets, the Beta-matrix
//! flow on the discrete circle, exact n-point transition algebra, and a
//! numerical harness comparing the discrete flow with the Brownian sticky
//! flow on the unit circle.
//!
//! Module map:
//!
//! * [`partitions`]: set partitions of `{1..n}`, block maps and the
//!   exchangeable partition weights `p_π^(a)`.
//! * [`random_measures`]: Gamma, Dirichlet and Dirichlet-matrix sampling and
//!   exact Dirichlet moments.
//! * [`flow_engine`]: products of sampled matrices, Beta steps on the torus
//!   grid and measure-valued trajectories.
//! * [`npoint_exact`]: exact n-point transition matrices, the Polya-urn
//!   sampler and the invariant measures.
//! * [`continuous_reference`]: test functions, the sticky invariant measure,
//!   the sticky generator and the one-point heat semigroup on the circle.
//! * [`convergence_lab`]: discrete generators, semigroups and resolvents and
//!   their gaps to the continuous objects.
//! * [`cli`]: configuration-driven commands behind the `stickyflow` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod continuous_reference;
pub mod convergence_lab;
pub mod flow_engine;
pub mod npoint_exact;
pub mod partitions;
pub mod random_measures;
pub mod stats;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid time interval: s = {s} > t = {t}")]
    Interval { s: f64, t: f64 },
    #[error("point is not on the lattice: {0}")]
    OffLattice(String),
    #[error("unsupported arity {0}: only n = 1 has an analytic continuous resolvent")]
    UnsupportedArity(usize),
    #[error("Fourier tail above tolerance: {0}")]
    InsufficientModes(String),
    #[error("Poisson truncation failed: {0}")]
    Truncation(String),
    #[error("linear solve failed: {0}")]
    Solver(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
