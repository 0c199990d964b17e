//! Entropically regularized multi-marginal optimal transport where the Gibbs
//! kernel is a tensor network derived from a graphical-model cost structure.
//!
//! The cost tensor is a sum of low-order factors `C_I = sum_a C^a_{I_a}`, so
//! the Gibbs kernel `K = exp(-C/eta)` factors into a product of small kernel
//! tensors. Marginals of the rescaled kernel — the inner loop of the
//! multi-marginal Sinkhorn iteration — are then tensor-network contractions
//! whose cost is polynomial instead of exponential in the number of
//! marginals, and drops further when matrix factors are replaced by low-rank
//! approximations.
//!
//! Module map:
//! - [`tensor`]: dense tensors, the brute-force oracle representation.
//! - [`model`]: factored costs and kernels.
//! - [`lowrank`]: truncated/randomized SVD factor compression, TT-SVD, and
//!   log-error estimation.
//! - [`network`]: the factor tensor network, contraction planning with flop
//!   accounting, and marginal/cost evaluation.
//! - [`sinkhorn`]: the scaling iteration over an abstract marginal oracle,
//!   greedy index selection, stopping rules, and iteration bounds.
//! - [`rounding`]: projection of a near-feasible plan onto the marginal
//!   polytope, dense and structured.
//! - [`certificates`]: a-priori error bounds for approximated kernels.
//! - [`apps`]: end-to-end pipelines (chain proof of concept, barycenter color
//!   transfer, Schrödinger-bridge marginal evolution).

// validity checks are written as `!(x > 0.0)` so that NaN counts as a
// failure; the suggested `x <= 0.0` would wave NaN through
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod certificates;
pub mod error;
pub mod lowrank;
pub mod model;
pub mod network;
pub mod rounding;
pub mod sinkhorn;
pub mod tensor;

// Shared RNG / assertion helpers for this crate's test suites.
pub mod test_util;

pub use error::{Error, Result};
