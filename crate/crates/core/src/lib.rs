//! Entropic fictitious play for entropy-regularised finite-sum objectives
//!
//! ```text
//! min_μ  (1/n) Σ_i ℓ_i(E_μ[h_i]) + λ' E_μ[|θ|²] + λ Ent(μ)
//! ```
//!
//! over probability measures on `R^d`, represented by particles.
//!
//! The optimiser in [`efp`] keeps only the `n` running averages
//! `H_i = E_μ[h_i]` and the `m` particles of the current proximal Gibbs
//! measure, so its memory does not grow with the number of iterations.
//! [`duality`] evaluates primal and dual objectives; their gap is `λ` times
//! the KL divergence from `μ` to its proximal Gibbs measure.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style guards must also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod baselines;
pub mod duality;
pub mod efp;
mod error;
pub mod gibbs;
pub mod math;
pub mod model;
pub mod raster;
pub mod rng;

pub use error::{Error, Result};
pub use gibbs::{GibbsSpec, LmcConfig, StepSchedule};
pub use model::{Ensemble, FeatureFamily, FeatureMap, Problem, ScalarLoss};
