//! Certified analysis of Gaussian process posterior means.
//!
//! The crate computes local Lipschitz constants of `μ(x) = k(x)ᵀ λ` on
//! hyperrectangles from closed-form enclosures of kernel derivatives, turns
//! them into two-sided bounds on `g(f(x)) - μ(x)`, and drives an adaptive
//! 2^d-refinement over a compact domain. Applications to global Lipschitz
//! bounds and region-of-attraction certification live in [`recipes`].

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod gp;
pub mod interval;
pub mod kernels;
pub mod par;
pub mod recipes;
pub mod rect;
pub mod verify;

pub use error::{Gp3Error, Result};
pub use gp::{GpModel, TrainingSet};
pub use interval::Interval;
pub use kernels::{DerivBound, KernelFamily, KernelSpec};
pub use par::Workers;
pub use rect::Hyperrectangle;
