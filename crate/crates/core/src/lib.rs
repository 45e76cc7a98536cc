//! Toric inverse Monge-Ampere flow on reflexive polytopes.
//!
//! The crate computes the extremal affine function and the optimal destabilizer of
//! a reflexive polygon exactly, and simulates the flow `du/dt = sigma - 1` of the
//! symplectic potential `u = u_can + v` on a grid, with the Ding, Ricci-Calabi and
//! entropy monitors evaluated along the way.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod catalog;
pub mod check;
pub mod destabilizer;
pub mod ding;
pub mod energies;
pub mod error;
pub mod flow;
pub mod grid;
pub mod polynomial;
pub mod polytope;
pub mod rational;
pub mod serde_float;
pub mod trace;

pub use affine::AffineFn;
pub use catalog::catalog;
pub use check::Check;
pub use error::{Error, Result};
pub use polynomial::Polynomial;
pub use polytope::Polytope;
