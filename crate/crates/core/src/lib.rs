//! Optimal control of a two-level system coupled to a non-Markovian bosonic bath.
//!
//! The environment is compressed into a process-tensor matrix product operator
//! ([`process_tensor`]). Contracting it with piecewise-constant control
//! propagators ([`propagation`]) gives the final state, and a backward sweep
//! through the same network gives the exact fidelity gradient ([`gradient`]),
//! which drives a box-constrained quasi-Newton optimizer ([`optimize`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod error;
pub mod experiment;
pub mod gradient;
pub mod linalg;
pub mod liouville;
pub mod nonmarkov;
pub mod optimize;
pub mod oracles;
pub mod process_tensor;
pub mod propagation;
pub mod quadrature;

pub use error::{Error, Result};
