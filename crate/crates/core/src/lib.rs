//! Inference for linear instrumental-variable models with many instruments
//! and heterogeneous treatment effects.
//!
//! The crate computes jackknife IV estimates, the leave-one-out statistics
//! `(T_AR, T_LM, T_FS)`, the leave-three-out (L3O) variance estimator for the
//! LM test, confidence sets by test inversion, a set of rival procedures, and
//! a Monte Carlo harness for the benchmark designs.
//!
//! Everything here is `no_std` + `alloc`. IO and the command-line tool live in
//! the `l3o-cli` crate.
#![cfg_attr(all(not(feature = "std"), not(test)), no_std)]

extern crate alloc;

pub mod alt_variance;
pub mod design;
mod error;
pub mod inference;
pub mod l3o_variance;
pub mod linalg;
pub mod numeric;
pub mod simulate;
pub mod statistics;

pub use error::Error;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
