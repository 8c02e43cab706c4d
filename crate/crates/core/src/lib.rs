//! Personalized top/bottom compatibility ranking.
//!
//! A general compatibility network scores how well a bottom matches a top,
//! a matrix-factorization preference model scores how much a user likes the
//! bottom, and the two are fused and trained with pairwise (BPR) ranking.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod interpret;
pub mod model;
pub mod nnet;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
