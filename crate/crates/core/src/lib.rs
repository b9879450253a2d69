//! Accept-reject alignment of a frozen language model.

#![forbid(unsafe_code)]

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod refmodel;
pub mod reward;
pub mod rng;
pub mod sac;
pub mod token;
pub mod truncation;

pub use error::{Error, Result};
pub use token::{TokenId, Vocab};
