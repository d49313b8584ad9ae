//! Training-set sanitization against error-generic data poisoning:
//! per-class mixture models, a greedy complete-data-BIC defense, attack
//! generators, baseline defenses, and victim classifiers.

pub mod attacks;
pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod mixtures;
pub mod pipeline;
pub mod sanitizer;
pub mod synth;

pub use error::{Error, Result};
