//! Core engine for meta-learned visual prompt selection: tensors and
//! gradients, the episodic data model, the reward environment, the
//! transformer retriever policy, REINFORCE training and baseline selectors.
//!
//! The crate is `no_std` and only needs `alloc`. Anything touching files or
//! processes lives in the `mvps` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod datamodel;
pub mod environment;
pub mod error;
pub mod mask;
pub mod math;
pub mod numerics;
pub mod retriever;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
