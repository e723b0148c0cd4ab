//! Course allocation with priorities: a pseudo-market solver and the
//! benchmark mechanisms and welfare metrics used to compare against it.

pub mod demand;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod instance;
pub mod mechanisms;
pub mod metrics;
pub mod reserves;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
