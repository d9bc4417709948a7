//! Contact-driven affordance learning interleaved with reinforcement
//! learning, on a deterministic 2-D articulated-object simulator.

pub mod diffcore;
mod error;

pub use error::{Error, Result};
pub mod geometry;
pub mod simworld;
pub mod affordance;
pub mod policy;
pub mod pipeline;
