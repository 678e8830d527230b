//! Neural outfit recommendation with abstractive comment generation.
//!
//! A shared two-layer CNN encodes a top and a bottom image into region
//! features; mutual attention lets each item's global appearance weight the
//! other item's regions. The resulting item representations feed a matching
//! decoder that scores the pair, and a GRU decoder with cross-modality
//! attention over both images writes a comment. Both heads train jointly.

pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod generator;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;
mod util;

pub use error::{NorError, Result};
pub use util::write_atomic;
