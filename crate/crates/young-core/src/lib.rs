//! Construction and verification of Young structures for partially
//! hyperbolic maps with mostly contracting central direction.

pub mod error;
pub mod config;
pub mod filtration;
pub mod geometry;
pub mod leaf;
pub mod maps;
pub mod orbit;
pub mod partition;
pub mod pipeline;
pub mod plot;
pub mod rectangles;
pub mod refinement;
pub mod stats;
pub mod tail;
pub mod verify;

pub use error::{Result, YoungError};
