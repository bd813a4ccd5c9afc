//! Multi-passage reading comprehension: a shared encoder feeding a pointer
//! network for answer boundaries, a per-word content head, and cross-passage
//! verification of the per-passage answer candidates. The final answer
//! maximizes the product of the three scores.

pub mod boundary;
pub mod content;
pub mod data;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod verification;

pub use error::{Error, Result};
