//! Personalized video highlight detection.
//!
//! Frames of a new video are scored against the user's previously highlighted
//! clips: a temporal U-shaped convolutional encoder produces per-frame context
//! embeddings, each frame attends over the user's history to form a
//! frame-specific preference, that preference is blended with a learned
//! generic preference, and the blend's dot product with the frame is its
//! highlight score. Training uses a bi-directional contrastive objective with
//! hard-negative mining.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod featureio;
mod io_util;
pub mod model;
pub mod objective;
pub mod preference;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use io_util::atomic_write;
