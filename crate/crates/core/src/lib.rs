//! Lightweight activity recognition from tri-axial accelerometer windows.
//!
//! A two-layer peephole LSTM (30 units per layer by default) reads a window
//! of `x, y, z` samples, pools the second layer's hidden outputs over time
//! and classifies the window into one of six activities with a softmax head.
//! Training uses mean cross-entropy, L2 weight decay and Adam; gradients
//! come from hand-written backpropagation through time.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model_file;
pub mod numerics;
pub mod recurrent;
pub mod reference;
pub mod training;

pub use error::{HarError, Result};
