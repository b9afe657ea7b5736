//! Fairness-aware calibration toolkit.
//!
//! Trains small ReLU perceptrons under group-wise calibration losses,
//! post-processes them with one softmax temperature per sensitive group, and
//! reports calibration (ECE) and proportional-equality fairness side by side.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod postproc;

pub use error::{Error, Result};
