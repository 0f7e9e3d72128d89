//! Design of multi-arm clinical trials with a shared control arm.
//!
//! The crate computes operating characteristics of designs under a range
//! of multiple comparison corrections, finds the sample size that controls
//! a chosen type of power, and optimises allocation ratios.

pub mod corrections;
pub mod design;
pub mod error;
pub mod mvn;
pub mod normal;
pub mod opchar;
pub mod outcome;
pub mod report;
pub mod roots;
pub mod scenario;

#[cfg(feature = "server")]
pub mod service;

pub use error::{Error, FieldError, Result};
