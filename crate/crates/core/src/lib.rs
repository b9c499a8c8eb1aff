//! Distributional Kaplan-Meier estimation for events defined by a continuous
//! outcome exceeding a cut-point.
//!
//! The survival factor at each time is the probability of staying at or below
//! the cut-point under a skew-normal law fitted to the outcome values of the
//! risk set; the factors are chained as in the product-limit estimator. The crate also provides the
//! classical Kaplan-Meier estimate, delta-method and bootstrap standard
//! errors, and a Monte Carlo harness for comparing the two estimators.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod format;
pub mod optim;
pub mod seeds;
pub mod simulation;
pub mod skewnormal;
pub mod special;
pub mod survival;

pub use error::{Error, ErrorKind, Result};
