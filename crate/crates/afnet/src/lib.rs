//! Modulation classification with an adaptive-fusion CNN.
//!
//! The crate is organized as a pipeline:
//! - [`signal`] synthesizes labeled I/Q frames over an AWGN channel and
//!   reads/writes the dataset format;
//! - [`numeric`] is a small deterministic tensor engine with analytic
//!   gradients and Adam;
//! - [`model`] defines the network (first conv, a stack of adaptive-fusion
//!   units, two max pools, GAP head) on top of the numeric ops;
//! - [`train`] holds the losses, the early-stopping stage loop, and the
//!   two-stage confidence-weighted pipeline;
//! - [`eval`] turns a trained model plus a test split into accuracy and
//!   confidence reports with CSV/SVG export;
//! - [`diagnostics`] bundles the self-check suites the CLI exposes.

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
