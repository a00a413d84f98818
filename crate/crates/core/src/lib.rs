//! Multi-reference alignment under cyclic shifts.
//!
//! Observations are noisy, randomly shifted copies of an unknown signal. The
//! crate provides the data model, finite-sample estimators (soft EM, hard
//! assignment, momentum SGD), the deterministic population EM operator with
//! its Jacobian and Fourier-block spectra, and Monte-Carlo diagnostics for
//! noise-driven artifacts.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod io;
pub mod model;
pub mod par;
pub mod population;
pub mod signal;
pub mod synth;

pub use error::{MraError, Result};
pub use signal::{Geometry, ShiftIndex, Signal, Spectrum};
