//! Crosstalk of locally addressed Rydberg controlled-Z gates on a
//! neighboring spectator atom, and its suppression by a phase-jumped
//! double pulse followed by a phase-cancellation circuit.

pub mod calibrate;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod metrics;
pub mod optimize;
pub mod plot;
pub mod perturb;
pub mod pulses;
pub mod quadrature;
pub mod sweeps;

pub use error::{Error, Result};
