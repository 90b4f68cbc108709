use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, calibration and experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid atom index {0} (expected 1..={1})")]
    InvalidAtom(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside domain [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("reversed integration limits: t0 = {t0} > t = {t}")]
    ReversedLimits { t0: f64, t: f64 },

    #[error("integrator did not converge: estimated error {estimate:.3e} exceeds tolerance {tolerance:.3e}")]
    NotConverged { estimate: f64, tolerance: f64 },

    #[error("calibration failed: best infidelity {best_infidelity:.3e} after {starts} starts (best pulse {best_pulse:?})")]
    CalibrationFailed { best_infidelity: f64, starts: usize, best_pulse: Box<crate::pulses::PulseParams> },

    #[error("reference amplitude {amplitude:.3e} of {state} below 0.5; phase is ill-defined")]
    IllDefinedPhase { state: String, amplitude: f64 },

    #[error("missing calibration: {0}")]
    MissingCalibration(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
