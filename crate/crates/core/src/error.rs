use thiserror::Error;

use crate::sequence::Violation;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |H - H^dagger| = {0:e}")]
    NonHermitian(f64),

    #[error("quadrupole fit failed: {0}")]
    QuadrupoleFit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid pulse sequence: {}", format_violations(.0))]
    InvalidSequence(Vec<Violation>),

    #[error("sample rate {sample_rate} S/s is below twice the highest tone {frequency} Hz")]
    Nyquist { sample_rate: f64, frequency: f64 },

    #[error("noise trajectory covers {available} s but {requested} s were requested")]
    TrajectoryTooShort { available: f64, requested: f64 },

    #[error("defect sphere holds only {expected:.2} defects on average; increase max_radius_nm")]
    TooFewDefects { expected: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("phase undefined for a zero-amplitude peak")]
    UndefinedPhase,

    #[error("concentration inference needs a calibration")]
    MissingCalibration,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
