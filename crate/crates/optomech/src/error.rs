use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("could not parse configuration: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("closed-loop susceptibility has a pole on the grid at {freq_hz} Hz")]
    PoleOnGrid { freq_hz: f64 },
    #[error("displacement readout gain vanishes at {freq_hz} Hz")]
    ZeroGain { freq_hz: f64 },
    #[error("model spectrum is not positive at {freq_hz} Hz")]
    NonPositivePsd { freq_hz: f64 },
    #[error("spectrum to factor is not strictly positive at bin {index}")]
    NonPositiveSpectrum { index: usize },
    #[error("spectral factorization residual {residual:.3e} exceeds tolerance; refine the grid")]
    FactorizationDiverged { residual: f64 },
    #[error("spectra are defined on different grids")]
    GridMismatch,
    #[error("band [{lo_hz}, {hi_hz}] Hz is not inside the grid [{f_min}, {f_max}] Hz")]
    BandOutOfGrid {
        lo_hz: f64,
        hi_hz: f64,
        f_min: f64,
        f_max: f64,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("record too short: {0}")]
    TooShort(String),
    #[error("band [{lo_hz}, {hi_hz}] Hz contains no spectral bins")]
    EmptyBand { lo_hz: f64, hi_hz: f64 },
    #[error("division by zero at bin {index}")]
    DivideByZero { index: usize },
    #[error("optimizer did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("closed loop is unstable (largest real part of drift eigenvalue {max_real:.3e} s^-1)")]
    UnstableLoop { max_real: f64 },
    #[error("integration step too large: dt·max|eig| = {ratio:.3}")]
    StepTooLarge { ratio: f64 },
    #[error("Riccati equation has no stabilizing solution: {0}")]
    RiccatiNoSolution(String),
    #[error("controller cannot be used here: {0}")]
    Controller(String),
}

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io { .. } => "Io",
            Error::PoleOnGrid { .. } => "PoleOnGrid",
            Error::ZeroGain { .. } => "ZeroGain",
            Error::NonPositivePsd { .. } => "NonPositivePSD",
            Error::NonPositiveSpectrum { .. } => "NonPositiveSpectrum",
            Error::FactorizationDiverged { .. } => "FactorizationDiverged",
            Error::GridMismatch => "GridMismatch",
            Error::BandOutOfGrid { .. } => "BandOutOfGrid",
            Error::Domain(_) => "Domain",
            Error::TooShort(_) => "TooShort",
            Error::EmptyBand { .. } => "EmptyBand",
            Error::DivideByZero { .. } => "DivideByZero",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::UnstableLoop { .. } => "UnstableLoop",
            Error::StepTooLarge { .. } => "StepTooLarge",
            Error::RiccatiNoSolution(_) => "RiccatiNoSolution",
            Error::Controller(_) => "Controller",
        }
    }
}
