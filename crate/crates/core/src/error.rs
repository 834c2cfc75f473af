use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid size {0} must be a positive even integer")]
    InvalidGridSize(usize),

    #[error("padding factor must be at least 2, got {0}")]
    InvalidPad(usize),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("cutoff exceeds resolved band: N = {cutoff} but M/2 = {half}")]
    CutoffTooLarge { cutoff: usize, half: usize },

    #[error("incompatible grids: {left} modes vs {right} modes")]
    GridMismatch { left: usize, right: usize },

    #[error("damping rate must be positive, got {0}")]
    InvalidDamping(f64),

    #[error("field has {energy:e} of its energy at |k| <= {cutoff}; expected a pure high-frequency field")]
    LowFrequencyContent { cutoff: usize, energy: f64 },

    #[error("norm {norm:e} exceeded blow-up guard {limit:e} at t = {t}")]
    BlowUp { t: f64, norm: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}
