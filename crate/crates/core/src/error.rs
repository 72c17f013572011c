use thiserror::Error;

#[derive(Debug, Error)]
pub enum VplError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("Neumann source is not neutral (imbalance {imbalance:e})")]
    NotNeutral { imbalance: f64 },
    #[error("degenerate chart (det A^-1 = {0:e})")]
    DegenerateChart(f64),
    #[error("step {step} failed: {reason}")]
    StepFailed { step: u64, reason: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VplError>;

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(VplError::NonFinite { index }),
        None => Ok(()),
    }
}
