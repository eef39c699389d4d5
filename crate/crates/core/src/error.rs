use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("undefined quantity: {0}")]
    Undefined(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, LabError::Divergence(_) | LabError::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        Err(LabError::LabelOutOfRange { label, classes })
    } else {
        Ok(())
    }
}
