use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate vector at row {row}: norm {norm:e} is not above the floor")]
    DegenerateVector { row: usize, norm: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid margin: {0}")]
    InvalidMargin(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    #[error("label {label} at sample {sample} is out of range for {classes} classes")]
    InvalidLabel {
        sample: usize,
        label: usize,
        classes: usize,
    },

    #[error("forward output does not match the inputs of this backward pass")]
    StaleForward,

    #[error("class centers still collide after {attempts} resampling attempts")]
    CenterCollision { attempts: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
}
