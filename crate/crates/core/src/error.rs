use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is numerically singular in {context} (condition estimate {condition:.3e})")]
    Conditioning { context: String, condition: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {stage} at iteration {iteration}, frequency bin {bin}")]
    NonFinite {
        stage: &'static str,
        iteration: usize,
        bin: usize,
    },
}
