pub type Result<T, E = RefineError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error(transparent)]
    Core(#[from] mocap_core::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("residuals are not finite at the starting point")]
    NonFiniteStart,

    #[error("nothing to fit: {0}")]
    Unfittable(String),

    #[error("jacobian entry ({row}, {col}) lies outside the declared band of width {band}")]
    OutsideBand { row: usize, col: usize, band: usize },
}
