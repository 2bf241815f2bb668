use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = CarpetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CarpetError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("geometry error: {}", .0.summary())]
    Geometry(ValidationReport),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no sign change for alpha in [-{cap:e}, {cap:e}] at lambda={lambda}, t={t}; t is numerically at a boundary of (t_under, t_over)")]
    AlphaBracket { lambda: f64, t: f64, cap: f64 },

    #[error("no sign change for lambda in [{lo}, {hi}] at t={t}")]
    LambdaBracket { t: f64, lo: f64, hi: f64 },

    #[error("structural solve failed at t={t}: {source}")]
    StructuralAt {
        t: f64,
        #[source]
        source: Box<CarpetError>,
    },

    #[error("n={n} is below the approximate-square threshold; need n >= {required} (log min a / log max b)")]
    BelowThreshold { n: usize, required: f64 },

    #[error("path visits a zero-probability row at step {step} (map {i}, row {j})")]
    ZeroProbabilityRow { step: usize, i: usize, j: usize },

    #[error("box counting scales invalid: {0}")]
    Scales(String),

    #[error("percolation: {0}")]
    Percolation(String),
}
