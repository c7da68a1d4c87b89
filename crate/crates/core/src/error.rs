use thiserror::Error;

use crate::lattice::CellCoord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("coordinate {0} is outside the grid")]
    OutOfBounds(CellCoord),

    #[error("neighborhood degree {0} is outside 2..=6")]
    InvalidDegree(u8),

    #[error("region is empty")]
    EmptyRegion,

    #[error("pattern parse error at row {row} col {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("observer at {0} does not hold a charge")]
    NotCharged(CellCoord),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate rates: Neff*u2 == u1 ({0})")]
    DegenerateRates(f64),

    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
