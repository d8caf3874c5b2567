use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative density {value:e} at cell {index}")]
    NegativeInput { index: usize, value: f64 },

    #[error("drag solve failed at cell {index} (rhs {rhs:e})")]
    NewtonFail { index: usize, rhs: f64 },

    #[error("viscosity symbol is singular at wavevector {wavevector:?}")]
    SingularSymbol { wavevector: [f64; 3] },

    #[error("viscosity tensor is not coercive (c_est = {c_est:e})")]
    NotCoercive { c_est: f64 },

    #[error("krylov solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    KrylovNoConvergence { iterations: usize, residual: f64 },

    #[error("fixed point iteration is not contracting (iteration {iteration}, factor {factor})")]
    NoContraction { iteration: usize, factor: f64 },

    #[error("fixed point iteration hit the iteration cap {iterations} (last increment {increment:e})")]
    FixedPointCap { iterations: usize, increment: f64 },

    #[error("slab collapsed at t = {t} (slab length {slab:e} after repeated halving)")]
    SlabCollapse { t: f64, slab: f64 },

    #[error("window of {window} cells does not divide extent {extent}")]
    WindowMismatch { window: usize, extent: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("wavelength {wavelength} is resolved by {cells:.2} cells (need at least 4)")]
    UnresolvedWavelength { wavelength: f64, cells: f64 },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
