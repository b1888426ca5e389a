//! Dense f64 matrices, a reverse-mode tape, and a one-sided Jacobi SVD.
//!
//! Everything downstream (the transformer, the residual-network experiments,
//! the benchmarks) is built on these three pieces. All computation is f64 and
//! strictly deterministic: the same seed produces bit-identical results on a
//! given platform, which the verification suites rely on.

mod array;
mod svd;
mod tape;

pub use array::Array2;
pub use svd::{init_rng, spectral_norm, svd, SvdResult};
pub use tape::{Gradients, NodeId, Tape};

use thiserror::Error;

/// Errors raised by the numeric layer. Shape mismatches are reported as
/// structured errors rather than panics so callers can surface them with
/// context (which module, which step).
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {a:?} and {b:?}")]
    ShapeMismatch {
        op: &'static str,
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {len} items")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: operand must be non-empty")]
    Empty { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("svd on {rows}x{cols} did not converge after {sweeps} sweeps (off-diagonal {off:.3e})")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
        off: f64,
    },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
