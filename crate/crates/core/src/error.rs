//! Shared error type for all engines.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model definition (bad file, bad key, bad value).
    #[error("model error: {0}")]
    Model(String),

    /// Offspring law with mean offspring number <= 1; nothing to simulate.
    #[error("subcritical offspring law: mean offspring {mean} <= 1")]
    Subcritical { mean: f64 },

    /// Open set condition check failed for at least one atom.
    #[error("open set condition violated: {0}")]
    OscViolation(String),

    /// A cover or tree is not refined enough for the requested radius.
    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    /// An epsilon/radius grid is too sparse for the requested quadrature.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    /// Generic precondition violation on an engine gate.
    #[error("gate violation: {0}")]
    Gate(String),

    /// Distance transform requested on a mask with no foreground pixels.
    #[error("empty mask: no foreground pixels")]
    EmptyMask,

    /// The root line of the sampled tree is extinct.
    #[error("empty realization: root line extinct")]
    EmptyRealization,

    /// Lattice classification cannot be decided at the given tolerance.
    #[error("ambiguous lattice classification: {0}")]
    AmbiguousLattice(String),

    /// Rescaling exponent D - k vanishes; a fractal-curvature reading is not meaningful.
    #[error("non-fractal scaling exponent: {0}")]
    NonFractal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
