//! Simulation and estimation engines for total curvatures of self-similar
//! random fractals: model definitions and Galton-Watson code trees, spectral
//! constants, exact interval geometry in dimension 1, raster geometry with an
//! exact distance transform in dimension 2, the rescaled/averaged limit
//! estimators, and large-parallel-set checks.

pub mod appendix;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod interval;
pub mod limits;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tree;

pub use error::{Error, Result};
pub use model::{check_osc, BaseSet, OffspringAtom, OscReport, RifsModel, Similarity};
pub use spectral::{spectral_report, LatticeClass, SpectralReport};
pub use tree::{sample_tree, CodeTree, StopRule};
