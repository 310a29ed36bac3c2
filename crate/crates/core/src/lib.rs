//! Structured Gaussian distributions over image grids.
//!
//! A distribution is a mean map plus a sparse lower-triangular factor `L`
//! of the precision, `Λ = L L^T`, whose non-zeros follow a fixed
//! neighbourhood pattern. This keeps log-density evaluation, sampling and
//! conditioning linear in the pixel count.
//!
//! * [`grid`]: geometry, sparsity pattern and parameter maps
//! * [`linops`]: matrix-free `L`, `L^T`, `Λ`, triangular and Jacobi solves
//! * [`distribution`]: log-density, sampling, covariance rows, activations
//! * [`conditioning`]: conditional means and samples given known pixels
//! * [`fitting`]: maximum-likelihood fits to sample bundles
//! * [`oracle`]: dense reference implementation for small grids
//! * [`synth`]: synthetic sample bundles
//! * [`metrics`]: depth metrics and sparsification curves
//! * [`io`]: GMAP, CSV, PGM and model files
//! * [`crosscheck`], [`scaling`]: oracle cross-checks and timing reports

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioning;
pub mod crosscheck;
pub mod distribution;
pub mod error;
pub mod fitting;
pub mod grid;
pub mod io;
pub mod linops;
pub mod metrics;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod scaling;
pub mod synth;

pub use conditioning::{conditional_mean, conditional_sample, CgOptions, Conditioning, PixelMask};
pub use distribution::{Activation, RowSolver, StructuredGaussian};
pub use error::{Error, Result};
pub use fitting::{fit, FitConfig, FitReport};
pub use grid::{CholeskyMaps, GridMap, GridShape, Offset, Parameterization, SampleBundle, SparsityPattern};
pub use linops::{Direction, JacobiOptions, LinearOperatorView};
