//! Numerical core of geoflow: fields on a periodic grid, Fourier-diagonal
//! metric operators, EPDiff geodesic shooting, shooting-based LDDMM
//! registration, evaluation metrics and dataset/file I/O.
//!
//! All positions live on the unit torus `[0, 1)^d`; a transform is stored as
//! a displacement `u` with `phi(x) = x + u(x)`.

pub mod data_io;
pub mod epdiff;
pub mod error;
pub mod field;
pub mod lddmm;
pub mod metrics;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{ChannelField, Grid, JacobianField, ScalarField, Transform, VectorField};
pub use spectral::{FftPlan, FourierMultiplier, SpectralKernel};
