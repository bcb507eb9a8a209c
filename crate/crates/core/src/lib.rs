//! Multiscale LDDMM landmark registration.
//!
//! The crate builds reproducing kernels on scale x space, fits them to a
//! positive Gaussian basis, and solves the landmark optimal-control problem
//! whose deformations vary continuously across scales.
//!
//! - [`ladder`] / [`scale_kernels`]: scale discretization and closed-form kernels.
//! - [`spectral`]: Fourier-domain kernel for the Lebesgue scale measure.
//! - [`fit`]: minimax LP fit onto a Gaussian basis with pairwise positivity.
//! - [`flow`]: landmark flows, grid transport, inverses, residuals, log-Jacobians.
//! - [`registration`]: objective, adjoint gradient and L-BFGS.
//! - [`experiment`]: configuration, shape generators and the CLI commands.

mod binio;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod flow;
pub mod kernel;
pub mod ladder;
pub mod registration;
pub mod scale_kernels;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
pub use kernel::{KernelBackend, MultiscaleKernel};
pub use ladder::{GaussianScaleFamily, Radial, ScaleLadder, ScaleMeasure, ScaleProfile};
