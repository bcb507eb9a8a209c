//! The common evaluator interface for scale-space kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::Radial;

/// Which construction backs a [`MultiscaleKernel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelBackend {
    ClosedFormDirac,
    ClosedFormSumDirac,
    SpectralTable,
    FittedBasis,
    ProductKernel,
    IntegratedDirac,
    RadialTable,
}

/// A scalar radial kernel on scale x space, `kappa_W(lam, mu, |x - y|)`.
///
/// Implementations must be symmetric in `(lam, mu)` and immutable after
/// construction so they can be shared between worker threads.
pub trait MultiscaleKernel: Send + Sync {
    fn dim(&self) -> usize;

    fn backend(&self) -> KernelBackend;

    /// Value and derivative with respect to `r^2` at squared distance `r2`.
    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial>;

    fn value(&self, lam: f64, mu: f64, r: f64) -> Result<f64> {
        check_distance(r)?;
        Ok(self.radial(lam, mu, r * r)?.value)
    }
}

impl<K: MultiscaleKernel + ?Sized> MultiscaleKernel for Box<K> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn backend(&self) -> KernelBackend {
        (**self).backend()
    }
    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial> {
        (**self).radial(lam, mu, r2)
    }
}

impl<K: MultiscaleKernel + ?Sized> MultiscaleKernel for std::sync::Arc<K> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn backend(&self) -> KernelBackend {
        (**self).backend()
    }
    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial> {
        (**self).radial(lam, mu, r2)
    }
}

pub(crate) fn check_distance(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "distance must be finite and nonnegative, got {r}"
        )))
    }
}

pub(crate) fn check_sq_distance(r2: f64) -> Result<()> {
    if r2 >= 0.0 && r2.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "squared distance must be finite and nonnegative, got {r2}"
        )))
    }
}

/// Squared Euclidean distance, accumulated coordinate-wise.
#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
