//! Discretized scale interval, scale measures and the per-scale Gaussian
//! kernel family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Queries this close to a ladder end are clamped instead of rejected.
pub const SCALE_CLAMP_TOL: f64 = 1e-12;

/// Subdivision `s1 = r_1 < r_2 < ... < r_{n+1} = s2` of the scale interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScaleLadder {
    nodes: Vec<f64>,
}

impl ScaleLadder {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidLadder("need at least two nodes".into()));
        }
        if !nodes.iter().all(|r| r.is_finite()) {
            return Err(Error::InvalidLadder("non-finite node".into()));
        }
        if nodes[0] <= 0.0 {
            return Err(Error::InvalidLadder(format!(
                "s1 must be positive, got {}",
                nodes[0]
            )));
        }
        if let Some(w) = nodes.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidLadder(format!(
                "nodes must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { nodes })
    }

    /// `intervals` equal-width intervals between `s1` and `s2`.
    pub fn uniform(s1: f64, s2: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidLadder("need at least one interval".into()));
        }
        let h = (s2 - s1) / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|k| s1 + h * k as f64).collect();
        nodes[intervals] = s2;
        Self::new(nodes)
    }

    /// Nodes `r_k = k * step` for `k = first..=last`, computed as `k / (1/step)`
    /// when `1/step` is an integer so that e.g. `r_3 = 0.3` exactly.
    pub fn multiples(step: f64, first: usize, last: usize) -> Result<Self> {
        let inv = 1.0 / step;
        let nodes = if (inv - inv.round()).abs() < 1e-9 {
            (first..=last).map(|k| k as f64 / inv.round()).collect()
        } else {
            (first..=last).map(|k| k as f64 * step).collect()
        };
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Number of nodes (`n + 1`).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of intervals (`n`).
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn s1(&self) -> f64 {
        self.nodes[0]
    }

    pub fn s2(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Width `r_{k+1} - r_k` of interval `k` (0-based).
    pub fn width(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Brings `lam` into `[s1, s2]` if it is outside by at most
    /// [`SCALE_CLAMP_TOL`]; larger excursions are domain errors.
    pub fn clamp(&self, lam: f64) -> Result<f64> {
        let (s1, s2) = (self.s1(), self.s2());
        if lam.is_nan() {
            return Err(Error::Domain("scale is NaN".into()));
        }
        if lam < s1 - SCALE_CLAMP_TOL || lam > s2 + SCALE_CLAMP_TOL {
            return Err(Error::Domain(format!("scale {lam} outside [{s1}, {s2}]")));
        }
        Ok(lam.clamp(s1, s2))
    }

    /// Index `k` of the interval `[r_k, r_{k+1})` holding `lam`; the last node
    /// belongs to the last interval.
    pub fn interval_of(&self, lam: f64) -> usize {
        let n = self.intervals();
        let idx = self.nodes.partition_point(|&r| r <= lam);
        idx.saturating_sub(1).min(n - 1)
    }

    /// Index of the node equal to `lam` up to [`SCALE_CLAMP_TOL`].
    pub fn node_index(&self, lam: f64) -> Option<usize> {
        let idx = self.nodes.partition_point(|&r| r < lam - SCALE_CLAMP_TOL);
        (idx < self.nodes.len() && (self.nodes[idx] - lam).abs() <= SCALE_CLAMP_TOL).then_some(idx)
    }
}

impl TryFrom<Vec<f64>> for ScaleLadder {
    type Error = Error;
    fn try_from(nodes: Vec<f64>) -> Result<Self> {
        Self::new(nodes)
    }
}

impl From<ScaleLadder> for Vec<f64> {
    fn from(l: ScaleLadder) -> Self {
        l.nodes
    }
}

/// The measure `rho` on scales that weights the per-scale norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleMeasure {
    /// `sigma * delta_{s0}`.
    Dirac { s0: f64, sigma: f64 },
    /// `w1 * delta_{s1} + w2 * delta_{s2}`.
    SumDirac { w1: f64, w2: f64 },
    /// `sigma^2` times Lebesgue measure.
    Lebesgue { sigma: f64 },
}

impl ScaleMeasure {
    pub fn validate(&self, ladder: &ScaleLadder) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            ScaleMeasure::Dirac { s0, sigma } => {
                positive("sigma", sigma)?;
                ladder.clamp(s0).map(|_| ())
            }
            ScaleMeasure::SumDirac { w1, w2 } => {
                positive("w1", w1)?;
                positive("w2", w2)
            }
            ScaleMeasure::Lebesgue { sigma } => positive("sigma", sigma),
        }
    }
}

/// How the Gaussian width varies with scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleProfile {
    /// Width `r_k` on all of `[r_k, r_{k+1})`.
    #[default]
    Piecewise,
    /// Width equal to the scale itself.
    Continuous,
}

/// Value and derivative with respect to squared distance of a radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Radial {
    pub value: f64,
    /// `d value / d(r^2)`.
    pub slope: f64,
}

impl std::ops::Add for Radial {
    type Output = Radial;
    fn add(self, o: Radial) -> Radial {
        Radial {
            value: self.value + o.value,
            slope: self.slope + o.slope,
        }
    }
}

impl std::ops::Mul<f64> for Radial {
    type Output = Radial;
    fn mul(self, s: f64) -> Radial {
        Radial {
            value: self.value * s,
            slope: self.slope * s,
        }
    }
}

/// Gaussian kernels `exp(-|z|^2 / (2 w^2))` indexed by scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScaleFamily {
    pub ladder: ScaleLadder,
    pub dim: usize,
    #[serde(default)]
    pub profile: ScaleProfile,
}

impl GaussianScaleFamily {
    pub fn new(ladder: ScaleLadder, dim: usize, profile: ScaleProfile) -> Self {
        Self {
            ladder,
            dim,
            profile,
        }
    }

    pub fn piecewise(ladder: ScaleLadder, dim: usize) -> Self {
        Self::new(ladder, dim, ScaleProfile::Piecewise)
    }

    pub fn continuous(ladder: ScaleLadder, dim: usize) -> Self {
        Self::new(ladder, dim, ScaleProfile::Continuous)
    }

    /// Gaussian width used at scale `lam` (assumed inside the ladder).
    pub fn width_at(&self, lam: f64) -> f64 {
        match self.profile {
            ScaleProfile::Piecewise => self.ladder.node(self.ladder.interval_of(lam)),
            ScaleProfile::Continuous => lam,
        }
    }

    /// `kappa_lam` at squared distance `r2`.
    pub fn kernel_at(&self, lam: f64, r2: f64) -> Radial {
        gaussian(self.width_at(lam), r2)
    }
}

/// `exp(-r2 / (2 w^2))` and its `r2`-derivative.
#[inline]
pub fn gaussian(width: f64, r2: f64) -> Radial {
    let inv = 0.5 / (width * width);
    let value = (-r2 * inv).exp();
    Radial {
        value,
        slope: -inv * value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn experiment_ladder() -> ScaleLadder {
        ScaleLadder::multiples(0.1, 1, 20).unwrap()
    }

    #[test]
    fn ladder_rejects_bad_nodes() {
        assert!(ScaleLadder::new(vec![0.1]).is_err());
        assert!(ScaleLadder::new(vec![0.0, 1.0]).is_err());
        assert!(ScaleLadder::new(vec![0.1, 0.3, 0.3]).is_err());
        assert!(ScaleLadder::new(vec![0.1, f64::NAN]).is_err());
    }

    #[test]
    fn multiples_are_exact_decimals() {
        let l = experiment_ladder();
        assert_eq!(l.len(), 20);
        assert_eq!(l.node(2), 0.3);
        assert_eq!(l.s1(), 0.1);
        assert_eq!(l.s2(), 2.0);
    }

    #[test]
    fn interval_lookup() {
        let l = experiment_ladder();
        assert_eq!(l.interval_of(0.1), 0);
        assert_eq!(l.interval_of(0.15), 0);
        assert_eq!(l.interval_of(0.2), 1);
        assert_eq!(l.interval_of(1.95), 18);
        assert_eq!(l.interval_of(2.0), 18);
        assert_eq!(l.node_index(0.7), Some(6));
        assert_eq!(l.node_index(0.7 + 1e-13), Some(6));
        assert_eq!(l.node_index(0.75), None);
    }

    #[test]
    fn clamping() {
        let l = experiment_ladder();
        assert_eq!(l.clamp(2.0 + 5e-13).unwrap(), 2.0);
        assert_eq!(l.clamp(0.1 - 5e-13).unwrap(), 0.1);
        assert!(l.clamp(2.0 + 1e-9).is_err());
        assert!(l.clamp(f64::NAN).is_err());
    }

    #[test]
    fn family_is_normalized_and_decreasing() {
        let fam = GaussianScaleFamily::piecewise(experiment_ladder(), 2);
        for &lam in &[0.1, 0.55, 1.3, 2.0] {
            assert_eq!(fam.kernel_at(lam, 0.0).value, 1.0);
            let mut prev = 1.0;
            for i in 1..50 {
                let r = 0.05 * i as f64;
                let v = fam.kernel_at(lam, r * r).value;
                assert!(v > 0.0 || r > 1.0);
                assert!(v <= prev && v <= 1.0);
                prev = v;
            }
        }
    }

    #[test]
    fn measure_validation() {
        let l = experiment_ladder();
        assert!(ScaleMeasure::Dirac {
            s0: 0.5,
            sigma: 1.0
        }
        .validate(&l)
        .is_ok());
        assert!(ScaleMeasure::Dirac {
            s0: 3.0,
            sigma: 1.0
        }
        .validate(&l)
        .is_err());
        assert!(ScaleMeasure::Dirac {
            s0: 0.5,
            sigma: 0.0
        }
        .validate(&l)
        .is_err());
        assert!(ScaleMeasure::Lebesgue { sigma: -1.0 }.validate(&l).is_err());
    }
}
