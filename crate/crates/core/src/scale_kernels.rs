//! Closed-form scale-space kernels built from a Gaussian scale family.
//!
//! All scale integrals are of the form `int_{lam1}^{lam2} kappa_mu(r) dmu`
//! where `kappa_mu` is the Gaussian of the family at scale `mu`. For the
//! continuous family this has an erf closed form; for the piecewise family it
//! is a weighted sum over ladder intervals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_distance, check_sq_distance, KernelBackend, MultiscaleKernel};
use crate::ladder::{gaussian, GaussianScaleFamily, Radial, ScaleMeasure, ScaleProfile};
use crate::special::{erf, gauss_legendre};

/// `int_{lam1}^{lam2} exp(-c / mu^2) dmu` with `c = r^2 / 2`.
pub fn gauss_scale_integral(
    family: &GaussianScaleFamily,
    lam1: f64,
    lam2: f64,
    r: f64,
) -> Result<f64> {
    check_distance(r)?;
    let (lam1, lam2) = ordered_bounds(family, lam1, lam2)?;
    Ok(gauss_integral(lam1, lam2, r * r).value)
}

/// Interval-sum integral of the piecewise-constant family.
pub fn piecewise_scale_integral(
    family: &GaussianScaleFamily,
    lam1: f64,
    lam2: f64,
    r: f64,
) -> Result<f64> {
    check_distance(r)?;
    let (lam1, lam2) = ordered_bounds(family, lam1, lam2)?;
    Ok(piecewise_integral(family, lam1, lam2, r * r).value)
}

fn ordered_bounds(family: &GaussianScaleFamily, lam1: f64, lam2: f64) -> Result<(f64, f64)> {
    let lam1 = family.ladder.clamp(lam1)?;
    let lam2 = family.ladder.clamp(lam2)?;
    if lam1 > lam2 {
        return Err(Error::Domain(format!(
            "reversed integration bounds {lam1} > {lam2}"
        )));
    }
    Ok((lam1, lam2))
}

/// Scale integral of the family between `lam1 <= lam2` (unchecked), with the
/// derivative in `r^2`.
pub(crate) fn scale_integral(
    family: &GaussianScaleFamily,
    lam1: f64,
    lam2: f64,
    r2: f64,
) -> Radial {
    match family.profile {
        ScaleProfile::Piecewise => piecewise_integral(family, lam1, lam2, r2),
        ScaleProfile::Continuous => gauss_integral(lam1, lam2, r2),
    }
}

/// `int_b^a exp(-c t^2) dt` for `0 < b <= a`.
fn gaussian_tail_integral(c: f64, a: f64, b: f64) -> f64 {
    let sc = c.sqrt();
    let (ua, ub) = (sc * a, sc * b);
    if ua < 1e-3 {
        // Taylor series in c; the fourth term is below 1e-19 relative here.
        let mut sum = 0.0;
        let mut coef = 1.0;
        for k in 0..4 {
            let p = 2 * k as i32 + 1;
            sum += coef * (a.powi(p) - b.powi(p)) / p as f64;
            coef *= -c / (k as f64 + 1.0);
        }
        return sum;
    }
    let diff = if ub > 0.5 {
        libm::erfc(ub) - libm::erfc(ua)
    } else {
        erf(ua) - erf(ub)
    };
    0.5 * PI.sqrt() / sc * diff
}

fn gauss_integral(lam1: f64, lam2: f64, r2: f64) -> Radial {
    if lam1 == lam2 {
        return Radial::default();
    }
    let c = 0.5 * r2;
    if c == 0.0 {
        return Radial {
            value: lam2 - lam1,
            slope: -0.5 * (1.0 / lam1 - 1.0 / lam2),
        };
    }
    let (a, b) = (1.0 / lam1, 1.0 / lam2);
    let m = gaussian_tail_integral(c, a, b);
    let value = lam2 * (-c * b * b).exp() - lam1 * (-c * a * a).exp() - 2.0 * c * m;
    Radial {
        value,
        slope: -0.5 * m,
    }
}

fn piecewise_integral(family: &GaussianScaleFamily, lam1: f64, lam2: f64, r2: f64) -> Radial {
    if lam1 >= lam2 {
        return Radial::default();
    }
    let ladder = &family.ladder;
    let k1 = ladder.interval_of(lam1);
    let k2 = ladder.interval_of(lam2);
    let mut acc = Radial::default();
    for k in k1..=k2 {
        let lo = if k == k1 { lam1 } else { ladder.node(k) };
        let hi = if k == k2 { lam2 } else { ladder.node(k + 1) };
        if hi > lo {
            acc = acc + gaussian(ladder.node(k), r2) * (hi - lo);
        }
    }
    acc
}

/// Kernel for `rho = sigma * delta_{s0}`:
/// `(1/sigma) (kappa_{s0} + |int_{s0}^{clamp(lam; s0, lam0)} kappa_mu dmu|)`.
///
/// The leading term carries the same `1/sigma` as the integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracKernel {
    pub family: GaussianScaleFamily,
    pub s0: f64,
    pub sigma: f64,
}

impl DiracKernel {
    pub fn new(family: GaussianScaleFamily, measure: ScaleMeasure) -> Result<Self> {
        match measure {
            ScaleMeasure::Dirac { s0, sigma } => {
                measure.validate(&family.ladder)?;
                let s0 = family.ladder.clamp(s0)?;
                Ok(Self { family, s0, sigma })
            }
            other => Err(Error::Misuse(format!(
                "Dirac kernel requested for measure {other:?}"
            ))),
        }
    }
}

impl MultiscaleKernel for DiracKernel {
    fn dim(&self) -> usize {
        self.family.dim
    }

    fn backend(&self) -> KernelBackend {
        KernelBackend::ClosedFormDirac
    }

    fn radial(&self, lam: f64, lam0: f64, r2: f64) -> Result<Radial> {
        check_sq_distance(r2)?;
        let lam = self.family.ladder.clamp(lam)?;
        let lam0 = self.family.ladder.clamp(lam0)?;
        let s0 = self.s0;
        let end = lam.clamp(s0.min(lam0), s0.max(lam0));
        let lead = self.family.kernel_at(s0, r2);
        let tail = scale_integral(&self.family, s0.min(end), s0.max(end), r2);
        Ok((lead + tail) * (1.0 / self.sigma))
    }
}

/// Convenience wrapper over [`DiracKernel`] for a single evaluation.
pub fn dirac_kernel(
    measure: ScaleMeasure,
    family: &GaussianScaleFamily,
    lam: f64,
    lam0: f64,
    r: f64,
) -> Result<f64> {
    DiracKernel::new(family.clone(), measure)?.value(lam, lam0, r)
}

/// Fourier transform of the kernel for `rho = delta_{s1} + delta_{s2}`:
///
/// `(1 + chi2 (X(s2) - X(max))) (1 + chi1 X(min)) / (chi1 + chi2 + chi1 chi2 X(s2))`
///
/// with `X(lam) = int_{s1}^{lam} 1/chi_mu dmu`. Evaluated after dividing
/// through by `chi1 chi2`, so infinite `chi` (fully decayed spectra) is fine.
pub fn sum_dirac_kernel_hat(
    chi_s1: f64,
    chi_s2: f64,
    xfun: impl Fn(f64) -> f64,
    s2: f64,
    lam: f64,
    lam0: f64,
) -> f64 {
    let e1 = 1.0 / chi_s1;
    let e2 = 1.0 / chi_s2;
    let x2 = xfun(s2);
    let xmax = xfun(lam.max(lam0));
    let xmin = xfun(lam.min(lam0));
    (e2 + x2 - xmax) * (e1 + xmin) / (e1 + e2 + x2)
}

/// Spectrum of the `w1 delta_{s1} + w2 delta_{s2}` kernel at every pair of
/// ladder nodes (row-major, `len x len`).
pub fn sum_dirac_node_spectrum(
    family: &GaussianScaleFamily,
    w1: f64,
    w2: f64,
    xi: f64,
) -> Vec<f64> {
    let ladder = &family.ladder;
    let d = family.dim;
    let spec = |width: f64| crate::spectral::gaussian_spectrum(width, xi, d);
    // Cumulative X at the nodes.
    let xs: Vec<f64> = match family.profile {
        ScaleProfile::Piecewise => {
            let mut acc = 0.0;
            let mut out = vec![0.0];
            for k in 0..ladder.intervals() {
                acc += ladder.width(k) * spec(ladder.node(k));
                out.push(acc);
            }
            out
        }
        ScaleProfile::Continuous => {
            let (x, w) = gauss_legendre(24);
            let mut acc = 0.0;
            let mut out = vec![0.0];
            for k in 0..ladder.intervals() {
                let (lo, hi) = (ladder.node(k), ladder.node(k + 1));
                let half = 0.5 * (hi - lo);
                acc += x
                    .iter()
                    .zip(&w)
                    .map(|(t, wt)| wt * half * spec(lo + half * (t + 1.0)))
                    .sum::<f64>();
                out.push(acc);
            }
            out
        }
    };
    let chi1 = w1 / spec(family.width_at(ladder.s1()));
    let chi2 = w2 / spec(family.width_at(ladder.s2()));
    let m = ladder.len();
    let mut out = vec![0.0; m * m];
    for k in 0..m {
        for l in 0..m {
            let x_of = |lam: f64| xs[ladder.node_index(lam).expect("ladder node")];
            out[k * m + l] = sum_dirac_kernel_hat(
                chi1,
                chi2,
                x_of,
                ladder.s2(),
                ladder.node(k),
                ladder.node(l),
            );
        }
    }
    out
}

/// Kernel on scales used by [`ProductKernel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleKernel {
    /// `exp(-(lam - mu)^2 / (2 l^2))`.
    Gaussian { length: f64 },
    /// `min(lam, mu)` (Brownian covariance; positive for positive scales).
    Min,
}

impl ScaleKernel {
    pub fn eval(&self, lam: f64, mu: f64) -> f64 {
        match *self {
            ScaleKernel::Gaussian { length } => {
                (-(lam - mu).powi(2) / (2.0 * length * length)).exp()
            }
            ScaleKernel::Min => lam.min(mu),
        }
    }
}

/// Spatial warp `h(lam, x)` applied before the spatial kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warp {
    Identity,
    /// `x / lam`.
    InverseScale,
}

impl Warp {
    pub fn apply(&self, lam: f64, x: &[f64]) -> Vec<f64> {
        match self {
            Warp::Identity => x.to_vec(),
            Warp::InverseScale => x.iter().map(|v| v / lam).collect(),
        }
    }
}

/// `K_scale(lam, mu) * K_space(h(lam, x), h(mu, y))` for arbitrary kernels.
pub fn product_kernel(
    k_scale: impl Fn(f64, f64) -> f64,
    k_space: impl Fn(&[f64], &[f64]) -> f64,
    h: impl Fn(f64, &[f64]) -> Vec<f64>,
    lam: f64,
    mu: f64,
    x: &[f64],
    y: &[f64],
) -> f64 {
    k_scale(lam, mu) * k_space(&h(lam, x), &h(mu, y))
}

/// Separable-by-warp product kernel with a unit Gaussian in space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductKernel {
    pub dim: usize,
    pub scale_kernel: ScaleKernel,
    /// Width of the Gaussian applied to the warped coordinates.
    pub spatial_width: f64,
    pub warp: Warp,
}

impl ProductKernel {
    /// Evaluation at explicit points; valid for every warp.
    pub fn eval_points(&self, lam: f64, mu: f64, x: &[f64], y: &[f64]) -> f64 {
        let w = self.spatial_width;
        product_kernel(
            |a, b| self.scale_kernel.eval(a, b),
            |p, q| gaussian(w, crate::kernel::sq_dist(p, q)).value,
            |s, p| self.warp.apply(s, p),
            lam,
            mu,
            x,
            y,
        )
    }
}

impl MultiscaleKernel for ProductKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend(&self) -> KernelBackend {
        KernelBackend::ProductKernel
    }

    /// Only the identity warp is translation invariant; other warps must go
    /// through [`ProductKernel::eval_points`].
    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial> {
        check_sq_distance(r2)?;
        if self.warp != Warp::Identity {
            return Err(Error::Misuse("warped product kernel is not radial".into()));
        }
        Ok(gaussian(self.spatial_width, r2) * self.scale_kernel.eval(lam, mu))
    }
}

/// The Dirac kernel integrated over its atom location `s0` with
/// `sigma = s2 - s1`: a weighted scale integral with weight
/// `1 + [mu <= min](mu - s1)/L + [mu >= max](s2 - mu)/L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedDiracKernel {
    pub family: GaussianScaleFamily,
}

impl IntegratedDiracKernel {
    pub fn new(family: GaussianScaleFamily) -> Self {
        Self { family }
    }
}

impl MultiscaleKernel for IntegratedDiracKernel {
    fn dim(&self) -> usize {
        self.family.dim
    }

    fn backend(&self) -> KernelBackend {
        KernelBackend::IntegratedDirac
    }

    fn radial(&self, lam: f64, lam0: f64, r2: f64) -> Result<Radial> {
        check_sq_distance(r2)?;
        let ladder = &self.family.ladder;
        let lam = ladder.clamp(lam)?;
        let lam0 = ladder.clamp(lam0)?;
        let (s1, s2) = (ladder.s1(), ladder.s2());
        let len = s2 - s1;
        let (lo, hi) = (lam.min(lam0), lam.max(lam0));
        // Indicator terms are fixed per piece (decided at the midpoint), the
        // remaining weight is linear in mu.
        let weight = |mid: f64, mu: f64| {
            let mut w = 1.0;
            if mid < lo {
                w += (mu - s1) / len;
            }
            if mid > hi {
                w += (s2 - mu) / len;
            }
            w
        };
        // Breakpoints: ladder nodes plus the two weight kinks.
        let mut cuts: Vec<f64> = ladder.nodes().to_vec();
        cuts.extend([lo, hi]);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup();
        let mut acc = Radial::default();
        match self.family.profile {
            ScaleProfile::Piecewise => {
                // Kernel constant and weight linear on each piece: midpoint is exact.
                for w in cuts.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let mid = 0.5 * (a + b);
                    acc = acc
                        + gaussian(self.family.width_at(mid), r2) * ((b - a) * weight(mid, mid));
                }
            }
            ScaleProfile::Continuous => {
                let (x, wq) = gauss_legendre(24);
                for w in cuts.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                    for (t, wt) in x.iter().zip(&wq) {
                        let mu = mid + half * t;
                        acc = acc + gaussian(mu, r2) * (wt * half * weight(mid, mu));
                    }
                }
            }
        }
        Ok(acc)
    }
}

/// Single evaluation of [`IntegratedDiracKernel`].
pub fn integrated_dirac_kernel(
    family: &GaussianScaleFamily,
    lam: f64,
    lam0: f64,
    r: f64,
) -> Result<f64> {
    IntegratedDiracKernel::new(family.clone()).value(lam, lam0, r)
}
