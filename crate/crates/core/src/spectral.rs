//! Fourier-domain kernel for `rho = sigma^2 * Lebesgue` with piecewise
//! constant Gaussian scale kernels.
//!
//! For every radial frequency the nodal values `h_k = kappa_hat_W(r_k, r_k0, xi)`
//! solve a three-term system. It is assembled in the rescaled unknowns
//! `g_k = chi_k h_k` (`g_{n+1} = chi_n h_{n+1}`) whose couplings are the
//! bounded ratios `psi_k = chi_{k-1} / chi_k`, so nothing overflows even where
//! `chi = 1 / kappa_hat` itself is infinite.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::kernel::{check_sq_distance, KernelBackend, MultiscaleKernel};
use crate::ladder::{Radial, ScaleLadder};
use crate::special::{bessel_j0, bessel_j1, composite_gauss_legendre, csch_coth};

/// Fourier transform of `exp(-|z|^2 / (2 w^2))` in dimension `d`.
#[inline]
pub fn gaussian_spectrum(width: f64, xi: f64, d: usize) -> f64 {
    let w2 = width * width;
    (2.0 * PI * w2).powf(0.5 * d as f64) * (-2.0 * PI * PI * w2 * xi * xi).exp()
}

/// `chi = 1 / kappa_hat_{r_k}(xi)`; infinite once the spectrum underflows.
#[inline]
pub fn chi_gaussian(r_k: f64, xi: f64, d: usize) -> f64 {
    (2.0 * PI * r_k * r_k).powf(-0.5 * d as f64) * (2.0 * r_k * r_k * PI * PI * xi * xi).exp()
}

/// `chi_{k-1} / chi_k` for consecutive Gaussian widths, in closed form.
#[inline]
pub fn chi_ratio(r_prev: f64, r_k: f64, xi: f64, d: usize) -> f64 {
    (r_k / r_prev).powi(d as i32) * (-2.0 * (r_k * r_k - r_prev * r_prev) * PI * PI * xi * xi).exp()
}

/// Radial frequencies at which spectra are tabulated.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    xi: Vec<f64>,
    pub dim: usize,
}

impl SpectralGrid {
    pub const DEFAULT_LEN: usize = 256;

    pub fn new(xi: Vec<f64>, dim: usize) -> Result<Self> {
        if xi.len() < 2 {
            return Err(Error::Domain(
                "spectral grid needs at least two frequencies".into(),
            ));
        }
        if xi[0] < 0.0 || !xi.iter().all(|x| x.is_finite()) || xi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "frequencies must be finite, nonnegative and increasing".into(),
            ));
        }
        Ok(Self { xi, dim })
    }

    pub fn uniform(len: usize, xi_max: f64, dim: usize) -> Result<Self> {
        if len < 2 || xi_max <= 0.0 {
            return Err(Error::Domain(format!(
                "bad uniform grid ({len} points up to {xi_max})"
            )));
        }
        let h = xi_max / (len - 1) as f64;
        Self::new((0..len).map(|j| h * j as f64).collect(), dim)
    }

    /// `J = 256` points on `[0, 4 / (pi s1)]`; the finest Gaussian spectrum is
    /// below `1e-12` of its peak at the top of this range.
    pub fn for_ladder(ladder: &ScaleLadder, dim: usize) -> Self {
        Self::uniform(Self::DEFAULT_LEN, default_xi_max(ladder), dim).expect("valid default grid")
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

pub fn default_xi_max(ladder: &ScaleLadder) -> f64 {
    4.0 / (PI * ladder.s1())
}

/// The `(n+1) x (n+1)` system in `g` for one frequency and source node.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub sigma: f64,
    /// `sub[k]` multiplies `g_{k-1}` in row `k` (`sub[0]` unused).
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    /// `sup[k]` multiplies `g_{k+1}` in row `k` (last entry unused).
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `1 / chi` per node used to map `g` back to `h` (`chi_n` reused at the
    /// last node).
    pub inv_chi: Vec<f64>,
}

/// Assembles the system for source node `k0` (0-based) at frequency `xi`.
pub fn build_tridiagonal(
    ladder: &ScaleLadder,
    sigma: f64,
    xi: f64,
    dim: usize,
    k0: usize,
) -> Result<TridiagonalSystem> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::Domain(format!(
            "frequency must be nonnegative, got {xi}"
        )));
    }
    let len = ladder.len();
    if k0 >= len {
        return Err(Error::Domain(format!("source node {k0} outside 0..{len}")));
    }
    let n = ladder.intervals();
    let r = ladder.nodes();
    // psi[k] = chi_{k-1} / chi_k for 1 <= k < n, psi[n] = 1 (0-based nodes).
    let mut psi = vec![0.0; len];
    for k in 1..n {
        psi[k] = chi_ratio(r[k - 1], r[k], xi, dim);
    }
    psi[n] = 1.0;
    let hyp: Vec<(f64, f64)> = (0..n).map(|k| csch_coth(sigma * ladder.width(k))).collect();

    let mut sub = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut sup = vec![0.0; len];
    for k in 0..len {
        if k < n {
            let (csch, coth) = hyp[k];
            diag[k] -= sigma * coth;
            sup[k] = sigma * psi[k + 1] * csch;
        }
        if k > 0 {
            let (csch, coth) = hyp[k - 1];
            let factor = if k < n { psi[k] } else { 1.0 };
            diag[k] -= sigma * coth * factor;
            sub[k] = sigma * csch;
        }
    }
    let mut rhs = vec![0.0; len];
    rhs[k0] = -1.0;
    let inv_chi = (0..len)
        .map(|k| gaussian_spectrum(r[k.min(n - 1)], xi, dim))
        .collect();
    Ok(TridiagonalSystem {
        sigma,
        sub,
        diag,
        sup,
        rhs,
        inv_chi,
    })
}

impl TridiagonalSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A g - rhs`, computed row by row.
    pub fn residual(&self, g: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut s = self.diag[k] * g[k] - self.rhs[k];
                if k > 0 {
                    s += self.sub[k] * g[k - 1];
                }
                if k + 1 < n {
                    s += self.sup[k] * g[k + 1];
                }
                s
            })
            .collect()
    }

    /// Kernel spectrum at the nodes, `h_k = g_k / chi_k`.
    pub fn kernel_hat(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.inv_chi).map(|(g, e)| g * e).collect()
    }

    fn factor(&self) -> Result<Vec<f64>> {
        // Modified super-diagonal of the Thomas sweep; pivots are recomputed
        // in `solve_with` from these.
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut den = self.diag[0];
        for k in 0..n {
            if k > 0 {
                den = self.diag[k] - self.sub[k] * c[k - 1];
            }
            let scale = self.diag[k]
                .abs()
                .max(self.sub[k].abs())
                .max(self.sup[k].abs());
            if !(den.abs() > 1e-14 * scale) {
                return Err(Error::Solver(format!(
                    "near-singular pivot {den:e} at row {k}"
                )));
            }
            c[k] = self.sup[k] / den;
        }
        Ok(c)
    }

    fn solve_with(&self, c: &[f64], rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut d = vec![0.0; n];
        for k in 0..n {
            let den = if k == 0 {
                self.diag[0]
            } else {
                self.diag[k] - self.sub[k] * c[k - 1]
            };
            let prev = if k == 0 { 0.0 } else { self.sub[k] * d[k - 1] };
            d[k] = (rhs[k] - prev) / den;
        }
        for k in (0..n.saturating_sub(1)).rev() {
            d[k] -= c[k] * d[k + 1];
        }
        d
    }
}

/// Thomas algorithm on the assembled system; returns `g`.
pub fn solve_tridiagonal(system: &TridiagonalSystem) -> Result<Vec<f64>> {
    let c = system.factor()?;
    Ok(system.solve_with(&c, &system.rhs))
}

/// `kappa_hat_W(r_k, r_l, xi)` for all node pairs, row-major `len x len`.
pub fn lebesgue_node_spectrum(
    ladder: &ScaleLadder,
    sigma: f64,
    xi: f64,
    dim: usize,
) -> Result<Vec<f64>> {
    let len = ladder.len();
    let system = build_tridiagonal(ladder, sigma, xi, dim, 0)?;
    let c = system.factor()?;
    let mut out = vec![0.0; len * len];
    let mut rhs = vec![0.0; len];
    for k0 in 0..len {
        rhs.iter_mut().for_each(|v| *v = 0.0);
        rhs[k0] = -1.0;
        let g = system.solve_with(&c, &rhs);
        for (k, h) in system.kernel_hat(&g).into_iter().enumerate() {
            out[k * len + k0] = h;
        }
    }
    Ok(out)
}

/// Nodal spectra on a frequency grid: `value(k, k0, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTable {
    pub ladder: ScaleLadder,
    pub sigma: f64,
    pub grid: SpectralGrid,
    values: Vec<f64>,
}

const SPECTRAL_MAGIC: &[u8; 8] = b"MSKSPEC\0";
const SPECTRAL_VERSION: u32 = 1;

/// Solves the system for every frequency of `grid` and every source node.
/// Fails if a diagonal spectrum dips below `-1e-12` of its peak.
pub fn compute_spectral_table(
    ladder: &ScaleLadder,
    sigma: f64,
    grid: &SpectralGrid,
) -> Result<SpectralTable> {
    let table = SpectralTable::tabulate(ladder, sigma, grid, |xi| {
        lebesgue_node_spectrum(ladder, sigma, xi, grid.dim)
    })?;
    for k in 0..ladder.len() {
        let row = table.row(k, k);
        let peak = row.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if let Some(j) = row.iter().position(|v| *v < -1e-12 * peak) {
            return Err(Error::Solver(format!(
                "negative diagonal spectrum at node {k}, frequency index {j}"
            )));
        }
    }
    Ok(table)
}

impl SpectralTable {
    /// Tabulates any row-major `len x len` nodal spectrum over `grid`.
    /// `sigma` is recorded in the header; it is NaN for non-Lebesgue sources.
    pub fn tabulate(
        ladder: &ScaleLadder,
        sigma: f64,
        grid: &SpectralGrid,
        spectrum: impl Fn(f64) -> Result<Vec<f64>> + Sync,
    ) -> Result<Self> {
        let len = ladder.len();
        let jn = grid.len();
        let per_freq: Vec<Vec<f64>> = grid
            .xi()
            .par_iter()
            .enumerate()
            .map(|(j, &xi)| {
                spectrum(xi)
                    .map_err(|e| Error::Solver(format!("frequency index {j} (xi = {xi}): {e}")))
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; len * len * jn];
        for (j, block) in per_freq.iter().enumerate() {
            if block.len() != len * len {
                return Err(Error::Misuse(format!(
                    "spectrum returned {} values, expected {}",
                    block.len(),
                    len * len
                )));
            }
            for kk in 0..len * len {
                values[kk * jn + j] = block[kk];
            }
        }
        Ok(SpectralTable {
            ladder: ladder.clone(),
            sigma,
            grid: grid.clone(),
            values,
        })
    }
}

impl SpectralTable {
    pub fn nodes(&self) -> usize {
        self.ladder.len()
    }

    pub fn get(&self, k: usize, k0: usize, j: usize) -> f64 {
        self.values[(k * self.nodes() + k0) * self.grid.len() + j]
    }

    /// All frequencies for one node pair.
    pub fn row(&self, k: usize, k0: usize) -> &[f64] {
        let jn = self.grid.len();
        let start = (k * self.nodes() + k0) * jn;
        &self.values[start..start + jn]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(BufWriter::new(std::fs::File::create(path)?));
        w.bytes(SPECTRAL_MAGIC)?;
        w.u32(SPECTRAL_VERSION)?;
        w.u32(self.grid.dim as u32)?;
        w.u32(self.ladder.intervals() as u32)?;
        w.u32(self.grid.len() as u32)?;
        w.f64(self.sigma)?;
        w.f64s(self.ladder.nodes())?;
        w.f64s(self.grid.xi())?;
        w.f64s(&self.values)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(SPECTRAL_MAGIC)?;
        r.version(SPECTRAL_VERSION)?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let jn = r.u32()? as usize;
        let sigma = r.f64()?;
        let ladder = ScaleLadder::new(r.f64s(n + 1)?)?;
        let grid = SpectralGrid::new(r.f64s(jn)?, dim)?;
        let values = r.f64s((n + 1) * (n + 1) * jn)?;
        Ok(Self {
            ladder,
            sigma,
            grid,
            values,
        })
    }

    /// Debug dump: `k,k0,j,xi,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "k,k0,j,xi,value")?;
        let len = self.nodes();
        for k in 0..len {
            for k0 in 0..len {
                for (j, xi) in self.grid.xi().iter().enumerate() {
                    writeln!(f, "{k},{k0},{j},{xi:e},{:e}", self.get(k, k0, j))?;
                }
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Reads the CSV dump back (ladder and sigma must be supplied).
    pub fn read_csv(path: &Path, ladder: ScaleLadder, sigma: f64, dim: usize) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut rows = Vec::new();
        for (i, line) in f.lines().enumerate().skip(1) {
            let line = line?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Format(format!("line {}: expected 5 columns", i + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))
            };
            rows.push((parse(cols[2])? as usize, parse(cols[3])?, parse(cols[4])?));
        }
        let len = ladder.len();
        let jn = rows.len() / (len * len);
        let xi: Vec<f64> = rows[..jn].iter().map(|r| r.1).collect();
        let values = rows.iter().map(|r| r.2).collect();
        Ok(Self {
            ladder,
            sigma,
            grid: SpectralGrid::new(xi, dim)?,
            values,
        })
    }
}

/// `phi_d(z)` with `kappa(r) = C_d int kappa_hat(xi) xi^{d-1} phi_d(2 pi r xi) dxi`,
/// and `phi_d'(z) / z`.
fn radial_basis(dim: usize, z: f64) -> (f64, f64) {
    match dim {
        1 => {
            let sinc = if z.abs() < 1e-8 { 1.0 } else { z.sin() / z };
            (z.cos(), -sinc)
        }
        2 => {
            let j1_over = if z.abs() < 1e-8 {
                0.5
            } else {
                bessel_j1(z) / z
            };
            (bessel_j0(z), -j1_over)
        }
        3 => {
            if z.abs() < 1e-3 {
                let z2 = z * z;
                (1.0 - z2 / 6.0 + z2 * z2 / 120.0, -1.0 / 3.0 + z2 / 30.0)
            } else {
                let (s, c) = z.sin_cos();
                (s / z, (z * c - s) / (z * z * z))
            }
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

fn radial_constant(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked at construction"),
    }
}

/// Real-space kernel from nodal spectra by numerical inverse radial Fourier
/// transform (composite Gauss-Legendre in frequency). Slow; meant as a
/// reference evaluator. Supports `d = 1, 2, 3` and ladder nodes only.
pub struct SpectralKernel {
    ladder: ScaleLadder,
    dim: usize,
    backend: KernelBackend,
    xi: Vec<f64>,
    weights: Vec<f64>,
    /// `spectra[q]` is the `len x len` nodal spectrum at `xi[q]`.
    spectra: Vec<Vec<f64>>,
}

impl SpectralKernel {
    /// `spectrum(xi)` returns the row-major nodal spectrum at `xi`.
    pub fn new(
        ladder: ScaleLadder,
        dim: usize,
        xi_max: f64,
        backend: KernelBackend,
        spectrum: impl Fn(f64) -> Result<Vec<f64>> + Sync,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Misuse(format!(
                "inverse radial transform implemented for d <= 3, got {dim}"
            )));
        }
        let (xi, weights) = composite_gauss_legendre(0.0, xi_max, 96, 16);
        let spectra = xi
            .par_iter()
            .map(|&x| spectrum(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ladder,
            dim,
            backend,
            xi,
            weights,
            spectra,
        })
    }

    /// The Lebesgue-measure kernel on its default frequency range.
    pub fn lebesgue(ladder: ScaleLadder, sigma: f64, dim: usize) -> Result<Self> {
        let xi_max = default_xi_max(&ladder);
        let l = ladder.clone();
        Self::new(
            ladder,
            dim,
            xi_max,
            KernelBackend::SpectralTable,
            move |xi| lebesgue_node_spectrum(&l, sigma, xi, dim),
        )
    }

    fn index(&self, lam: f64, mu: f64) -> Result<(usize, usize)> {
        match (self.ladder.node_index(lam), self.ladder.node_index(mu)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::ScaleLookup { lam, mu }),
        }
    }
}

impl MultiscaleKernel for SpectralKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend(&self) -> KernelBackend {
        self.backend
    }

    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial> {
        check_sq_distance(r2)?;
        let (a, b) = self.index(lam, mu)?;
        let len = self.ladder.len();
        let r = r2.sqrt();
        let d = self.dim;
        let mut value = 0.0;
        let mut slope = 0.0;
        for ((xi, w), spec) in self.xi.iter().zip(&self.weights).zip(&self.spectra) {
            let s = spec[a * len + b];
            let (phi, dphi) = radial_basis(d, 2.0 * PI * r * xi);
            let base = w * s * xi.powi(d as i32 - 1);
            value += base * phi;
            slope += base * 2.0 * PI * PI * xi * xi * dphi;
        }
        let c = radial_constant(d);
        Ok(Radial {
            value: c * value,
            slope: c * slope,
        })
    }
}

/// Radial profiles of a [`SpectralKernel`] sampled at `r_i = i dr` for every
/// node pair and interpolated by cubic Hermite segments in `r^2`.
///
/// Each sample is the same positive-weight quadrature of the nodal spectra
/// as [`SpectralKernel`], so the sampled kernel inherits their positivity;
/// only the interpolation between samples is approximate. Beyond `r_max`
/// the kernel is taken to be zero.
pub struct TabulatedKernel {
    ladder: ScaleLadder,
    dim: usize,
    dr: f64,
    /// Per unordered node pair `(k <= l)`: `(value, slope)` at every sample.
    profiles: Vec<Vec<(f64, f64)>>,
}

impl TabulatedKernel {
    /// Default sampling: `dr = s1 / 10` out to `r_max = 8 s2`.
    pub fn from_spectral(kernel: &SpectralKernel) -> Result<Self> {
        let dr = kernel.ladder.s1() / 10.0;
        let r_max = 8.0 * kernel.ladder.s2();
        Self::with_sampling(kernel, dr, (r_max / dr).ceil() as usize + 1)
    }

    pub fn with_sampling(kernel: &SpectralKernel, dr: f64, samples: usize) -> Result<Self> {
        if !(dr > 0.0 && dr.is_finite()) || samples < 2 {
            return Err(Error::Domain(format!(
                "bad radial sampling ({samples} samples, step {dr})"
            )));
        }
        let d = kernel.dim;
        let c = radial_constant(d);
        // Bessel factors are shared by all pairs.
        let basis: Vec<Vec<(f64, f64)>> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let r = i as f64 * dr;
                kernel
                    .xi
                    .iter()
                    .zip(&kernel.weights)
                    .map(|(&xi, &w)| {
                        let (phi, dphi) = radial_basis(d, 2.0 * PI * r * xi);
                        let base = c * w * xi.powi(d as i32 - 1);
                        (base * phi, base * 2.0 * PI * PI * xi * xi * dphi)
                    })
                    .collect()
            })
            .collect();
        let len = kernel.ladder.len();
        let pairs: Vec<(usize, usize)> = (0..len)
            .flat_map(|k| (k..len).map(move |l| (k, l)))
            .collect();
        let profiles = pairs
            .par_iter()
            .map(|&(k, l)| {
                let spec: Vec<f64> = kernel.spectra.iter().map(|s| s[k * len + l]).collect();
                basis
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&spec)
                            .fold((0.0, 0.0), |(v, sl), ((b, db), s)| (v + b * s, sl + db * s))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            ladder: kernel.ladder.clone(),
            dim: d,
            dr,
            profiles,
        })
    }

    /// The Lebesgue-measure kernel tabulated with the default sampling.
    pub fn lebesgue(ladder: ScaleLadder, sigma: f64, dim: usize) -> Result<Self> {
        Self::from_spectral(&SpectralKernel::lebesgue(ladder, sigma, dim)?)
    }

    pub fn step(&self) -> f64 {
        self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.dr * (self.profiles[0].len() - 1) as f64
    }

    fn pair_index(&self, a: usize, b: usize) -> usize {
        let (k, l) = if a <= b { (a, b) } else { (b, a) };
        let len = self.ladder.len();
        k * len - k * k.saturating_sub(1) / 2 + l - k
    }
}

impl MultiscaleKernel for TabulatedKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend(&self) -> KernelBackend {
        KernelBackend::RadialTable
    }

    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial> {
        check_sq_distance(r2)?;
        let (a, b) = match (self.ladder.node_index(lam), self.ladder.node_index(mu)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::ScaleLookup { lam, mu }),
        };
        let prof = &self.profiles[self.pair_index(a, b)];
        let i = (r2.sqrt() / self.dr) as usize;
        if i + 1 >= prof.len() {
            return Ok(Radial::default());
        }
        let s0 = (i as f64 * self.dr).powi(2);
        let h = ((i + 1) as f64 * self.dr).powi(2) - s0;
        let t = (r2 - s0) / h;
        let ((v0, m0), (v1, m1)) = (prof[i], prof[i + 1]);
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * v0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (3.0 * t2 - 2.0 * t3) * v1
            + (t3 - t2) * h * m1;
        let slope = ((6.0 * t2 - 6.0 * t) * (v0 - v1)
            + (3.0 * t2 - 4.0 * t + 1.0) * h * m0
            + (3.0 * t2 - 2.0 * t) * h * m1)
            / h;
        Ok(Radial { value, slope })
    }
}
