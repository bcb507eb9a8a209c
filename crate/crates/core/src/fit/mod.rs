//! Minimax fit of nodal kernel spectra onto Gaussian Hankel pairs.
//!
//! Each spectrum `kappa_hat(s_k, s_l, .)` sampled on a frequency grid is
//! replaced by `sum_q beta_q hhat_q` where `hhat_q` is the Fourier transform of
//! `h_q(r) = exp(-r^2 / (2 tau_q^2))`. Diagonal spectra are fitted first under
//! a nonnegativity constraint; off-diagonal spectra are then bounded by the
//! geometric mean of the fitted diagonals, which makes every 2x2 spectral
//! block positive semidefinite on the grid. The real-space kernel is the same
//! combination of the `h_q`.

pub mod simplex;

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::kernel::{check_sq_distance, sq_dist, KernelBackend, MultiscaleKernel};
use crate::ladder::{Radial, ScaleLadder};
use crate::spectral::{gaussian_spectrum, SpectralTable};
use simplex::{solve, StandardLp};

pub const DEFAULT_BASIS_LEN: usize = 15;

/// Singular values of the normalized basis matrix below this fraction of the
/// largest are dropped from the fit.
pub const RANK_TOL: f64 = 1e-10;

/// Off-diagonal bound violations below this fraction of the fit's peak are
/// treated as solver round-off.
pub const BAND_SLACK: f64 = 1e-12;

/// Gaussian widths `tau_q` with their analytic Fourier pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HankelBasis {
    widths: Vec<f64>,
    pub dim: usize,
}

impl HankelBasis {
    pub fn new(widths: Vec<f64>, dim: usize) -> Result<Self> {
        if widths.is_empty() || widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(
                "basis widths must be positive and finite".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        Ok(Self { widths, dim })
    }

    /// `q` widths log-spaced on `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, q: usize, dim: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) || q == 0 {
            return Err(Error::Domain(format!(
                "invalid basis range [{lo}, {hi}] with {q} widths"
            )));
        }
        let widths = if q == 1 {
            vec![lo]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..q)
                .map(|i| (a + (b - a) * i as f64 / (q - 1) as f64).exp())
                .collect()
        };
        Self::new(widths, dim)
    }

    /// Default basis for a ladder: `[s1 / sqrt 2, sqrt 2 * s2]`.
    pub fn for_ladder(ladder: &ScaleLadder, q: usize, dim: usize) -> Result<Self> {
        let r = std::f64::consts::SQRT_2;
        Self::log_spaced(ladder.s1() / r, ladder.s2() * r, q, dim)
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn spatial(&self, q: usize, r2: f64) -> Radial {
        let inv = 0.5 / (self.widths[q] * self.widths[q]);
        let e = (-r2 * inv).exp();
        Radial {
            value: e,
            slope: -inv * e,
        }
    }

    pub fn spectral(&self, q: usize, xi: f64) -> f64 {
        gaussian_spectrum(self.widths[q], xi, self.dim)
    }

    /// `hhat_q(xi_j)` as `Q` rows of length `J`.
    pub fn spectral_matrix(&self, xi: &[f64]) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|q| xi.iter().map(|&x| self.spectral(q, x)).collect())
            .collect()
    }

    /// `sum_q beta_q hhat_q(xi_j)` for each `j`.
    pub fn synthesize(&self, beta: &[f64], xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .map(|&x| {
                beta.iter()
                    .enumerate()
                    .map(|(q, b)| b * self.spectral(q, x))
                    .sum()
            })
            .collect()
    }

    /// `sum_q beta_q h_q` in space.
    pub fn eval(&self, beta: &[f64], r2: f64) -> Radial {
        let mut acc = Radial::default();
        for (q, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                acc = acc + self.spatial(q, r2) * b;
            }
        }
        acc
    }
}

/// Result of one minimax fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxFit {
    pub beta: Vec<f64>,
    /// `max_j |target_j - fit_j|` after any feasibility repair.
    pub residual: f64,
    /// Optimal LP objective before repair (in target units).
    pub lp_objective: f64,
    pub iterations: usize,
}

enum Constraint<'a> {
    NonNegative,
    Band(&'a [f64]),
}

fn check_target(target: &[f64], basis: &HankelBasis, xi: &[f64]) -> Result<()> {
    if target.len() != xi.len() {
        return Err(Error::Misuse(format!(
            "{} target samples for {} frequencies",
            target.len(),
            xi.len()
        )));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "target spectrum has non-finite samples".into(),
        ));
    }
    if basis.len() > xi.len() {
        return Err(Error::Misuse(format!(
            "{} basis functions exceed {} frequencies",
            basis.len(),
            xi.len()
        )));
    }
    Ok(())
}

/// Epigraph LP `min t` with `|y_j - H_j beta| <= t` plus the constraint rows,
/// solved through its dual in standard form. Columns and targets are
/// normalized to unit peak first.
fn minimax(
    target: &[f64],
    basis: &HankelBasis,
    xi: &[f64],
    constraint: Constraint,
) -> Result<MinimaxFit> {
    let q = basis.len();
    let h = basis.spectral_matrix(xi);
    let col_scale: Vec<f64> = h
        .iter()
        .map(|row| row.iter().fold(0.0f64, |a, b| a.max(*b)))
        .collect();
    if col_scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain(
            "basis spectrum vanishes on the whole grid".into(),
        ));
    }
    let mut ys = target.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Constraint::Band(c) = &constraint {
        ys = c.iter().fold(ys, |a, b| a.max(*b));
    }
    if ys == 0.0 {
        return Ok(MinimaxFit {
            beta: vec![0.0; q],
            residual: 0.0,
            lp_objective: 0.0,
            iterations: 0,
        });
    }
    // Work in the orthonormal coordinates of the truncated SVD of the
    // normalized basis matrix; the Gaussian spectra are nearly collinear and
    // a direct parametrization gives near-singular LP bases.
    let jn = xi.len();
    let hn = DMatrix::from_fn(jn, q, |j, qq| h[qq][j] / col_scale[qq]);
    let svd = hn.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
        .collect();
    let r = keep.len();

    // Primal rows a.z >= b over z = (gamma, t); dual columns are the rows.
    let mut columns = Vec::new();
    let mut cost = Vec::new();
    let reduced: Vec<Vec<f64>> = (0..jn)
        .map(|j| {
            keep.iter()
                .map(|&i| {
                    (0..q).map(|qq| hn[(j, qq)] * vt[(i, qq)]).sum::<f64>() / svd.singular_values[i]
                })
                .collect()
        })
        .collect();
    // Constraint rows (no `t`) are scaled to unit max-norm so solver
    // tolerances act relative to each row.
    let mut push = |coef: f64, t: f64, j: usize, b: f64| {
        let norm = if t == 0.0 {
            reduced[j].iter().fold(0.0f64, |a, v| a.max(v.abs()))
        } else {
            1.0
        };
        if norm == 0.0 {
            return;
        }
        let mut col: Vec<f64> = reduced[j].iter().map(|v| coef * v / norm).collect();
        col.push(t);
        columns.push(col);
        cost.push(-b / norm);
    };
    for (j, &y) in target.iter().enumerate() {
        push(1.0, 1.0, j, y / ys);
        push(-1.0, 1.0, j, -y / ys);
    }
    match &constraint {
        Constraint::NonNegative => {
            for j in 0..jn {
                push(1.0, 0.0, j, 0.0);
            }
        }
        Constraint::Band(c) => {
            for (j, &cj) in c.iter().enumerate() {
                push(1.0, 0.0, j, -cj / ys);
                push(-1.0, 0.0, j, -cj / ys);
            }
        }
    }
    let mut rhs = vec![0.0; r + 1];
    rhs[r] = 1.0;
    let sol = solve(&StandardLp { columns, cost, rhs })?;
    let beta: Vec<f64> = (0..q)
        .map(|qq| {
            let b: f64 = keep
                .iter()
                .enumerate()
                .map(|(a, &i)| -sol.duals[a] * vt[(i, qq)] / svd.singular_values[i])
                .sum();
            b * ys / col_scale[qq]
        })
        .collect();
    let lp_objective = -sol.objective * ys;
    let mut fit = MinimaxFit {
        beta,
        residual: 0.0,
        lp_objective,
        iterations: sol.iterations,
    };
    repair(&mut fit.beta, basis, xi, &constraint);
    let f = basis.synthesize(&fit.beta, xi);
    fit.residual = target
        .iter()
        .zip(&f)
        .fold(0.0f64, |a, (y, v)| a.max((y - v).abs()));
    Ok(fit)
}

/// Enforces the hard constraints exactly on the grid after the LP solve.
fn repair(beta: &mut [f64], basis: &HankelBasis, xi: &[f64], constraint: &Constraint) {
    match constraint {
        Constraint::NonNegative => {
            // The narrowest spatial width has the widest, strictly positive
            // spectrum. The lift covers the rounding error of the sum.
            let finest = (0..basis.len())
                .min_by(|&a, &b| basis.widths[a].total_cmp(&basis.widths[b]))
                .unwrap_or(0);
            for _ in 0..4 {
                let f = basis.synthesize(beta, xi);
                let delta = f
                    .iter()
                    .zip(xi)
                    .map(|(v, &x)| {
                        let mass: f64 = (0..basis.len())
                            .map(|q| (beta[q] * basis.spectral(q, x)).abs())
                            .sum();
                        (8.0 * f64::EPSILON * mass - v) / basis.spectral(finest, x)
                    })
                    .fold(0.0f64, f64::max);
                if delta <= 0.0 || f.iter().all(|v| *v >= 0.0) && delta == 0.0 {
                    break;
                }
                if f.iter().all(|v| *v >= 0.0) {
                    break;
                }
                beta[finest] += delta;
            }
        }
        Constraint::Band(c) => {
            // Violations at the solver's resolution (relative to the fit's
            // peak) are left alone; they would otherwise zero the whole fit
            // where the bound itself is numerically zero.
            let f = basis.synthesize(beta, xi);
            let slack = BAND_SLACK * f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let factor = f
                .iter()
                .zip(c.iter())
                .filter(|(v, cj)| v.abs() > **cj + slack)
                .map(|(v, cj)| cj / v.abs())
                .fold(1.0f64, f64::min);
            if factor < 1.0 {
                let s = factor * (1.0 - 4.0 * f64::EPSILON);
                beta.iter_mut().for_each(|b| *b *= s);
            }
        }
    }
}

/// Minimax fit of a diagonal spectrum subject to a nonnegative fitted
/// spectrum on the grid.
pub fn fit_diagonal(target: &[f64], basis: &HankelBasis, xi: &[f64]) -> Result<MinimaxFit> {
    check_target(target, basis, xi)?;
    minimax(target, basis, xi, Constraint::NonNegative)
}

/// Minimax fit of the `(k, l)` spectrum subject to `|fit_j| <= bound_j`.
pub fn fit_offdiagonal(
    k: usize,
    l: usize,
    target: &[f64],
    bound: &[f64],
    basis: &HankelBasis,
    xi: &[f64],
) -> Result<MinimaxFit> {
    if k == l {
        return Err(Error::Misuse(format!(
            "off-diagonal fit requested for diagonal pair ({k}, {k})"
        )));
    }
    check_target(target, basis, xi)?;
    if bound.len() != xi.len() || bound.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::Misuse(
            "constraint bounds must be finite, nonnegative and match the grid".into(),
        ));
    }
    minimax(target, basis, xi, Constraint::Band(bound))
}

/// `c_j = sqrt(fit_kk(xi_j) fit_ll(xi_j))`.
pub fn pairwise_bound(diag_k: &[f64], diag_l: &[f64]) -> Vec<f64> {
    diag_k
        .iter()
        .zip(diag_l)
        .map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt())
        .collect()
}

/// Which off-diagonal pairs to fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "nodes", rename_all = "snake_case")]
pub enum PairSelection {
    All,
    /// Every node paired with each of these node indices.
    Anchors(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub basis_len: usize,
    pub pairs: PairSelection,
    /// Linear interpolation of coefficients between ladder nodes.
    pub interpolate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            basis_len: DEFAULT_BASIS_LEN,
            pairs: PairSelection::All,
            interpolate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub k: usize,
    pub l: usize,
    pub scale_k: f64,
    pub scale_l: f64,
    pub residual: f64,
    pub peak: f64,
    pub relative_residual: f64,
    /// Diagonal: `min_j fit_j`. Off-diagonal: `min_j (c_j - |fit_j|)`.
    pub min_margin: f64,
    /// Off-diagonal only: `min_j (fit_kk fit_ll - fit_kl^2)`.
    pub min_determinant: Option<f64>,
    pub lp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub dim: usize,
    pub basis_widths: Vec<f64>,
    pub frequencies: usize,
    pub xi_max: f64,
    pub interpolation_enabled: bool,
    /// Set when interpolated coefficients may be used (they are approximate).
    pub approximate_off_node: bool,
    pub max_relative_residual: f64,
    pub pairs: Vec<PairReport>,
}

/// Fitted coefficients for node pairs of a ladder; implements the
/// real-space kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub ladder: ScaleLadder,
    pub basis: HankelBasis,
    /// `beta[k * m + l]`, `None` where the pair was not fitted.
    beta: Vec<Option<Vec<f64>>>,
    interpolate: bool,
    inv_two_tau2: Vec<f64>,
    pub report: FitReport,
}

const TABLE_MAGIC: &[u8; 8] = b"MSKFIT\0\0";
const TABLE_VERSION: u32 = 1;

fn diagonal_pair_report(
    k: usize,
    scale: f64,
    target: &[f64],
    fit: &MinimaxFit,
    fitted: &[f64],
) -> PairReport {
    let peak = target.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    PairReport {
        k,
        l: k,
        scale_k: scale,
        scale_l: scale,
        residual: fit.residual,
        peak,
        relative_residual: if peak > 0.0 {
            fit.residual / peak
        } else {
            fit.residual
        },
        min_margin: fitted.iter().fold(f64::INFINITY, |a, b| a.min(*b)),
        min_determinant: None,
        lp_iterations: fit.iterations,
    }
}

/// Two-phase fit: all diagonals in parallel, then the selected off-diagonal
/// pairs in parallel. Off-diagonal targets are symmetrized so `(k, l)` and
/// `(l, k)` share one fit.
pub fn fit_kernel_table(spectra: &SpectralTable, options: &FitOptions) -> Result<KernelTable> {
    let ladder = &spectra.ladder;
    let m = ladder.len();
    let xi = spectra.grid.xi();
    let basis = HankelBasis::for_ladder(ladder, options.basis_len, spectra.grid.dim)?;

    let diagonals: Vec<(MinimaxFit, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|k| {
            let fit = fit_diagonal(spectra.row(k, k), &basis, xi)
                .map_err(|e| Error::LinearProgram(format!("diagonal fit at node {k}: {e}")))?;
            let fitted = basis.synthesize(&fit.beta, xi);
            if fitted.iter().any(|v| *v < 0.0) {
                return Err(Error::LinearProgram(format!(
                    "negative fitted diagonal spectrum at node {k}"
                )));
            }
            Ok((fit, fitted))
        })
        .collect::<Result<_>>()?;

    let mut pairs: Vec<(usize, usize)> = match &options.pairs {
        PairSelection::All => (0..m)
            .flat_map(|k| (k + 1..m).map(move |l| (k, l)))
            .collect(),
        PairSelection::Anchors(anchors) => {
            if let Some(a) = anchors.iter().find(|&&a| a >= m) {
                return Err(Error::Misuse(format!("anchor node {a} outside 0..{m}")));
            }
            anchors
                .iter()
                .flat_map(|&a| {
                    (0..m)
                        .filter(move |&k| k != a)
                        .map(move |k| (k.min(a), k.max(a)))
                })
                .collect()
        }
    };
    pairs.sort_unstable();
    pairs.dedup();

    let off: Vec<(MinimaxFit, PairReport)> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let target: Vec<f64> = spectra
                .row(k, l)
                .iter()
                .zip(spectra.row(l, k))
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let bound = pairwise_bound(&diagonals[k].1, &diagonals[l].1);
            let fit = fit_offdiagonal(k, l, &target, &bound, &basis, xi)
                .map_err(|e| Error::LinearProgram(format!("pair ({k}, {l}) fit: {e}")))?;
            let fitted = basis.synthesize(&fit.beta, xi);
            let margin = bound
                .iter()
                .zip(&fitted)
                .fold(f64::INFINITY, |a, (c, f)| a.min(c - f.abs()));
            let det = (0..xi.len())
                .map(|j| diagonals[k].1[j] * diagonals[l].1[j] - fitted[j] * fitted[j])
                .fold(f64::INFINITY, f64::min);
            let peak = target.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let report = PairReport {
                k,
                l,
                scale_k: ladder.node(k),
                scale_l: ladder.node(l),
                residual: fit.residual,
                peak,
                relative_residual: if peak > 0.0 {
                    fit.residual / peak
                } else {
                    fit.residual
                },
                min_margin: margin,
                min_determinant: Some(det),
                lp_iterations: fit.iterations,
            };
            Ok((fit, report))
        })
        .collect::<Result<_>>()?;

    let mut beta = vec![None; m * m];
    let mut reports = Vec::with_capacity(m + off.len());
    for (k, (fit, fitted)) in diagonals.iter().enumerate() {
        reports.push(diagonal_pair_report(
            k,
            ladder.node(k),
            spectra.row(k, k),
            fit,
            fitted,
        ));
        beta[k * m + k] = Some(fit.beta.clone());
    }
    for ((k, l), (fit, report)) in pairs.iter().zip(off) {
        beta[k * m + l] = Some(fit.beta.clone());
        beta[l * m + k] = Some(fit.beta);
        reports.push(report);
    }
    let report = FitReport {
        dim: basis.dim,
        basis_widths: basis.widths().to_vec(),
        frequencies: xi.len(),
        xi_max: *xi.last().unwrap_or(&0.0),
        interpolation_enabled: options.interpolate,
        approximate_off_node: options.interpolate,
        max_relative_residual: reports
            .iter()
            .fold(0.0f64, |a, r| a.max(r.relative_residual)),
        pairs: reports,
    };
    Ok(KernelTable::from_parts(
        ladder.clone(),
        basis,
        beta,
        options.interpolate,
        report,
    ))
}

impl KernelTable {
    fn from_parts(
        ladder: ScaleLadder,
        basis: HankelBasis,
        beta: Vec<Option<Vec<f64>>>,
        interpolate: bool,
        report: FitReport,
    ) -> Self {
        let inv_two_tau2 = basis.widths().iter().map(|t| 0.5 / (t * t)).collect();
        Self {
            ladder,
            basis,
            beta,
            interpolate,
            inv_two_tau2,
            report,
        }
    }

    pub fn nodes(&self) -> usize {
        self.ladder.len()
    }

    pub fn interpolation_enabled(&self) -> bool {
        self.interpolate
    }

    /// Coefficients for node pair `(k, l)`, if fitted.
    pub fn coefficients(&self, k: usize, l: usize) -> Option<&[f64]> {
        self.beta.get(k * self.nodes() + l)?.as_deref()
    }

    /// Node pairs with fitted coefficients.
    pub fn fitted_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.nodes();
        (0..m * m)
            .filter(|i| self.beta[*i].is_some())
            .map(move |i| (i / m, i % m))
    }

    fn eval_coeffs(&self, beta: &[f64], r2: f64) -> Radial {
        let mut value = 0.0;
        let mut slope = 0.0;
        for (b, inv) in beta.iter().zip(&self.inv_two_tau2) {
            if *b != 0.0 {
                let e = b * (-r2 * inv).exp();
                value += e;
                slope -= inv * e;
            }
        }
        Radial { value, slope }
    }

    /// Ladder nodes bracketing `lam` with linear weights; one entry on a node.
    fn bracket(&self, lam: f64) -> Result<[(usize, f64); 2]> {
        let lam = self.ladder.clamp(lam)?;
        if let Some(k) = self.ladder.node_index(lam) {
            return Ok([(k, 1.0), (k, 0.0)]);
        }
        let k = self.ladder.interval_of(lam);
        let t = (lam - self.ladder.node(k)) / self.ladder.width(k);
        Ok([(k, 1.0 - t), (k + 1, t)])
    }

    /// Coefficients at arbitrary scales (exact on nodes, interpolated
    /// between them when enabled).
    pub fn coefficients_at(&self, lam: f64, mu: f64) -> Result<Vec<f64>> {
        let lookup = Error::ScaleLookup { lam, mu };
        let (a, b) = (self.ladder.node_index(lam), self.ladder.node_index(mu));
        if let (Some(a), Some(b)) = (a, b) {
            return self.coefficients(a, b).map(<[f64]>::to_vec).ok_or(lookup);
        }
        if !self.interpolate {
            return Err(lookup);
        }
        let (ba, bb) = (self.bracket(lam)?, self.bracket(mu)?);
        let mut out = vec![0.0; self.basis.len()];
        for &(k, wk) in &ba {
            for &(l, wl) in &bb {
                let w = wk * wl;
                if w == 0.0 {
                    continue;
                }
                let c = self
                    .coefficients(k, l)
                    .ok_or(Error::ScaleLookup { lam, mu })?;
                out.iter_mut().zip(c).for_each(|(o, c)| *o += w * c);
            }
        }
        Ok(out)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(TABLE_MAGIC)?;
        w.u32(TABLE_VERSION)?;
        w.u32(self.basis.dim as u32)?;
        w.u32(self.nodes() as u32)?;
        w.u32(self.basis.len() as u32)?;
        w.u32(self.interpolate as u32)?;
        w.f64s(self.basis.widths())?;
        w.f64s(self.ladder.nodes())?;
        for b in &self.beta {
            match b {
                Some(v) => {
                    w.u32(1)?;
                    w.f64s(v)?;
                }
                None => w.u32(0)?,
            }
        }
        w.blob(serde_json::to_string(&self.report)?.as_bytes())?;
        w.finish()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(TABLE_MAGIC)?;
        r.version(TABLE_VERSION)?;
        let dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let q = r.u32()? as usize;
        let interpolate = r.u32()? != 0;
        let basis = HankelBasis::new(r.f64s(q)?, dim)?;
        let ladder = ScaleLadder::new(r.f64s(m)?)?;
        let mut beta = Vec::with_capacity(m * m);
        for _ in 0..m * m {
            beta.push(match r.u32()? {
                0 => None,
                1 => Some(r.f64s(q)?),
                f => return Err(Error::Format(format!("bad presence flag {f}"))),
            });
        }
        let report: FitReport = serde_json::from_slice(&r.blob()?)?;
        Ok(Self::from_parts(ladder, basis, beta, interpolate, report))
    }

    /// Human-readable dump: `k,l,q,beta` for each fitted pair.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "k,l,q,beta")?;
        for (k, l) in self.fitted_pairs() {
            for (q, b) in self.coefficients(k, l).unwrap_or(&[]).iter().enumerate() {
                writeln!(f, "{k},{l},{q},{b:e}")?;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Rebuilds coefficients from the CSV dump; the report is not part of
    /// the CSV and must be supplied.
    pub fn read_csv(
        path: &Path,
        ladder: ScaleLadder,
        basis: HankelBasis,
        report: FitReport,
    ) -> Result<Self> {
        let m = ladder.len();
        let q = basis.len();
        let mut beta: Vec<Option<Vec<f64>>> = vec![None; m * m];
        let f = BufReader::new(std::fs::File::open(path)?);
        for (i, line) in f.lines().enumerate().skip(1) {
            let line = line?;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| Error::Format(format!("line {}: {what}", i + 1));
            if cols.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let k: usize = cols[0].parse().map_err(|_| bad("k"))?;
            let l: usize = cols[1].parse().map_err(|_| bad("l"))?;
            let qq: usize = cols[2].parse().map_err(|_| bad("q"))?;
            let v: f64 = cols[3].parse().map_err(|_| bad("beta"))?;
            if k >= m || l >= m || qq >= q {
                return Err(bad("index out of range"));
            }
            beta[k * m + l].get_or_insert_with(|| vec![0.0; q])[qq] = v;
        }
        let interpolate = report.interpolation_enabled;
        Ok(Self::from_parts(ladder, basis, beta, interpolate, report))
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, &self.report)?;
        f.flush()?;
        Ok(())
    }
}

impl MultiscaleKernel for KernelTable {
    fn dim(&self) -> usize {
        self.basis.dim
    }

    fn backend(&self) -> KernelBackend {
        KernelBackend::FittedBasis
    }

    fn radial(&self, lam: f64, mu: f64, r2: f64) -> Result<Radial> {
        check_sq_distance(r2)?;
        if let (Some(a), Some(b)) = (self.ladder.node_index(lam), self.ladder.node_index(mu)) {
            if let Some(c) = self.coefficients(a, b) {
                return Ok(self.eval_coeffs(c, r2));
            }
        }
        let c = self.coefficients_at(lam, mu)?;
        Ok(self.eval_coeffs(&c, r2))
    }
}

/// Eigenvalue summary of a sampled Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub samples: usize,
    pub distinct_scales: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub pass: bool,
    /// More than two scales: positivity is not implied by the pairwise fit.
    pub informational: bool,
}

pub const POSITIVITY_REL_TOL: f64 = 1e-8;

/// Gram matrix `K_ij = kappa(s_i, s_j, |x_i - x_j|)` for `(scale, point)`
/// samples and its extreme eigenvalues. Passes iff
/// `min >= -1e-8 max`.
pub fn certify_pairwise_positivity(
    kernel: &dyn MultiscaleKernel,
    samples: &[(f64, Vec<f64>)],
) -> Result<PositivityReport> {
    let n = samples.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (si, xi) = &samples[i];
            let (sj, xj) = &samples[j];
            let v = kernel.radial(*si, *sj, sq_dist(xi, xj))?.value;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scales: Vec<f64> = samples.iter().map(|s| s.0).collect();
    scales.sort_by(f64::total_cmp);
    scales.dedup();
    Ok(PositivityReport {
        samples: n,
        distinct_scales: scales.len(),
        min_eigenvalue: min,
        max_eigenvalue: max,
        pass: n == 0 || min >= -POSITIVITY_REL_TOL * max.abs(),
        informational: scales.len() > 2,
    })
}
