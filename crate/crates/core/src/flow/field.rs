//! Grid transport, inverse and residual maps, and Jacobian fields (2D).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{velocity_at, Controls, FlowTrajectory};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::kernel::MultiscaleKernel;

/// Uniform `nx x ny` grid over `[min.0, max.0] x [min.1, max.1]`; node
/// `(ix, iy)` has flat index `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub nx: usize,
    pub ny: usize,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Grid2 {
    pub const DEFAULT_SIZE: usize = 64;
    pub const DEFAULT_MARGIN: f64 = 0.1;

    pub fn new(nx: usize, ny: usize, min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Shape(format!(
                "grid needs at least 2x2 nodes, got {nx}x{ny}"
            )));
        }
        if !(max[0] > min[0] && max[1] > min[1]) || min.iter().chain(&max).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "degenerate grid box {min:?} - {max:?}"
            )));
        }
        Ok(Self { nx, ny, min, max })
    }

    /// Bounding box of `points` (flattened 2D) grown by `margin` of its
    /// extent on every side.
    pub fn around(points: &[f64], margin: f64, nx: usize, ny: usize) -> Result<Self> {
        if points.is_empty() || !points.len().is_multiple_of(2) {
            return Err(Error::Shape("need a nonempty list of 2D points".into()));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.chunks_exact(2) {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let ext = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let pad = margin * ext;
        let grow = |c: usize| {
            let half = 0.5 * (hi[c] - lo[c]).max(1e-3 * ext);
            let mid = 0.5 * (hi[c] + lo[c]);
            (mid - half - pad, mid + half + pad)
        };
        let (x0, x1) = grow(0);
        let (y0, y1) = grow(1);
        Self::new(nx, ny, [x0, y0], [x1, y1])
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            (self.max[0] - self.min[0]) / (self.nx - 1) as f64,
            (self.max[1] - self.min[1]) / (self.ny - 1) as f64,
        ]
    }

    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        let h = self.spacing();
        [
            self.min[0] + ix as f64 * h[0],
            self.min[1] + iy as f64 * h[1],
        ]
    }

    /// All nodes, flattened `len x 2`.
    pub fn points(&self) -> Vec<f64> {
        (0..self.ny)
            .flat_map(|iy| (0..self.nx).flat_map(move |ix| self.point(ix, iy)))
            .collect()
    }
}

fn check_points(trajectory: &FlowTrajectory, points: &[f64]) -> Result<()> {
    if !points.len().is_multiple_of(trajectory.dim) {
        return Err(Error::Shape(format!(
            "{} coordinates do not split into R^{} points",
            points.len(),
            trajectory.dim
        )));
    }
    Ok(())
}

fn integrate_points<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    lam: f64,
    points: &[f64],
    backward: bool,
) -> Result<Vec<f64>> {
    check_points(trajectory, points)?;
    let d = trajectory.dim;
    let steps = trajectory.steps();
    let h = trajectory.step_size();
    let moved: Vec<Vec<f64>> = points
        .par_chunks(d)
        .map(|p| {
            let mut y = p.to_vec();
            for s in 0..steps {
                let i = if backward { steps - 1 - s } else { s };
                let v = velocity_at(kernel, trajectory, controls, i, lam, &y)?;
                let sign = if backward { -h } else { h };
                y.iter_mut().zip(&v).for_each(|(yi, vi)| *yi += sign * vi);
                if y.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Integration {
                        step: i,
                        scale: lam,
                    });
                }
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;
    Ok(moved.concat())
}

/// `psi_lam(points)`: each point follows `v(., lam, .)` with the Euler steps
/// of the trajectory. Points do not influence the landmarks.
pub fn transport_points<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    lam: f64,
    points: &[f64],
) -> Result<Vec<f64>> {
    integrate_points(kernel, trajectory, controls, lam, points, false)
}

/// Approximate `psi_lam^{-1}(points)`: the Euler steps run backward in time
/// under `-v`.
pub fn inverse_points<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    lam: f64,
    points: &[f64],
) -> Result<Vec<f64>> {
    integrate_points(kernel, trajectory, controls, lam, points, true)
}

/// A map sampled on a grid, with its Jacobian determinants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub scale: f64,
    pub grid: Grid2,
    /// Images of the grid nodes, flattened `len x 2`.
    pub mapped: Vec<f64>,
    /// `det d(map)` per node.
    pub jacobian: Vec<f64>,
}

const FIELD_MAGIC: &[u8; 8] = b"MSFIELD\0";
const FIELD_VERSION: u32 = 1;

impl DeformationField {
    pub fn new(scale: f64, grid: Grid2, mapped: Vec<f64>) -> Result<Self> {
        if mapped.len() != 2 * grid.len() {
            return Err(Error::Shape(format!(
                "{} mapped coordinates for a {}-node grid",
                mapped.len(),
                grid.len()
            )));
        }
        let jacobian = jacobian_determinants(&grid, &mapped);
        Ok(Self {
            scale,
            grid,
            mapped,
            jacobian,
        })
    }

    /// `log det`; NaN where the determinant is not positive.
    pub fn log_jacobian(&self) -> Vec<f64> {
        self.jacobian
            .iter()
            .map(|&j| if j > 0.0 { j.ln() } else { f64::NAN })
            .collect()
    }

    /// Nodes with a nonpositive determinant (folding).
    pub fn folded(&self) -> Vec<usize> {
        (0..self.jacobian.len())
            .filter(|&i| !(self.jacobian[i] > 0.0))
            .collect()
    }

    pub fn min_jacobian(&self) -> f64 {
        self.jacobian.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max |map(x) - x|` over the grid.
    pub fn displacement_sup(&self) -> f64 {
        let src = self.grid.points();
        src.chunks_exact(2)
            .zip(self.mapped.chunks_exact(2))
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    /// `x,y,psi_x,psi_y,log_jac` per node; folded nodes have `NaN` log-Jacobian.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y,psi_x,psi_y,log_jac")?;
        let src = self.grid.points();
        for ((s, m), lj) in src
            .chunks_exact(2)
            .zip(self.mapped.chunks_exact(2))
            .zip(self.log_jacobian())
        {
            writeln!(f, "{:e},{:e},{:e},{:e},{:e}", s[0], s[1], m[0], m[1], lj)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(BufWriter::new(std::fs::File::create(path)?));
        w.bytes(FIELD_MAGIC)?;
        w.u32(FIELD_VERSION)?;
        w.f64(self.scale)?;
        w.u32(self.grid.nx as u32)?;
        w.u32(self.grid.ny as u32)?;
        w.f64s(&self.grid.min)?;
        w.f64s(&self.grid.max)?;
        w.f64s(&self.mapped)?;
        w.f64s(&self.jacobian)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(FIELD_MAGIC)?;
        r.version(FIELD_VERSION)?;
        let scale = r.f64()?;
        let nx = r.u32()? as usize;
        let ny = r.u32()? as usize;
        let min = r.f64s(2)?;
        let max = r.f64s(2)?;
        let grid = Grid2::new(nx, ny, [min[0], min[1]], [max[0], max[1]])?;
        let mapped = r.f64s(2 * grid.len())?;
        let jacobian = r.f64s(grid.len())?;
        Ok(Self {
            scale,
            grid,
            mapped,
            jacobian,
        })
    }
}

/// Derivative along one grid axis: central differences inside, second-order
/// one-sided differences on the boundary (first order on 2-node axes).
fn axis_derivative(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if n == 2 {
        return (f(1) - f(0)) / h;
    }
    if i == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

/// Finite-difference `det d(map)` at every grid node.
pub fn jacobian_determinants(grid: &Grid2, mapped: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let [hx, hy] = grid.spacing();
    let at = |ix: usize, iy: usize, c: usize| mapped[2 * (iy * nx + ix) + c];
    (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| {
            let dx = |c: usize| axis_derivative(|k| at(k, iy, c), ix, nx, hx);
            let dy = |c: usize| axis_derivative(|k| at(ix, k, c), iy, ny, hy);
            dx(0) * dy(1) - dy(0) * dx(1)
        })
        .collect()
}

/// `log det` of a field's Jacobian; NaN marks folded nodes.
pub fn log_jacobian(field: &DeformationField) -> Vec<f64> {
    field.log_jacobian()
}

/// `psi_lam` on a grid.
pub fn transport_grid<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    lam: f64,
    grid: &Grid2,
) -> Result<DeformationField> {
    check_planar(trajectory)?;
    let mapped = transport_points(kernel, trajectory, controls, lam, &grid.points())?;
    DeformationField::new(lam, *grid, mapped)
}

/// `psi_lam^{-1}` on a grid.
pub fn inverse_map<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    lam: f64,
    grid: &Grid2,
) -> Result<DeformationField> {
    check_planar(trajectory)?;
    let mapped = inverse_points(kernel, trajectory, controls, lam, &grid.points())?;
    DeformationField::new(lam, *grid, mapped)
}

fn check_planar(trajectory: &FlowTrajectory) -> Result<()> {
    if trajectory.dim != 2 {
        return Err(Error::Misuse(format!(
            "grid fields are two-dimensional, trajectory is in R^{}",
            trajectory.dim
        )));
    }
    Ok(())
}

/// `rho_k = psi_{r_k} o psi_{r_{k-1}}^{-1}` on the grid for each scale in
/// `nodes`, with `psi_{r_0} = id` before the first one.
pub fn residual_maps<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    nodes: &[f64],
    grid: &Grid2,
) -> Result<Vec<DeformationField>> {
    check_planar(trajectory)?;
    let src = grid.points();
    let mut out = Vec::with_capacity(nodes.len());
    for (k, &lam) in nodes.iter().enumerate() {
        let pre = if k == 0 {
            src.clone()
        } else {
            inverse_points(kernel, trajectory, controls, nodes[k - 1], &src)?
        };
        let mapped = transport_points(kernel, trajectory, controls, lam, &pre)?;
        out.push(DeformationField::new(lam, *grid, mapped)?);
    }
    Ok(out)
}

/// Reconstruction of the finest-to-coarsest chain from residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    /// `sup |psi_{last}(x) - rho_last o ... o rho_first(x)|`.
    pub composition_error: f64,
    /// `max_k sup |psi_{r_k}(psi_{r_k}^{-1}(x)) - x|`.
    pub inverse_error: f64,
}

impl ResidualCheck {
    pub fn ratio(&self) -> f64 {
        if self.inverse_error > 0.0 {
            self.composition_error / self.inverse_error
        } else if self.composition_error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn sup_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    a.chunks_exact(dim)
        .zip(b.chunks_exact(dim))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Composes the residual maps pointwise (each evaluated by integration, not
/// grid interpolation) and compares with the direct map at the last scale.
pub fn residual_composition_error<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    nodes: &[f64],
    points: &[f64],
) -> Result<ResidualCheck> {
    let last = *nodes
        .last()
        .ok_or_else(|| Error::Misuse("no scales to compose".into()))?;
    let d = trajectory.dim;
    let mut z = points.to_vec();
    let mut inverse_error = 0.0f64;
    for (k, &lam) in nodes.iter().enumerate() {
        if k > 0 {
            z = inverse_points(kernel, trajectory, controls, nodes[k - 1], &z)?;
        }
        z = transport_points(kernel, trajectory, controls, lam, &z)?;
        let back = inverse_points(kernel, trajectory, controls, lam, points)?;
        let round = transport_points(kernel, trajectory, controls, lam, &back)?;
        inverse_error = inverse_error.max(sup_distance(&round, points, d));
    }
    let direct = transport_points(kernel, trajectory, controls, last, points)?;
    Ok(ResidualCheck {
        composition_error: sup_distance(&direct, &z, d),
        inverse_error,
    })
}
