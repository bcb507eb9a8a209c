//! Landmark flows driven by base-scale controls.
//!
//! The velocity at scale `lam` and time step `i` is
//! `v_i(lam, x) = sum_p kappa(lam, s_p, |x - x_p(t_i)|) a_p(t_i)`, summed over
//! every landmark `p` with base scale `s_p`. Landmarks and arbitrary query
//! points move with the same explicit Euler scheme,
//! `x(t_{i+1}) = x(t_i) + v_i(lam, x(t_i)) / T`.

mod field;

pub use field::{
    inverse_map, inverse_points, jacobian_determinants, log_jacobian, residual_composition_error,
    residual_maps, transport_grid, transport_points, DeformationField, Grid2, ResidualCheck,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{sq_dist, MultiscaleKernel};
use crate::ladder::ScaleLadder;

/// Landmarks matched at one base scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkGroup {
    pub scale: f64,
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Base-scale point sets with their targets and the matching weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSystem {
    pub dim: usize,
    pub weight: f64,
    pub groups: Vec<LandmarkGroup>,
}

impl LandmarkSystem {
    pub fn new(dim: usize, weight: f64, groups: Vec<LandmarkGroup>) -> Result<Self> {
        let sys = Self {
            dim,
            weight,
            groups,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Shape("dimension must be positive".into()));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Domain(format!(
                "matching weight must be finite and nonnegative, got {}",
                self.weight
            )));
        }
        for (g, group) in self.groups.iter().enumerate() {
            if !(group.scale > 0.0 && group.scale.is_finite()) {
                return Err(Error::Domain(format!(
                    "group {g} has invalid scale {}",
                    group.scale
                )));
            }
            if group.points.len() != group.targets.len() {
                return Err(Error::Shape(format!(
                    "group {g}: {} points but {} targets",
                    group.points.len(),
                    group.targets.len()
                )));
            }
            for p in group.points.iter().chain(&group.targets) {
                if p.len() != self.dim {
                    return Err(Error::Shape(format!(
                        "group {g}: point of dimension {} in R^{}",
                        p.len(),
                        self.dim
                    )));
                }
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("group {g}: non-finite coordinate")));
                }
            }
        }
        Ok(())
    }

    /// Every base scale must be a ladder node.
    pub fn check_ladder(&self, ladder: &ScaleLadder) -> Result<()> {
        for g in &self.groups {
            if ladder.node_index(g.scale).is_none() {
                return Err(Error::Config(format!(
                    "base scale {} is not a ladder node",
                    g.scale
                )));
            }
        }
        Ok(())
    }

    /// Total number of landmarks.
    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Base scale of each landmark, in group order.
    pub fn scales(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.scale, g.points.len()))
            .collect()
    }

    /// Initial positions, flattened `n x d`.
    pub fn initial(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.points.iter().flatten().copied())
            .collect()
    }

    /// Targets, flattened `n x d`.
    pub fn targets(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.targets.iter().flatten().copied())
            .collect()
    }

    /// Landmark index range of each group.
    pub fn group_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.groups
            .iter()
            .map(|g| {
                let r = start..start + g.points.len();
                start = r.end;
                r
            })
            .collect()
    }
}

/// Piecewise-constant controls `a_p(t_i)`, stored step-major and flattened
/// as `steps x landmarks x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub steps: usize,
    pub landmarks: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Controls {
    pub fn zeros(steps: usize, landmarks: usize, dim: usize) -> Self {
        Self {
            steps,
            landmarks,
            dim,
            values: vec![0.0; steps * landmarks * dim],
        }
    }

    pub fn for_system(system: &LandmarkSystem, steps: usize) -> Self {
        Self::zeros(steps, system.len(), system.dim)
    }

    pub fn check(&self, system: &LandmarkSystem) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Domain("need at least one time step".into()));
        }
        if self.landmarks != system.len() || self.dim != system.dim {
            return Err(Error::Shape(format!(
                "controls for {} landmarks in R^{}, system has {} in R^{}",
                self.landmarks,
                self.dim,
                system.len(),
                system.dim
            )));
        }
        if self.values.len() != self.steps * self.landmarks * self.dim {
            return Err(Error::Shape(format!(
                "{} control values, expected {}",
                self.values.len(),
                self.steps * self.landmarks * self.dim
            )));
        }
        Ok(())
    }

    /// Controls at step `i`, `landmarks x dim`.
    pub fn at(&self, i: usize) -> &[f64] {
        let n = self.landmarks * self.dim;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.landmarks * self.dim;
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Landmark positions at every time node and the kernel norms of the
/// velocity at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub dim: usize,
    /// Base scale of each landmark.
    pub scales: Vec<f64>,
    /// `steps + 1` snapshots, each flattened `landmarks x dim`.
    pub positions: Vec<Vec<f64>>,
    /// `||v(t_i)||_W^2` for each step.
    pub sq_norms: Vec<f64>,
    /// `1/2 sum_i ||v(t_i)||^2 / T`.
    pub energy: f64,
}

impl FlowTrajectory {
    pub fn steps(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn step_size(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    pub fn endpoint(&self) -> &[f64] {
        self.positions
            .last()
            .expect("trajectory has an initial snapshot")
    }
}

/// Kernel values and `r^2`-slopes between all landmarks, row-major `n x n`.
pub(crate) struct LandmarkGram {
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

pub(crate) fn landmark_gram<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    scales: &[f64],
    x: &[f64],
    dim: usize,
    with_slopes: bool,
) -> Result<LandmarkGram> {
    let n = scales.len();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let xp = &x[p * dim..(p + 1) * dim];
            let mut vals = vec![0.0; n];
            let mut slopes = if with_slopes {
                vec![0.0; n]
            } else {
                Vec::new()
            };
            for q in 0..n {
                let rad = kernel.radial(
                    scales[p],
                    scales[q],
                    sq_dist(xp, &x[q * dim..(q + 1) * dim]),
                )?;
                vals[q] = rad.value;
                if with_slopes {
                    slopes[q] = rad.slope;
                }
            }
            Ok((vals, slopes))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(n * n);
    let mut slopes = Vec::with_capacity(if with_slopes { n * n } else { 0 });
    for (v, s) in rows {
        values.extend(v);
        slopes.extend(s);
    }
    Ok(LandmarkGram { values, slopes })
}

/// `K a` for the `n x n` scalar kernel matrix acting on `n x d` vectors.
pub(crate) fn apply_gram(values: &[f64], a: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * dim];
    for p in 0..n {
        let row = &values[p * n..(p + 1) * n];
        let o = &mut out[p * dim..(p + 1) * dim];
        for (q, &k) in row.iter().enumerate() {
            if k != 0.0 {
                for c in 0..dim {
                    o[c] += k * a[q * dim + c];
                }
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v(lam, x) = sum_p kappa(lam, s_p, |x - x_p|) a_p` for landmarks at
/// `positions` with controls `control` (both flattened `n x d`).
pub fn velocity<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    scales: &[f64],
    positions: &[f64],
    control: &[f64],
    lam: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let dim = x.len();
    let mut v = vec![0.0; dim];
    for (p, &s) in scales.iter().enumerate() {
        let a = &control[p * dim..(p + 1) * dim];
        if a.iter().all(|c| *c == 0.0) {
            continue;
        }
        let k = kernel
            .radial(lam, s, sq_dist(x, &positions[p * dim..(p + 1) * dim]))?
            .value;
        v.iter_mut().zip(a).for_each(|(vi, ai)| *vi += k * ai);
    }
    Ok(v)
}

/// Velocity at step `i` of a computed trajectory.
pub fn velocity_at<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    trajectory: &FlowTrajectory,
    controls: &Controls,
    i: usize,
    lam: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    velocity(
        kernel,
        &trajectory.scales,
        &trajectory.positions[i],
        controls.at(i),
        lam,
        x,
    )
}

/// Explicit Euler integration of the landmark system, accumulating the
/// kinetic energy `1/2 sum_i (1/T) a_i^T K(x_i) a_i`.
pub fn integrate_forward<K: MultiscaleKernel + ?Sized>(
    kernel: &K,
    system: &LandmarkSystem,
    controls: &Controls,
) -> Result<FlowTrajectory> {
    controls.check(system)?;
    let (n, dim, steps) = (system.len(), system.dim, controls.steps);
    let h = 1.0 / steps as f64;
    let scales = system.scales();
    let mut x = system.initial();
    let mut positions = Vec::with_capacity(steps + 1);
    let mut sq_norms = Vec::with_capacity(steps);
    positions.push(x.clone());
    for i in 0..steps {
        let a = controls.at(i);
        let gram = landmark_gram(kernel, &scales, &x, dim, false)?;
        let v = apply_gram(&gram.values, a, n, dim);
        sq_norms.push(dot(a, &v));
        x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi += h * vi);
        if let Some(p) = (0..n).find(|&p| x[p * dim..(p + 1) * dim].iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Integration {
                step: i,
                scale: scales[p],
            });
        }
        positions.push(x.clone());
    }
    let energy = 0.5 * h * sq_norms.iter().sum::<f64>();
    Ok(FlowTrajectory {
        dim,
        scales,
        positions,
        sq_norms,
        energy,
    })
}
