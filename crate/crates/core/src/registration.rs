//! Landmark registration objective, its exact discrete gradient, and the
//! line-search optimizers.
//!
//! The objective is
//! `F(a) = 1/2 sum_i (1/T) a_i^T K(x_i) a_i + w sum_p |x_p(1) - target_p|^2`
//! under the Euler dynamics of [`crate::flow`]. The gradient is the reverse
//! sweep of those same Euler steps, so it is exact for the discretized
//! problem.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    apply_gram, integrate_forward, landmark_gram, Controls, FlowTrajectory, LandmarkSystem,
};
use crate::kernel::MultiscaleKernel;

/// Objective components for one set of controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub energy: f64,
    pub matching: f64,
    pub trajectory: FlowTrajectory,
}

impl Evaluation {
    /// Root-mean-square endpoint error of each landmark group.
    pub fn group_rmse(&self, system: &LandmarkSystem) -> Vec<f64> {
        let d = system.dim;
        let end = self.trajectory.endpoint();
        let targets = system.targets();
        system
            .group_ranges()
            .into_iter()
            .map(|r| {
                let n = r.len();
                if n == 0 {
                    return 0.0;
                }
                let s: f64 = (r.start * d..r.end * d)
                    .map(|i| (end[i] - targets[i]).powi(2))
                    .sum();
                (s / n as f64).sqrt()
            })
            .collect()
    }
}

/// Costates `p(t_i) = -lambda_i` of the discrete adjoint sweep; the terminal
/// one is `-2 w (x(1) - target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    /// `steps + 1` snapshots flattened `landmarks x dim`.
    pub costates: Vec<Vec<f64>>,
}

pub struct Objective<'a, K: MultiscaleKernel + ?Sized> {
    pub kernel: &'a K,
    pub system: &'a LandmarkSystem,
    pub steps: usize,
}

impl<'a, K: MultiscaleKernel + ?Sized> Objective<'a, K> {
    pub fn new(kernel: &'a K, system: &'a LandmarkSystem, steps: usize) -> Result<Self> {
        system.validate()?;
        if steps == 0 {
            return Err(Error::Domain("need at least one time step".into()));
        }
        if kernel.dim() != system.dim {
            return Err(Error::Shape(format!(
                "kernel in R^{}, landmarks in R^{}",
                kernel.dim(),
                system.dim
            )));
        }
        Ok(Self {
            kernel,
            system,
            steps,
        })
    }

    pub fn zero_controls(&self) -> Controls {
        Controls::for_system(self.system, self.steps)
    }

    fn check(&self, controls: &Controls) -> Result<()> {
        controls.check(self.system)?;
        if controls.steps != self.steps {
            return Err(Error::Shape(format!(
                "{} control steps, objective uses {}",
                controls.steps, self.steps
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, controls: &Controls) -> Result<Evaluation> {
        self.check(controls)?;
        let trajectory = integrate_forward(self.kernel, self.system, controls)?;
        let targets = self.system.targets();
        let matching = self.system.weight
            * trajectory
                .endpoint()
                .iter()
                .zip(&targets)
                .map(|(x, t)| (x - t) * (x - t))
                .sum::<f64>();
        let energy = trajectory.energy;
        Ok(Evaluation {
            value: energy + matching,
            energy,
            matching,
            trajectory,
        })
    }

    /// Value, gradient with respect to every `a_p(t_i)`, and costates.
    pub fn gradient(&self, controls: &Controls) -> Result<(Evaluation, Controls, AdjointState)> {
        let eval = self.evaluate(controls)?;
        let (n, d, steps) = (self.system.len(), self.system.dim, self.steps);
        let h = 1.0 / steps as f64;
        let scales = &eval.trajectory.scales;
        let targets = self.system.targets();
        let w = self.system.weight;

        let mut lam: Vec<f64> = eval
            .trajectory
            .endpoint()
            .iter()
            .zip(&targets)
            .map(|(x, t)| 2.0 * w * (x - t))
            .collect();
        let mut costates = vec![Vec::new(); steps + 1];
        costates[steps] = lam.iter().map(|v| -v).collect();
        let mut grad = Controls::zeros(steps, n, d);

        for i in (0..steps).rev() {
            let x = &eval.trajectory.positions[i];
            let a = controls.at(i);
            let gram = landmark_gram(self.kernel, scales, x, d, true)?;
            let kt = transpose(&gram.values, n);
            // d/da_i of h lam.K a + h/2 a.K a.
            let kt_lam = apply_gram(&kt, &lam, n, d);
            let k_a = apply_gram(&gram.values, a, n, d);
            let kt_a = apply_gram(&kt, a, n, d);
            let g = grad.at_mut(i);
            for c in 0..n * d {
                g[c] = h * (kt_lam[c] + 0.5 * (k_a[c] + kt_a[c]));
            }
            // d/dx_i of the same terms through K(x_i).
            let mut next = lam.clone();
            for p in 0..n {
                let xp = &x[p * d..(p + 1) * d];
                let (lp, ap) = (&lam[p * d..(p + 1) * d], &a[p * d..(p + 1) * d]);
                let mut acc = vec![0.0; d];
                for q in 0..n {
                    if q == p {
                        continue;
                    }
                    let (lq, aq) = (&lam[q * d..(q + 1) * d], &a[q * d..(q + 1) * d]);
                    let c_pq = dot(lp, aq) + 0.5 * dot(ap, aq);
                    let c_qp = dot(lq, ap) + 0.5 * dot(aq, ap);
                    let coef =
                        2.0 * (gram.slopes[p * n + q] * c_pq + gram.slopes[q * n + p] * c_qp);
                    if coef != 0.0 {
                        let xq = &x[q * d..(q + 1) * d];
                        for c in 0..d {
                            acc[c] += coef * (xp[c] - xq[c]);
                        }
                    }
                }
                for c in 0..d {
                    next[p * d + c] += h * acc[c];
                }
            }
            lam = next;
            costates[i] = lam.iter().map(|v| -v).collect();
        }
        Ok((eval, grad, AdjointState { costates }))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            t[q * n + p] = m[p * n + q];
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Lbfgs { memory: usize },
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub method: Method,
    pub max_iters: usize,
    /// Stop when the relative decrease or the gradient sup-norm drops below.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            method: Method::Lbfgs { memory: 10 },
            max_iters: 1000,
            tol: 1e-8,
            armijo: 1e-4,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub value: f64,
    pub energy: f64,
    pub matching: f64,
    /// Accepted step length (0 for the initial point).
    pub step: f64,
    pub grad_sup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SmallGradient,
    SmallDecrease,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub controls: Controls,
    pub evaluation: Evaluation,
    pub history: Vec<HistoryEntry>,
    pub stop: StopReason,
}

impl OptimizationResult {
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    pub fn converged(&self) -> bool {
        matches!(
            self.stop,
            StopReason::SmallGradient | StopReason::SmallDecrease
        )
    }

    /// `iteration,value,energy,matching,step,grad_sup`.
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,value,energy,matching,step,grad_sup")?;
        for h in &self.history {
            writeln!(
                f,
                "{},{:e},{:e},{:e},{:e},{:e}",
                h.iteration, h.value, h.energy, h.matching, h.step, h.grad_sup
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

struct Memory {
    cap: usize,
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if self.cap == 0 || !(sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt()) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion for `-H g`; plain `-g / |g|` without history.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let Some((s_last, y_last, _)) = self.pairs.back() else {
            let norm = dot(g, g).sqrt();
            return g.iter().map(|v| -v / norm).collect();
        };
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = dot(s_last, y_last) / dot(y_last, y_last);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

fn entry(iteration: usize, e: &Evaluation, step: f64, g: &Controls) -> HistoryEntry {
    HistoryEntry {
        iteration,
        value: e.value,
        energy: e.energy,
        matching: e.matching,
        step,
        grad_sup: g.sup_norm(),
    }
}

/// Descent with Armijo backtracking (halving). The history is monotone
/// nonincreasing; a failed line search returns the best iterate.
pub fn optimize<K: MultiscaleKernel + ?Sized>(
    objective: &Objective<K>,
    init: &Controls,
    options: &OptimizerOptions,
) -> Result<OptimizationResult> {
    let (mut controls, mut eval) = (init.clone(), objective.evaluate(init)?);
    if !eval.value.is_finite() {
        return Err(Error::Domain("initial objective is not finite".into()));
    }
    let (_, mut grad, _) = objective.gradient(&controls)?;
    let mut history = vec![entry(0, &eval, 0.0, &grad)];
    let cap = match options.method {
        Method::Lbfgs { memory } => memory,
        Method::GradientDescent => 0,
    };
    let mut memory = Memory {
        cap,
        pairs: Default::default(),
    };
    let mut last_step = 1.0f64;

    let stop = 'outer: loop {
        if grad.sup_norm() < options.tol {
            break StopReason::SmallGradient;
        }
        if history.len() > options.max_iters {
            break StopReason::MaxIterations;
        }
        let g = &grad.values;
        let mut dir = memory.direction(g);
        let mut slope = dot(g, &dir);
        if !(slope < 0.0) {
            memory.pairs.clear();
            dir = memory.direction(g);
            slope = dot(g, &dir);
        }
        // Quasi-Newton directions are tried at unit length first; steepest
        // descent reuses a multiple of the last accepted step.
        let mut alpha = if memory.pairs.is_empty() {
            (2.0 * last_step).min(1e6)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let mut trial = controls.clone();
            trial
                .values
                .iter_mut()
                .zip(&dir)
                .for_each(|(c, d)| *c += alpha * d);
            if let Ok(e) = objective.evaluate(&trial) {
                if e.value.is_finite()
                    && e.value <= eval.value + options.armijo * alpha * slope
                    && e.value < eval.value
                {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, e)) = accepted else {
            if !memory.pairs.is_empty() {
                memory.pairs.clear();
                continue 'outer;
            }
            break StopReason::LineSearchFailed;
        };
        let (_, g_new, _) = objective.gradient(&trial)?;
        let s: Vec<f64> = trial
            .values
            .iter()
            .zip(&controls.values)
            .map(|(a, b)| a - b)
            .collect();
        let y: Vec<f64> = g_new
            .values
            .iter()
            .zip(&grad.values)
            .map(|(a, b)| a - b)
            .collect();
        memory.push(s, y);
        let decrease = (eval.value - e.value) / eval.value.abs().max(f64::MIN_POSITIVE);
        last_step = alpha;
        controls = trial;
        eval = e;
        grad = g_new;
        history.push(entry(history.len(), &eval, alpha, &grad));
        if decrease < options.tol {
            break StopReason::SmallDecrease;
        }
    };
    Ok(OptimizationResult {
        controls,
        evaluation: eval,
        history,
        stop,
    })
}

/// Converged controls together with the system they drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub system: LandmarkSystem,
    pub controls: Controls,
}

impl RegistrationRecord {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let rec: Self =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        rec.system.validate()?;
        rec.controls.check(&rec.system)?;
        Ok(rec)
    }
}
