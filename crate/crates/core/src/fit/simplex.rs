//! Dense two-phase revised simplex for small standard-form programs
//!
//! `min c.u  s.t.  G u = h, u >= 0`
//!
//! The basis is refactored from scratch at every pivot (it is at most a few
//! dozen rows here), which keeps the iteration free of accumulated update
//! error. Entering columns follow Dantzig's rule with lowest-index ties and
//! fall back to Bland's rule during runs of degenerate pivots, so the pivot
//! sequence is deterministic and cannot cycle.

use crate::error::{Error, Result};

const REDUCED_COST_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-11;
const FEASIBILITY_TOL: f64 = 1e-7;
const DEGENERATE_RUN: usize = 8;
const PERTURBATION: f64 = 1e-9;

/// Standard-form program; `columns[j]` is column `j` of `G`.
#[derive(Debug, Clone)]
pub struct StandardLp {
    pub columns: Vec<Vec<f64>>,
    pub cost: Vec<f64>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Multipliers `y` with `G^T y <= c` at optimality.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Lu {
    lu: Vec<f64>,
    perm: Vec<usize>,
    m: usize,
}

impl Lu {
    fn factor(mut a: Vec<f64>, m: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..m).collect();
        for col in 0..m {
            let (piv, max) = (col..m)
                .map(|r| (r, a[r * m + col].abs()))
                .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(max > 1e-300) {
                return None;
            }
            if piv != col {
                for c in 0..m {
                    a.swap(piv * m + c, col * m + c);
                }
                perm.swap(piv, col);
            }
            let d = a[col * m + col];
            for r in col + 1..m {
                let f = a[r * m + col] / d;
                a[r * m + col] = f;
                if f != 0.0 {
                    for c in col + 1..m {
                        a[r * m + c] -= f * a[col * m + c];
                    }
                }
            }
        }
        Some(Self { lu: a, perm, m })
    }

    /// Solves `B x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..m {
            for c in 0..r {
                x[r] -= self.lu[r * m + c] * x[c];
            }
        }
        for r in (0..m).rev() {
            for c in r + 1..m {
                x[r] -= self.lu[r * m + c] * x[c];
            }
            x[r] /= self.lu[r * m + r];
        }
        x
    }

    /// Solves `B^T y = c`.
    fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut z = c.to_vec();
        for r in 0..m {
            for k in 0..r {
                z[r] -= self.lu[k * m + r] * z[k];
            }
            z[r] /= self.lu[r * m + r];
        }
        for r in (0..m).rev() {
            for k in r + 1..m {
                z[r] -= self.lu[k * m + r] * z[k];
            }
        }
        let mut y = vec![0.0; m];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }
}

struct Tableau<'a> {
    cols: &'a [Vec<f64>],
    m: usize,
    basis: Vec<usize>,
    iterations: usize,
}

impl Tableau<'_> {
    /// Column `j`; indices past the structural columns are artificial units.
    fn column(&self, j: usize) -> Vec<f64> {
        if j < self.cols.len() {
            self.cols[j].clone()
        } else {
            let mut e = vec![0.0; self.m];
            e[j - self.cols.len()] = 1.0;
            e
        }
    }

    fn factor(&self) -> Result<Lu> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            let col = self.column(j);
            for r in 0..m {
                b[r * m + c] = col[r];
            }
        }
        Lu::factor(b, m).ok_or_else(|| Error::LinearProgram("singular basis".into()))
    }

    fn dot_column(&self, y: &[f64], j: usize) -> f64 {
        if j < self.cols.len() {
            self.cols[j].iter().zip(y).map(|(a, b)| a * b).sum()
        } else {
            y[j - self.cols.len()]
        }
    }

    /// Runs simplex iterations with `cost` over candidate columns
    /// `0..allowed` until optimal.
    fn optimize(
        &mut self,
        cost: &[f64],
        rhs: &[f64],
        allowed: usize,
        max_iter: usize,
    ) -> Result<()> {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return Err(Error::LinearProgram(format!(
                    "no convergence after {max_iter} pivots"
                )));
            }
            let lu = self.factor()?;
            let xb = lu.solve(rhs);
            let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
            let y = lu.solve_transpose(&cb);
            let mut in_basis = vec![false; cost.len()];
            for &j in &self.basis {
                in_basis[j] = true;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -REDUCED_COST_TOL;
            for j in 0..allowed {
                if in_basis[j] {
                    continue;
                }
                let d = cost[j] - self.dot_column(&y, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(e) = entering else { return Ok(()) };
            let w = lu.solve(&self.column(e));
            let leave = ratio_test(&w, &xb, &self.basis, bland);
            let Some((li, step)) = leave else {
                return Err(Error::LinearProgram("unbounded objective".into()));
            };
            degenerate = if step <= 1e-15 { degenerate + 1 } else { 0 };
            self.basis[li] = e;
            self.iterations += 1;
        }
    }
}

/// Leaving row for entering direction `w`: minimum ratio over pivots above
/// a relative tolerance; near-ties go to the largest pivot, or to the lowest
/// basic index in Bland mode.
fn ratio_test(w: &[f64], xb: &[f64], basis: &[usize], bland: bool) -> Option<(usize, f64)> {
    let wmax = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = PIVOT_TOL.max(1e-9 * wmax);
    let candidates = || (0..w.len()).filter(move |&i| w[i] > tol);
    let ratio = |i: usize| xb[i].max(0.0) / w[i];
    let theta = candidates().map(ratio).fold(f64::INFINITY, f64::min);
    let ties = || candidates().filter(|&i| ratio(i) <= theta * (1.0 + 1e-12));
    let pick = if bland {
        ties().min_by_key(|&i| basis[i])
    } else {
        ties().max_by(|&a, &b| w[a].total_cmp(&w[b]).then(basis[b].cmp(&basis[a])))
    };
    pick.map(|i| (i, ratio(i)))
}

pub fn solve(lp: &StandardLp) -> Result<LpSolution> {
    let m = lp.rhs.len();
    let n = lp.columns.len();
    if lp.cost.len() != n || lp.columns.iter().any(|c| c.len() != m) {
        return Err(Error::LinearProgram(
            "inconsistent program dimensions".into(),
        ));
    }
    // Flip rows so that h >= 0.
    let flip: Vec<f64> = lp
        .rhs
        .iter()
        .map(|&h| if h < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let cols: Vec<Vec<f64>> = lp
        .columns
        .iter()
        .map(|c| c.iter().zip(&flip).map(|(a, s)| a * s).collect())
        .collect();
    let rhs: Vec<f64> = lp.rhs.iter().zip(&flip).map(|(a, s)| a * s).collect();
    // Deterministic distinct perturbation of h against degenerate stalling.
    // It tilts only the dual objective; a basis optimal for all small enough
    // perturbations along this ray is optimal for the exact h.
    let hscale = rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let work_rhs: Vec<f64> = rhs
        .iter()
        .enumerate()
        .map(|(i, h)| {
            h + PERTURBATION * hscale * (1.0 + (0.618_033_988_749_895 * (i + 1) as f64).fract())
        })
        .collect();
    let max_iter = 50 * (n + m) + 1000;

    let mut t = Tableau {
        cols: &cols,
        m,
        basis: (n..n + m).collect(),
        iterations: 0,
    };

    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; n + m];
    phase1[n..].iter_mut().for_each(|c| *c = 1.0);
    t.optimize(&phase1, &work_rhs, n, max_iter)?;
    let lu = t.factor()?;
    let xb = lu.solve(&work_rhs);
    let infeas: f64 = t
        .basis
        .iter()
        .zip(&xb)
        .filter(|(&j, _)| j >= n)
        .map(|(_, x)| x.abs())
        .sum();
    if infeas > FEASIBILITY_TOL * hscale {
        return Err(Error::LinearProgram(format!(
            "infeasible (artificial mass {infeas:e})"
        )));
    }
    // Pivot remaining (zero-level) artificials out where possible.
    for i in 0..m {
        if t.basis[i] < n {
            continue;
        }
        let lu = t.factor()?;
        let mut unit = vec![0.0; m];
        unit[i] = 1.0;
        let row = lu.solve_transpose(&unit);
        let in_basis: Vec<usize> = t.basis.clone();
        if let Some(j) =
            (0..n).find(|&j| !in_basis.contains(&j) && t.dot_column(&row, j).abs() > 1e-9)
        {
            t.basis[i] = j;
        }
    }

    // Phase 2.
    let mut cost = lp.cost.clone();
    cost.extend(std::iter::repeat_n(0.0, m));
    t.optimize(&cost, &work_rhs, n, max_iter)?;

    let lu = t.factor()?;
    let xb = lu.solve(&rhs);
    let mut x = vec![0.0; n];
    for (&j, &v) in t.basis.iter().zip(&xb) {
        if j < n {
            x[j] = v.max(0.0);
        }
    }
    let cb: Vec<f64> = t.basis.iter().map(|&j| cost[j]).collect();
    let yf = lu.solve_transpose(&cb);
    let duals = yf.iter().zip(&flip).map(|(y, s)| y * s).collect();
    let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
    Ok(LpSolution {
        x,
        duals,
        objective,
        iterations: t.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program() {
        // min -x1 - 2 x2  s.t. x1 + x2 + s1 = 4, x2 + s2 = 3
        let lp = StandardLp {
            columns: vec![
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            cost: vec![-1.0, -2.0, 0.0, 0.0],
            rhs: vec![4.0, 3.0],
        };
        let s = solve(&lp).unwrap();
        assert!((s.objective + 7.0).abs() < 1e-12);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 3.0).abs() < 1e-12);
        // Dual feasibility G^T y <= c.
        for (col, c) in lp.columns.iter().zip(&lp.cost) {
            let gy: f64 = col.iter().zip(&s.duals).map(|(a, b)| a * b).sum();
            assert!(gy <= c + 1e-12);
        }
    }

    #[test]
    fn negative_rhs_and_infeasible() {
        // -x1 = -2 -> x1 = 2
        let lp = StandardLp {
            columns: vec![vec![-1.0]],
            cost: vec![1.0],
            rhs: vec![-2.0],
        };
        let s = solve(&lp).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        let bad = StandardLp {
            columns: vec![vec![1.0]],
            cost: vec![1.0],
            rhs: vec![-2.0],
        };
        assert!(matches!(solve(&bad), Err(Error::LinearProgram(_))));
    }

    #[test]
    fn unbounded_is_reported() {
        // min -x1 s.t. x1 - x2 = 1
        let lp = StandardLp {
            columns: vec![vec![1.0], vec![-1.0]],
            cost: vec![-1.0, 0.0],
            rhs: vec![1.0],
        };
        assert!(matches!(solve(&lp), Err(Error::LinearProgram(_))));
    }
}
