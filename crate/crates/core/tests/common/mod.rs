//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use mslddmm::ScaleLadder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn experiment_ladder() -> ScaleLadder {
    ScaleLadder::new((1..=20).map(|k| k as f64 / 10.0).collect()).unwrap()
}

fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let f = &f as &dyn Fn(f64) -> f64;
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Adaptive Simpson with a tolerance relative to the integral itself.
pub fn adaptive_simpson_rel(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let peak = (0..=1000)
        .map(|i| f(a + (b - a) * i as f64 / 1000.0).abs())
        .fold(0.0f64, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let rough = adaptive_simpson(&f, a, b, 1e-6 * peak * (b - a));
    adaptive_simpson(&f, a, b, rel * rough.abs().max(1e-300))
}

/// Composite Simpson rule on `n` (even) panels.
pub fn composite_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h))
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Gaussian elimination with partial pivoting on a dense row-major matrix.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// `min t` over `(beta, t)` subject to `rows[i] . (beta, t) >= rhs[i]`, by
/// enumerating every vertex (all square subsets of active rows).
pub fn lp_by_vertices(rows: &[Vec<f64>], rhs: &[f64]) -> f64 {
    let dim = rows[0].len();
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..dim).collect();
    loop {
        let a: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&i| rhs[i]).collect();
        if determinant(&a).abs() > 1e-12 {
            let z = dense_solve(a, b);
            let feasible = rows
                .iter()
                .zip(rhs)
                .all(|(r, h)| r.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>() >= h - 1e-10);
            if feasible {
                best = best.min(z[dim - 1]);
            }
        }
        // Next combination.
        let mut i = dim;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < rows.len() - dim + i {
                subset[i] += 1;
                for k in i + 1..dim {
                    subset[k] = subset[k - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn determinant(a: &[Vec<f64>]) -> f64 {
    let mut a = a.to_vec();
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(c, p);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `J0(z)` from its integral form `(1/pi) int_0^pi cos(z sin t) dt`
/// (composite trapezoid, spectrally accurate for this periodic integrand).
pub fn bessel_j0_integral(z: f64) -> f64 {
    let n = 120;
    let h = std::f64::consts::PI / n as f64;
    // Both endpoint values equal 1.
    let mut s = 1.0;
    s += (1..n)
        .map(|i| (z * (i as f64 * h).sin()).cos())
        .sum::<f64>();
    s * h / std::f64::consts::PI
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// A random registration problem: one or two base scales drawn from
/// `scales`, one to five landmarks each, one to ten steps, and random
/// controls.
pub fn random_instance(
    seed: u64,
    scales: &[f64],
) -> (mslddmm::flow::LandmarkSystem, mslddmm::flow::Controls) {
    use mslddmm::flow::{Controls, LandmarkGroup, LandmarkSystem};
    use rand::Rng;
    let mut rng = rng(seed);
    let groups = (0..rng.gen_range(1..=2))
        .map(|_| {
            let n = rng.gen_range(1..=5);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let targets = points
                .iter()
                .map(|p| p.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect())
                .collect();
            LandmarkGroup {
                scale: scales[rng.gen_range(0..scales.len())],
                points,
                targets,
            }
        })
        .collect();
    let system = LandmarkSystem::new(2, rng.gen_range(0.5..2.0), groups).unwrap();
    let mut controls = Controls::for_system(&system, rng.gen_range(1..=10));
    controls
        .values
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-0.5..0.5));
    (system, controls)
}

/// Largest per-coordinate gap between the adjoint gradient and central
/// differences with step `eps`, relative to `max(|g_i|, 1e-3 |g|_inf)`.
pub fn gradient_error<K: mslddmm::MultiscaleKernel + ?Sized>(
    kernel: &K,
    system: &mslddmm::flow::LandmarkSystem,
    controls: &mslddmm::flow::Controls,
    eps: f64,
) -> f64 {
    let objective = mslddmm::registration::Objective::new(kernel, system, controls.steps).unwrap();
    let (_, grad, _) = objective.gradient(controls).unwrap();
    let floor = 1e-3 * grad.sup_norm();
    let mut worst = 0.0f64;
    for i in 0..controls.values.len() {
        let mut plus = controls.clone();
        plus.values[i] += eps;
        let mut minus = controls.clone();
        minus.values[i] -= eps;
        let fd = (objective.evaluate(&plus).unwrap().value
            - objective.evaluate(&minus).unwrap().value)
            / (2.0 * eps);
        let g = grad.values[i];
        worst = worst.max((g - fd).abs() / g.abs().max(floor).max(f64::MIN_POSITIVE));
    }
    worst
}

/// Unit-height Gaussian of width `width` at distance `r`.
pub fn g(width: f64, r: f64) -> f64 {
    (-r * r / (2.0 * width * width)).exp()
}

/// Width of the piecewise family at `mu`, located by scanning the nodes.
pub fn piecewise_width(mu: f64) -> f64 {
    let nodes: Vec<f64> = (1..=20).map(|k| k as f64 / 10.0).collect();
    let mut w = nodes[0];
    for (i, &r) in nodes.iter().enumerate().take(nodes.len() - 1) {
        if mu >= r - 1e-15 {
            w = nodes[i];
        }
    }
    w
}

pub fn quad_continuous(a: f64, b: f64, r: f64) -> f64 {
    adaptive_simpson_rel(|mu| g(mu, r), a, b, 1e-13)
}

/// Sums Simpson integrals over the pieces between node breakpoints.
pub fn quad_piecewise(a: f64, b: f64, r: f64) -> f64 {
    let mut cuts = vec![a];
    cuts.extend(
        (1..=20)
            .map(|k| k as f64 / 10.0)
            .filter(|&x| x > a && x < b),
    );
    cuts.push(b);
    cuts.windows(2)
        .map(|w| adaptive_simpson_rel(|mu| g(piecewise_width(mu), r), w[0], w[1], 1e-13))
        .sum()
}

/// Dirac-measure kernel straight from its window definition.
pub fn dirac_oracle(
    quad: impl Fn(f64, f64, f64) -> f64,
    lead: f64,
    s0: f64,
    sigma: f64,
    lam: f64,
    lam0: f64,
    r: f64,
) -> f64 {
    let (lo, hi) = (s0.min(lam0), s0.max(lam0));
    let end = lam.max(lo).min(hi);
    let integral = if end >= s0 {
        quad(s0, end, r)
    } else {
        quad(end, s0, r)
    };
    (lead + integral) / sigma
}
