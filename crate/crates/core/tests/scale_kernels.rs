mod common;

use common::{
    adaptive_simpson, dirac_oracle, experiment_ladder, g, piecewise_width, quad_continuous,
    quad_piecewise, rel_err, rng,
};
use mslddmm::kernel::MultiscaleKernel;
use mslddmm::scale_kernels::*;
use mslddmm::{GaussianScaleFamily, ScaleMeasure};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn continuous() -> GaussianScaleFamily {
    GaussianScaleFamily::continuous(experiment_ladder(), 2)
}

fn piecewise() -> GaussianScaleFamily {
    GaussianScaleFamily::piecewise(experiment_ladder(), 2)
}

#[test]
fn gauss_integral_examples() {
    let fam = continuous();
    assert_eq!(gauss_scale_integral(&fam, 0.5, 0.5, 1.3).unwrap(), 0.0);
    assert!((gauss_scale_integral(&fam, 0.1, 2.0, 0.0).unwrap() - 1.9).abs() < 1e-15);
    let v = gauss_scale_integral(&fam, 0.2, 1.0, 0.7).unwrap();
    let oracle = adaptive_simpson(|mu| (-0.245 / (mu * mu)).exp(), 0.2, 1.0, 1e-15);
    assert!(rel_err(v, oracle) < 1e-10, "{v} vs {oracle}");
    assert!(gauss_scale_integral(&fam, 1.0, 0.2, 0.7).is_err());
}

#[test]
fn piecewise_integral_examples() {
    let fam = piecewise();
    assert_eq!(piecewise_scale_integral(&fam, 0.7, 0.7, 0.3).unwrap(), 0.0);
    assert!((piecewise_scale_integral(&fam, 0.3, 0.5, 0.0).unwrap() - 0.2).abs() < 1e-15);
    let v = piecewise_scale_integral(&fam, 0.15, 0.95, 0.5).unwrap();
    // Exact partial-interval weights: 0.05 at width 0.1, 0.1 at widths 0.2..0.8, 0.05 at 0.9.
    let mut oracle = 0.05 * g(0.1, 0.5) + 0.05 * g(0.9, 0.5);
    for k in 2..=8 {
        oracle += 0.1 * g(k as f64 / 10.0, 0.5);
    }
    assert!(rel_err(v, oracle) < 1e-14, "{v} vs {oracle}");
    assert!(piecewise_scale_integral(&fam, 0.9, 0.2, 0.1).is_err());
}

#[test]
fn closed_forms_match_quadrature_on_random_triples() {
    let mut rng = rng(7);
    let (cont, pw) = (continuous(), piecewise());
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a: f64 = rng.gen_range(0.1..2.0);
        let b: f64 = rng.gen_range(0.1..2.0);
        let r: f64 = rng.gen_range(0.0..3.0);
        let (lo, hi) = (a.min(b), a.max(b));
        let e1 = rel_err(
            gauss_scale_integral(&cont, lo, hi, r).unwrap(),
            quad_continuous(lo, hi, r),
        );
        let e2 = rel_err(
            piecewise_scale_integral(&pw, lo, hi, r).unwrap(),
            quad_piecewise(lo, hi, r),
        );
        worst = worst.max(e1).max(e2);

        let s0: f64 = rng.gen_range(0.1..2.0);
        let sigma: f64 = rng.gen_range(0.2..3.0);
        let measure = ScaleMeasure::Dirac { s0, sigma };
        let k = dirac_kernel(measure.clone(), &cont, a, b, r).unwrap();
        let o = dirac_oracle(quad_continuous, g(s0, r), s0, sigma, a, b, r);
        worst = worst.max(rel_err(k, o));
        let k = dirac_kernel(measure, &pw, a, b, r).unwrap();
        let o = dirac_oracle(
            quad_piecewise,
            g(piecewise_width(s0), r),
            s0,
            sigma,
            a,
            b,
            r,
        );
        worst = worst.max(rel_err(k, o));
    }
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}

#[test]
fn dirac_examples() {
    let fam = piecewise();
    let m = ScaleMeasure::Dirac {
        s0: 0.1,
        sigma: 1.0,
    };
    assert!((dirac_kernel(m, &fam, 2.0, 2.0, 0.0).unwrap() - 2.9).abs() < 1e-14);
    // Window collapses at lam0 = s0.
    let m = ScaleMeasure::Dirac {
        s0: 0.7,
        sigma: 2.0,
    };
    for lam in [0.1, 0.7, 1.3, 2.0] {
        let v = dirac_kernel(m.clone(), &fam, lam, 0.7, 0.4).unwrap();
        assert!((v - g(0.7, 0.4) / 2.0).abs() < 1e-15);
    }
    // Extreme atom at s2: K_{s2}/sigma + (1/sigma) int_{max}^{s2}.
    let m = ScaleMeasure::Dirac {
        s0: 2.0,
        sigma: 1.5,
    };
    let v = dirac_kernel(m, &fam, 0.55, 1.25, 0.8).unwrap();
    let o = (g(piecewise_width(2.0), 0.8) + quad_piecewise(1.25, 2.0, 0.8)) / 1.5;
    assert!(rel_err(v, o) < 1e-12);
    assert!(dirac_kernel(ScaleMeasure::Lebesgue { sigma: 1.0 }, &fam, 0.5, 0.5, 0.0).is_err());
}

#[test]
fn sum_dirac_hand_case() {
    let x = |lam: f64| (lam - 0.1) / 1.9;
    let v = sum_dirac_kernel_hat(2.0, 3.0, x, 2.0, 2.0, 2.0);
    assert!((v - 3.0 / 11.0).abs() <= 1e-14, "{v}");
    let v = sum_dirac_kernel_hat(2.0, 3.0, x, 2.0, 0.1, 0.1);
    assert!((v - 4.0 / 11.0).abs() <= 1e-14);
    assert_eq!(
        sum_dirac_kernel_hat(2.0, 3.0, x, 2.0, 0.4, 1.7),
        sum_dirac_kernel_hat(2.0, 3.0, x, 2.0, 1.7, 0.4)
    );
}

#[test]
fn integrated_dirac_matches_quadrature() {
    let (s1, s2) = (0.1, 2.0);
    let len = s2 - s1;
    let weight = |mu: f64, lo: f64, hi: f64| {
        1.0 + if mu <= lo { (mu - s1) / len } else { 0.0 }
            + if mu >= hi { (s2 - mu) / len } else { 0.0 }
    };
    let fam = continuous();
    assert!((integrated_dirac_kernel(&fam, s1, s1, 0.0).unwrap() - 1.5 * len).abs() < 1e-12);
    let mut rng = rng(11);
    for _ in 0..20 {
        let a: f64 = rng.gen_range(0.1..2.0);
        let b: f64 = rng.gen_range(0.1..2.0);
        let r: f64 = rng.gen_range(0.0..2.0);
        let (lo, hi) = (a.min(b), a.max(b));
        let f = |mu: f64| weight(mu, lo, hi) * g(mu, r);
        let o = adaptive_simpson(f, s1, lo, 1e-14)
            + adaptive_simpson(f, lo, hi, 1e-14)
            + adaptive_simpson(f, hi, s2, 1e-14);
        let v = integrated_dirac_kernel(&fam, a, b, r).unwrap();
        assert!(rel_err(v, o) < 1e-8, "{v} vs {o}");
    }
}

fn min_eig_ratio(samples: &[(f64, [f64; 2])], k: impl Fn(f64, f64, &[f64], &[f64]) -> f64) -> f64 {
    let n = samples.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        k(samples[i].0, samples[j].0, &samples[i].1, &samples[j].1)
    });
    let e = SymmetricEigen::new(m).eigenvalues;
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    min / max
}

fn kernels() -> Vec<Box<dyn MultiscaleKernel>> {
    vec![
        Box::new(
            DiracKernel::new(
                piecewise(),
                ScaleMeasure::Dirac {
                    s0: 0.9,
                    sigma: 1.0,
                },
            )
            .unwrap(),
        ),
        Box::new(
            DiracKernel::new(
                continuous(),
                ScaleMeasure::Dirac {
                    s0: 2.0,
                    sigma: 0.5,
                },
            )
            .unwrap(),
        ),
        Box::new(IntegratedDiracKernel::new(piecewise())),
        Box::new(ProductKernel {
            dim: 2,
            scale_kernel: ScaleKernel::Min,
            spatial_width: 0.5,
            warp: Warp::Identity,
        }),
    ]
}

#[test]
fn gram_matrices_are_positive() {
    let mut rng = rng(3);
    for kernel in kernels() {
        let samples: Vec<(f64, [f64; 2])> = (0..30)
            .map(|_| {
                (
                    rng.gen_range(0.1..2.0),
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let ratio = min_eig_ratio(&samples, |a, b, x, y| {
            let r2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            kernel.radial(a, b, r2).unwrap().value
        });
        assert!(ratio >= -1e-8, "{:?}: {ratio:e}", kernel.backend());
    }
    let warped = ProductKernel {
        dim: 2,
        scale_kernel: ScaleKernel::Gaussian { length: 0.5 },
        spatial_width: 1.0,
        warp: Warp::InverseScale,
    };
    let samples: Vec<(f64, [f64; 2])> = (0..20)
        .map(|_| {
            (
                rng.gen_range(0.1..2.0),
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            )
        })
        .collect();
    assert!(min_eig_ratio(&samples, |a, b, x, y| warped.eval_points(a, b, x, y)) >= -1e-8);
}

#[test]
fn product_kernel_examples() {
    let k = ProductKernel {
        dim: 2,
        scale_kernel: ScaleKernel::Min,
        spatial_width: 0.3,
        warp: Warp::InverseScale,
    };
    assert_eq!(k.eval_points(0.4, 0.4, &[0.2, 0.1], &[0.2, 0.1]), 0.4);
    assert!(k.radial(0.4, 0.5, 0.1).is_err());
    let id = ProductKernel {
        warp: Warp::Identity,
        ..k
    };
    assert_eq!(
        id.eval_points(0.4, 1.2, &[0.0, 0.3], &[0.1, 0.0]),
        id.eval_points(1.2, 0.4, &[0.0, 0.3], &[0.1, 0.0])
    );
}

proptest! {
    #[test]
    fn kernels_are_symmetric(a in 0.1f64..2.0, b in 0.1f64..2.0, r in 0.0f64..3.0) {
        for kernel in kernels() {
            let u = kernel.value(a, b, r).unwrap();
            let v = kernel.value(b, a, r).unwrap();
            prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            prop_assert!(kernel.value(a, b, 0.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn kernels_are_nonincreasing_in_distance(a in 0.1f64..2.0, b in 0.1f64..2.0) {
        for kernel in kernels() {
            let values: Vec<f64> = (0..40).map(|i| kernel.value(a, b, i as f64 * 0.1).unwrap()).collect();
            prop_assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
    }

    #[test]
    fn scale_integrals_are_additive(a in 0.1f64..2.0, b in 0.1f64..2.0, c in 0.1f64..2.0, r in 0.0f64..2.0) {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        for fam in [continuous(), piecewise()] {
            let f = |x: f64, y: f64| match fam.profile {
                mslddmm::ScaleProfile::Continuous => gauss_scale_integral(&fam, x, y, r).unwrap(),
                mslddmm::ScaleProfile::Piecewise => piecewise_scale_integral(&fam, x, y, r).unwrap(),
            };
            let whole = f(v[0], v[2]);
            prop_assert!((whole - f(v[0], v[1]) - f(v[1], v[2])).abs() <= 1e-13 * whole.max(1e-3));
        }
    }
}
