mod common;

use mslddmm::flow::{Controls, LandmarkGroup, LandmarkSystem};
use mslddmm::registration::{optimize, Method, Objective, OptimizerOptions, RegistrationRecord};
use mslddmm::scale_kernels::{DiracKernel, ProductKernel, ScaleKernel, Warp};
use mslddmm::{GaussianScaleFamily, ScaleMeasure, ScaleProfile};
use proptest::prelude::*;

fn dirac() -> DiracKernel {
    let family = GaussianScaleFamily::new(common::experiment_ladder(), 2, ScaleProfile::Piecewise);
    DiracKernel::new(
        family,
        ScaleMeasure::Dirac {
            s0: 1.0,
            sigma: 1.0,
        },
    )
    .unwrap()
}

fn ring(n: usize, r: f64, wobble: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let rr = r + wobble * (3.0 * t).cos();
            vec![rr * t.cos(), rr * t.sin()]
        })
        .collect()
}

fn ring_system(weight: f64) -> LandmarkSystem {
    let groups = vec![
        LandmarkGroup {
            scale: 0.5,
            points: ring(6, 1.0, 0.0),
            targets: ring(6, 1.0, 0.2),
        },
        LandmarkGroup {
            scale: 1.5,
            points: ring(4, 0.5, 0.0),
            targets: ring(4, 0.7, 0.0),
        },
    ];
    LandmarkSystem::new(2, weight, groups).unwrap()
}

fn options(max_iters: usize) -> OptimizerOptions {
    OptimizerOptions {
        max_iters,
        ..Default::default()
    }
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let kernel = dirac();
    let scales = [0.1, 0.5, 1.0, 1.4, 2.0];
    for seed in 0..24 {
        let (system, controls) = common::random_instance(seed, &scales);
        let err = common::gradient_error(&kernel, &system, &controls, 1e-6);
        assert!(err <= 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn adjoint_gradient_is_tight_on_short_horizons() {
    let kernel = ProductKernel {
        dim: 2,
        scale_kernel: ScaleKernel::Gaussian { length: 0.8 },
        spatial_width: 0.6,
        warp: Warp::Identity,
    };
    let system = ring_system(1.3);
    let mut controls = Controls::for_system(&system, 5);
    controls
        .values
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = 0.3 * (0.7 * i as f64).sin());
    let err = common::gradient_error(&kernel, &system, &controls, 1e-6);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn costates_end_at_the_matching_gradient() {
    let kernel = dirac();
    let system = ring_system(2.0);
    let objective = Objective::new(&kernel, &system, 4).unwrap();
    let (eval, _, adjoint) = objective.gradient(&objective.zero_controls()).unwrap();
    let end = adjoint.costates.last().unwrap();
    for ((p, x), t) in end
        .iter()
        .zip(eval.trajectory.endpoint())
        .zip(system.targets())
    {
        assert!((p + 4.0 * (x - t)).abs() < 1e-15);
    }
    assert_eq!(adjoint.costates.len(), 5);
}

#[test]
fn registration_reduces_the_objective_monotonically() {
    let kernel = dirac();
    let system = ring_system(1.0);
    let objective = Objective::new(&kernel, &system, 10).unwrap();
    let res = optimize(&objective, &objective.zero_controls(), &options(200)).unwrap();
    assert!(res.converged(), "{:?}", res.stop);
    assert!(res.history.windows(2).all(|w| w[1].value <= w[0].value));
    let before: Vec<f64> = objective
        .evaluate(&objective.zero_controls())
        .unwrap()
        .group_rmse(&system);
    let after = res.evaluation.group_rmse(&system);
    assert!(
        after.iter().zip(&before).all(|(a, b)| a < b),
        "{before:?} {after:?}"
    );
    assert!(res.history.last().unwrap().grad_sup < res.history[0].grad_sup);
}

#[test]
fn gradient_descent_also_descends() {
    let kernel = dirac();
    let system = ring_system(1.0);
    let objective = Objective::new(&kernel, &system, 4).unwrap();
    let opts = OptimizerOptions {
        method: Method::GradientDescent,
        max_iters: 30,
        ..Default::default()
    };
    let res = optimize(&objective, &objective.zero_controls(), &opts).unwrap();
    assert!(res.history.windows(2).all(|w| w[1].value <= w[0].value));
    assert!(res.evaluation.value < res.history[0].value);
}

#[test]
fn zero_weight_drives_the_energy_to_zero() {
    let kernel = dirac();
    let system = ring_system(0.0);
    let objective = Objective::new(&kernel, &system, 6).unwrap();
    let mut init = objective.zero_controls();
    init.values
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = 0.4 * (1.3 * i as f64).cos());
    let res = optimize(
        &objective,
        &init,
        &OptimizerOptions {
            tol: 1e-14,
            ..options(500)
        },
    )
    .unwrap();
    assert!(res.evaluation.energy <= 1e-8, "{}", res.evaluation.energy);
    assert_eq!(res.evaluation.matching, 0.0);
}

#[test]
fn landmark_order_does_not_matter() {
    let kernel = dirac();
    let system = ring_system(1.0);
    let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
    let mut shuffled = system.clone();
    shuffled.groups[0].points = perm
        .iter()
        .map(|&i| system.groups[0].points[i].clone())
        .collect();
    shuffled.groups[0].targets = perm
        .iter()
        .map(|&i| system.groups[0].targets[i].clone())
        .collect();

    let permute = |c: &Controls| {
        let mut out = c.clone();
        for step in 0..c.steps {
            for (j, &i) in perm.iter().enumerate() {
                out.at_mut(step)[2 * j..2 * j + 2].copy_from_slice(&c.at(step)[2 * i..2 * i + 2]);
            }
        }
        out
    };

    // The objective and its gradient are equivariant up to summation order.
    let a = Objective::new(&kernel, &system, 5).unwrap();
    let b = Objective::new(&kernel, &shuffled, 5).unwrap();
    let mut probe = a.zero_controls();
    probe
        .values
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = 0.2 * (0.9 * i as f64).sin());
    let (ea, ga, _) = a.gradient(&probe).unwrap();
    let (eb, gb, _) = b.gradient(&permute(&probe)).unwrap();
    assert!((ea.value - eb.value).abs() < 1e-13 * ea.value);
    let gp = permute(&ga);
    assert!(gp
        .values
        .iter()
        .zip(&gb.values)
        .all(|(x, y)| (x - y).abs() < 1e-13));

    // Optimized to a tight tolerance, both orderings land on the same
    // minimizer.
    let tight = OptimizerOptions {
        tol: 1e-13,
        ..options(400)
    };
    let ra = optimize(&a, &a.zero_controls(), &tight).unwrap();
    let rb = optimize(&b, &b.zero_controls(), &tight).unwrap();
    assert!((ra.evaluation.value - rb.evaluation.value).abs() < 1e-10 * ra.evaluation.value);
    let rp = permute(&ra.controls);
    assert!(rp
        .values
        .iter()
        .zip(&rb.controls.values)
        .all(|(x, y)| (x - y).abs() < 1e-5));
}

#[test]
fn record_and_history_round_trip() {
    let kernel = dirac();
    let system = ring_system(1.0);
    let objective = Objective::new(&kernel, &system, 3).unwrap();
    let res = optimize(&objective, &objective.zero_controls(), &options(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rec = RegistrationRecord {
        system: system.clone(),
        controls: res.controls.clone(),
    };
    rec.write_json(&dir.path().join("controls.json")).unwrap();
    assert_eq!(
        RegistrationRecord::read_json(&dir.path().join("controls.json")).unwrap(),
        rec
    );

    res.write_history_csv(&dir.path().join("history.csv"))
        .unwrap();
    let text = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(text.lines().count(), res.history.len() + 1);
    assert!(text.starts_with("iteration,value,energy,matching,step,grad_sup\n"));
}

#[test]
fn mismatched_controls_are_rejected() {
    let kernel = dirac();
    let system = ring_system(1.0);
    let objective = Objective::new(&kernel, &system, 3).unwrap();
    assert!(objective
        .evaluate(&Controls::for_system(&system, 4))
        .is_err());
    assert!(Objective::new(&kernel, &system, 0).is_err());
}

fn rigid(system: &LandmarkSystem, angle: f64, shift: [f64; 2]) -> LandmarkSystem {
    let (c, s) = (angle.cos(), angle.sin());
    let map = |p: &Vec<f64>| {
        vec![
            c * p[0] - s * p[1] + shift[0],
            s * p[0] + c * p[1] + shift[1],
        ]
    };
    let groups = system
        .groups
        .iter()
        .map(|g| LandmarkGroup {
            scale: g.scale,
            points: g.points.iter().map(map).collect(),
            targets: g.targets.iter().map(map).collect(),
        })
        .collect();
    LandmarkSystem::new(2, system.weight, groups).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn registration_commutes_with_rigid_motions(angle in -3.1f64..3.1, tx in -1.0f64..1.0, ty in -1.0f64..1.0) {
        let kernel = dirac();
        let system = LandmarkSystem::new(2, 1.0, vec![
            LandmarkGroup { scale: 0.3, points: vec![vec![0.0, 0.0]], targets: vec![vec![0.3, 0.1]] },
            LandmarkGroup { scale: 1.8, points: vec![vec![0.6, -0.2]], targets: vec![vec![0.4, -0.5]] },
        ]).unwrap();
        let moved = rigid(&system, angle, [tx, ty]);
        let a = Objective::new(&kernel, &system, 4).unwrap();
        let b = Objective::new(&kernel, &moved, 4).unwrap();
        let ra = optimize(&a, &a.zero_controls(), &options(50)).unwrap();
        let rb = optimize(&b, &b.zero_controls(), &options(50)).unwrap();
        prop_assert!((ra.evaluation.value - rb.evaluation.value).abs() <= 1e-10);
        let (c, s) = (angle.cos(), angle.sin());
        for (u, v) in ra.controls.values.chunks(2).zip(rb.controls.values.chunks(2)) {
            prop_assert!((c * u[0] - s * u[1] - v[0]).abs() <= 1e-8);
            prop_assert!((s * u[0] + c * u[1] - v[1]).abs() <= 1e-8);
        }
    }
}
