mod common;

use mslddmm::flow::integrate_forward;
use mslddmm::flow::{
    inverse_points, jacobian_determinants, residual_composition_error, residual_maps,
    transport_grid, transport_points, velocity, Controls, DeformationField, Grid2, LandmarkGroup,
    LandmarkSystem,
};
use mslddmm::scale_kernels::{DiracKernel, ProductKernel, ScaleKernel, Warp};
use mslddmm::{GaussianScaleFamily, ScaleMeasure, ScaleProfile};
use proptest::prelude::*;
use rand::Rng;

fn product(width: f64) -> ProductKernel {
    ProductKernel {
        dim: 2,
        scale_kernel: ScaleKernel::Min,
        spatial_width: width,
        warp: Warp::Identity,
    }
}

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

fn group(scale: f64, points: &[[f64; 2]]) -> LandmarkGroup {
    LandmarkGroup {
        scale,
        points: points.iter().map(|p| p.to_vec()).collect(),
        targets: points.iter().map(|p| p.to_vec()).collect(),
    }
}

fn two_scale_system() -> LandmarkSystem {
    let fine = group(0.1, &[[0.0, 0.0], [0.4, 0.1], [-0.3, 0.5]]);
    let coarse = group(2.0, &[[0.5, -0.5], [-0.6, -0.2]]);
    LandmarkSystem::new(2, 1.0, vec![fine, coarse]).unwrap()
}

/// `a_p(t)` sampled at the left end of each Euler step.
fn smooth_controls(system: &LandmarkSystem, steps: usize, amp: f64) -> Controls {
    let mut c = Controls::for_system(system, steps);
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        for (p, a) in c.at_mut(i).chunks_mut(2).enumerate() {
            let ph = p as f64;
            a[0] = amp * (std::f64::consts::PI * t + ph).cos();
            a[1] = amp * (2.0 * t + 0.5 * ph).sin();
        }
    }
    c
}

fn random_controls(system: &LandmarkSystem, steps: usize, amp: f64, seed: u64) -> Controls {
    let mut rng = common::rng(seed);
    let mut c = Controls::for_system(system, steps);
    c.values
        .iter_mut()
        .for_each(|v| *v = amp * rng.gen_range(-1.0..1.0));
    c
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn zero_controls_leave_everything_in_place() {
    let kernel = dirac();
    let system = two_scale_system();
    let controls = Controls::for_system(&system, 7);
    let traj = integrate_forward(&kernel, &system, &controls).unwrap();
    assert_eq!(traj.positions.len(), 8);
    assert!(traj.positions.iter().all(|p| *p == system.initial()));
    assert_eq!(traj.energy, 0.0);
    let grid = Grid2::new(9, 7, [-1.0, -1.0], [1.0, 1.0]).unwrap();
    for lam in [0.1, 0.7, 2.0] {
        let field = transport_grid(&kernel, &traj, &controls, lam, &grid).unwrap();
        assert_eq!(field.mapped, grid.points());
        assert!(field.log_jacobian().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(field.displacement_sup(), 0.0);
    }
}

#[test]
fn velocity_and_single_step_by_hand() {
    let kernel = product(0.5);
    let system = LandmarkSystem::new(2, 1.0, vec![group(0.3, &[[0.0, 0.0]])]).unwrap();
    let v = velocity(&kernel, &[0.3], &[0.0, 0.0], &[1.0, 2.0], 0.5, &[0.3, 0.4]).unwrap();
    let k = 0.3 * (-0.5f64).exp();
    assert!((v[0] - k).abs() < 1e-15 && (v[1] - 2.0 * k).abs() < 1e-15);

    let controls = Controls {
        steps: 1,
        landmarks: 1,
        dim: 2,
        values: vec![1.0, 2.0],
    };
    let traj = integrate_forward(&kernel, &system, &controls).unwrap();
    assert!(sup_gap(traj.endpoint(), &[0.3, 0.6]) < 1e-15);
    assert!((traj.energy - 0.75).abs() < 1e-15);
}

#[test]
fn euler_endpoints_converge_at_first_order() {
    let kernel = dirac();
    let system = two_scale_system();
    let ends: Vec<Vec<f64>> = [20, 40, 80]
        .iter()
        .map(|&t| {
            integrate_forward(&kernel, &system, &smooth_controls(&system, t, 0.5))
                .unwrap()
                .endpoint()
                .to_vec()
        })
        .collect();
    let ratio = sup_gap(&ends[0], &ends[1]) / sup_gap(&ends[1], &ends[2]);
    assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn inverse_round_trip_shrinks_with_step_count() {
    let kernel = dirac();
    let system = two_scale_system();
    let pts: Vec<f64> = (0..25)
        .flat_map(|i| [-1.0 + 0.5 * (i % 5) as f64, -1.0 + 0.5 * (i / 5) as f64])
        .collect();
    let errs: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|&t| {
            let c = smooth_controls(&system, t, 0.8);
            let traj = integrate_forward(&kernel, &system, &c).unwrap();
            let back = inverse_points(&kernel, &traj, &c, 0.5, &pts).unwrap();
            sup_gap(
                &transport_points(&kernel, &traj, &c, 0.5, &back).unwrap(),
                &pts,
            )
        })
        .collect();
    assert!(errs[0] > 0.0);
    assert!(
        errs[1] < 0.7 * errs[0] && errs[2] < 0.7 * errs[1],
        "{errs:?}"
    );
}

#[test]
fn residuals_compose_to_the_coarsest_map() {
    let kernel = dirac();
    let system = two_scale_system();
    let c = smooth_controls(&system, 20, 0.5);
    let traj = integrate_forward(&kernel, &system, &c).unwrap();
    let pts: Vec<f64> = (0..16)
        .flat_map(|i| [-0.9 + 0.6 * (i % 4) as f64, -0.9 + 0.6 * (i / 4) as f64])
        .collect();

    let single = residual_composition_error(&kernel, &traj, &c, &[0.7], &pts).unwrap();
    assert_eq!(single.composition_error, 0.0);

    let nodes = [0.1, 0.5, 1.0, 1.5, 2.0];
    let check = residual_composition_error(&kernel, &traj, &c, &nodes, &pts).unwrap();
    assert!(check.inverse_error > 0.0);
    assert!(check.ratio() <= 10.0, "{check:?}");

    let grid = Grid2::new(6, 6, [-1.0, -1.0], [1.0, 1.0]).unwrap();
    let maps = residual_maps(&kernel, &traj, &c, &nodes, &grid).unwrap();
    let first = transport_grid(&kernel, &traj, &c, 0.1, &grid).unwrap();
    assert_eq!(maps.len(), nodes.len());
    assert_eq!(maps[0].mapped, first.mapped);
}

#[test]
fn jacobian_of_known_maps() {
    let grid = Grid2::new(11, 9, [-1.0, -2.0], [2.0, 1.0]).unwrap();
    let pts = grid.points();
    let identity = DeformationField::new(1.0, grid, pts.clone()).unwrap();
    assert!(identity.log_jacobian().iter().all(|v| v.abs() < 1e-12));

    let doubled: Vec<f64> = pts.iter().map(|v| 2.0 * v).collect();
    let field = DeformationField::new(1.0, grid, doubled).unwrap();
    assert!(field
        .log_jacobian()
        .iter()
        .all(|v| (v - 4f64.ln()).abs() < 1e-12));

    // (x + 0.1 x^2, y + 0.2 x y) has determinant (1 + 0.2 x)^2; the
    // differences are exact on quadratics.
    let poly: Vec<f64> = pts
        .chunks(2)
        .flat_map(|p| [p[0] + 0.1 * p[0] * p[0], p[1] + 0.2 * p[0] * p[1]])
        .collect();
    let det = jacobian_determinants(&grid, &poly);
    for (p, d) in pts.chunks(2).zip(&det) {
        assert!((d - (1.0 + 0.2 * p[0]).powi(2)).abs() < 1e-12);
    }

    let mut folded = pts.clone();
    folded.iter_mut().step_by(2).for_each(|x| *x = -*x);
    let field = DeformationField::new(1.0, grid, folded).unwrap();
    assert_eq!(field.folded().len(), grid.len());
    assert!(field.log_jacobian().iter().all(|v| v.is_nan()));
}

#[test]
fn field_binary_round_trip() {
    let kernel = dirac();
    let system = two_scale_system();
    let c = random_controls(&system, 5, 0.3, 3);
    let traj = integrate_forward(&kernel, &system, &c).unwrap();
    let grid = Grid2::around(&system.initial(), 0.2, 8, 6).unwrap();
    let field = transport_grid(&kernel, &traj, &c, 1.3, &grid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.bin");
    field.write_binary(&path).unwrap();
    assert_eq!(DeformationField::read_binary(&path).unwrap(), field);
}

#[test]
fn malformed_inputs_are_rejected() {
    let kernel = dirac();
    let system = two_scale_system();
    assert!(integrate_forward(&kernel, &system, &Controls::zeros(3, 4, 2)).is_err());
    assert!(integrate_forward(&kernel, &system, &Controls::zeros(0, 5, 2)).is_err());
    let bad = LandmarkGroup {
        scale: 0.1,
        points: vec![vec![0.0, 0.0]],
        targets: vec![],
    };
    assert!(LandmarkSystem::new(2, 1.0, vec![bad]).is_err());
    assert!(LandmarkSystem::new(2, -1.0, vec![]).is_err());
    let traj = integrate_forward(&kernel, &system, &Controls::for_system(&system, 2)).unwrap();
    assert!(transport_points(
        &kernel,
        &traj,
        &Controls::for_system(&system, 2),
        0.5,
        &[0.0, 0.0, 1.0]
    )
    .is_err());
}

fn rotate(v: &[f64], c: f64, s: f64) -> Vec<f64> {
    v.chunks(2)
        .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flows_commute_with_rigid_motions(seed in 0u64..1000, angle in -3.1f64..3.1, tx in -2.0f64..2.0, ty in -2.0f64..2.0) {
        let kernel = dirac();
        let system = two_scale_system();
        let c = random_controls(&system, 6, 0.6, seed);
        let traj = integrate_forward(&kernel, &system, &c).unwrap();

        let (co, si) = (angle.cos(), angle.sin());
        let moved_groups = system.groups.iter().map(|g| LandmarkGroup {
            scale: g.scale,
            points: g.points.iter().map(|p| { let r = rotate(p, co, si); vec![r[0] + tx, r[1] + ty] }).collect(),
            targets: g.targets.clone(),
        }).collect();
        let moved = LandmarkSystem::new(2, 1.0, moved_groups).unwrap();
        let mc = Controls { values: rotate(&c.values, co, si), ..c.clone() };
        let mtraj = integrate_forward(&kernel, &moved, &mc).unwrap();

        let expect: Vec<f64> = rotate(traj.endpoint(), co, si).chunks(2).flat_map(|p| [p[0] + tx, p[1] + ty]).collect();
        prop_assert!(sup_gap(mtraj.endpoint(), &expect) < 1e-10);
        prop_assert!((mtraj.energy - traj.energy).abs() < 1e-10 * (1.0 + traj.energy));
    }

    #[test]
    fn energy_is_quadratic_in_the_controls(seed in 0u64..1000) {
        // Tiny controls keep the trajectory near the start, so scaling by
        // t scales the energy by t^2 up to first order in the motion.
        let kernel = product(0.7);
        let system = two_scale_system();
        let c = random_controls(&system, 4, 1e-7, seed);
        let e1 = integrate_forward(&kernel, &system, &c).unwrap().energy;
        let c3 = Controls { values: c.values.iter().map(|v| 3.0 * v).collect(), ..c.clone() };
        let e3 = integrate_forward(&kernel, &system, &c3).unwrap().energy;
        prop_assert!(e1 >= 0.0);
        prop_assert!((e3 / e1 - 9.0).abs() < 1e-5);
    }
}
