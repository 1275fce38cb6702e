use super::*;
use crate::fibers::{generate_fibers, AngleSet, FiberRule};
use crate::geometry::{box_cavity, build_geometry, GeometrySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn box_problem(variant: BaseBcVariant) -> MechanicsProblem {
    let mesh = box_cavity([0.02, 0.02, 0.03], 0.008, 1).unwrap();
    let frames = vec![[Matrix3::identity(); 8]; mesh.num_elements()];
    let xi = vec![1.0; mesh.num_nodes()];
    MechanicsProblem::new(mesh, frames, &xi, MaterialParams::default(), variant).unwrap()
}

fn biv_problem(variant: BaseBcVariant) -> MechanicsProblem {
    let mesh = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
    let (fib, fields) = generate_fibers(&mesh, FiberRule::DRbm, &AngleSet::default()).unwrap();
    let frames = fib.at_quadrature(&mesh);
    MechanicsProblem::new(mesh, frames, &fields.xi_hat, MaterialParams::default(), variant).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn fd_check(p: &MechanicsProblem, d: &[f64], loads: &LoadState, mode: MechMode<'_>, rng: &mut ChaCha8Rng) -> f64 {
    let (_, jac) = p.residual_and_jacobian(d, loads, mode).unwrap();
    let dir = random_vec(rng, d.len(), 1.0);
    let h = 1e-7 * norm(d).max(1e-3) / norm(&dir);
    let plus: Vec<f64> = d.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = d.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
    let rp = p.residual(&plus, loads, mode).unwrap();
    let rm = p.residual(&minus, loads, mode).unwrap();
    let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let an = jac.apply(&dir);
    let diff: Vec<f64> = fd.iter().zip(&an).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&an)
}

#[test]
fn zero_state_has_zero_residual() {
    let p = box_problem(BaseBcVariant::Weighted);
    let d = vec![0.0; p.num_dofs()];
    let r = p.residual(&d, &LoadState::zero(p.mesh().num_nodes()), MechMode::Quasistatic).unwrap();
    assert!(norm(&r) < 1e-14);
}

#[test]
fn rigid_translation_is_force_free_without_robin() {
    let mesh = box_cavity([0.02, 0.02, 0.03], 0.008, 1).unwrap();
    let frames = vec![[Matrix3::identity(); 8]; mesh.num_elements()];
    let xi = vec![1.0; mesh.num_nodes()];
    let mat = MaterialParams {
        robin: RobinParams {
            k_normal: 0.0,
            k_tangential: 0.0,
            c_normal: 0.0,
            c_tangential: 0.0,
        },
        ..Default::default()
    };
    let p = MechanicsProblem::new(mesh, frames, &xi, mat, BaseBcVariant::Weighted).unwrap();
    let d: Vec<f64> = (0..p.num_dofs()).map(|i| [1e-3, -2e-3, 5e-4][i % 3]).collect();
    let r = p.residual(&d, &LoadState::zero(p.mesh().num_nodes()), MechMode::Quasistatic).unwrap();
    assert!(norm(&r) < 1e-9, "{}", norm(&r));
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in [box_problem(BaseBcVariant::Weighted), biv_problem(BaseBcVariant::Weighted)] {
        let nn = p.mesh().num_nodes();
        let d = random_vec(&mut rng, p.num_dofs(), 2e-4);
        let loads = LoadState {
            ta: (0..nn).map(|_| rng.random_range(0.0..5e4)).collect(),
            p: [2e3, 8e2],
        };
        let e = fd_check(&p, &d, &loads, MechMode::Quasistatic, &mut rng);
        assert!(e < 1e-5, "quasi-static {e}");
        let dp = random_vec(&mut rng, p.num_dofs(), 1e-4);
        let dp2 = random_vec(&mut rng, p.num_dofs(), 1e-4);
        let mode = MechMode::Dynamic {
            d_prev: &dp,
            d_prev2: &dp2,
            dt: 1e-3,
        };
        let e = fd_check(&p, &d, &loads, mode, &mut rng);
        assert!(e < 1e-5, "dynamic {e}");
    }
}

#[test]
fn base_traction_balances_endocardial_load() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for variant in [BaseBcVariant::Uniform, BaseBcVariant::PerBase, BaseBcVariant::Weighted] {
        let p = biv_problem(variant);
        let d = random_vec(&mut rng, p.num_dofs(), 5e-4);
        let pr = [1.2e3, 4e2];
        let total: Vector3<f64> = p.base_traction(&d, pr).unwrap().iter().map(|(_, da, t)| t * *da).sum();
        let expect = p.endo_area_vector(0, &d).unwrap() * pr[0] + p.endo_area_vector(1, &d).unwrap() * pr[1];
        assert!((total - expect).norm() <= 1e-10 * expect.norm(), "{variant:?}");
    }
}

#[test]
fn weighted_base_support_follows_indicator() {
    let p = box_problem(BaseBcVariant::Weighted);
    let d = vec![0.0; p.num_dofs()];
    let t = p.base_traction(&d, [1e3, 0.0]).unwrap();
    assert!(t.iter().all(|(_, _, v)| v.norm() > 0.0));
    let t = p.base_traction(&d, [0.0, 0.0]).unwrap();
    assert!(t.iter().all(|(_, _, v)| v.norm() == 0.0));
}

#[test]
fn zero_loads_give_zero_displacement() {
    let p = box_problem(BaseBcVariant::Weighted);
    let (d, rep) = p
        .solve_quasistatic(&LoadState::zero(p.mesh().num_nodes()), &NewtonOptions::default())
        .unwrap();
    assert!(d.iter().all(|v| *v == 0.0));
    assert!(rep.iterations <= 1);
}

#[test]
fn woodbury_solve_matches_dense() {
    let p = biv_problem(BaseBcVariant::Weighted);
    let d = vec![0.0; p.num_dofs()];
    let loads = LoadState::pressures(p.mesh().num_nodes(), 1e3, 5e2);
    let (_, jac) = p.residual_and_jacobian(&d, &loads, MechMode::Quasistatic).unwrap();
    assert_eq!(jac.u.len(), 8);
    let mut s = JacobianSolver::new();
    s.factor(&jac).unwrap();
    let b: Vec<f64> = (0..p.num_dofs()).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = s.solve(&b).unwrap();
    let r = jac.apply(&x);
    let err: f64 = r.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-8 * norm(&b), "{err}");
}

#[test]
fn inflation_is_nearly_isochoric() {
    let p = box_problem(BaseBcVariant::Weighted);
    let loads = LoadState::pressures(p.mesh().num_nodes(), 600.0, 0.0);
    let (d, _) = p.solve_quasistatic(&loads, &NewtonOptions::default()).unwrap();
    let (lo, hi) = p.jacobian_range(&d).unwrap();
    assert!(lo > 0.95 && hi < 1.05, "{lo} {hi}");
    assert!(norm(&d) > 0.0);
}
