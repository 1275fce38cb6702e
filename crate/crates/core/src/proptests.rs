//! Randomized invariants across modules.

use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use crate::activation::{active_tension, step_force, ActivationParams, ForceState};
use crate::circulation::{activation_curve, valve_flow, CircState, Circulation, CircuitParams};
use crate::fibers::{generate_fibers, AngleSet, FiberRule, SideAngles};
use crate::geometry::{build_geometry, GeometrySpec};
use crate::mechanics::{active_piola, strain_energy, MaterialParams};
use crate::postio::{checkpoint, vtk, RunConfig};

fn deformation() -> impl Strategy<Value = Matrix3<f64>> {
    proptest::array::uniform9(-0.2..0.2f64).prop_map(|a| Matrix3::identity() + Matrix3::from_row_slice(&a))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    proptest::array::uniform3(-3.0..3.0f64).prop_map(|a| *Rotation3::from_scaled_axis(Vector3::from(a)).matrix())
}

fn side() -> impl Strategy<Value = SideAngles> {
    (-80.0..80.0f64, -80.0..80.0f64, -30.0..30.0f64, -30.0..30.0f64).prop_map(|(a, b, c, d)| SideAngles {
        alpha_epi: a,
        alpha_endo: b,
        beta_epi: c,
        beta_endo: d,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_is_nonnegative_and_objective(f in deformation(), r in rotation(), q in rotation()) {
        let m = MaterialParams::default();
        let w = strain_energy(&f, &r, &m).unwrap();
        prop_assert!(w >= 0.0);
        let wq = strain_energy(&(q * f), &r, &m).unwrap();
        prop_assert!((wq - w).abs() <= 1e-11 * w.max(1.0));
    }

    #[test]
    fn energy_vanishes_for_rigid_motion(q in rotation(), r in rotation()) {
        let w = strain_energy(&q, &r, &MaterialParams::default()).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn active_stress_is_linear_in_tension(f in deformation(), r in rotation(), ta in 0.0..1e5f64) {
        let n = [0.7, 0.0, 0.3];
        let p1 = active_piola(&f, &r, 1.0, n);
        let p = active_piola(&f, &r, ta, n);
        prop_assert!((p - p1 * ta).norm() <= 1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn fiber_frames_stay_orthonormal(lv in side(), rv in side()) {
        let mesh = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
        let (f, _) = generate_fibers(&mesh, FiberRule::DRbm, &AngleSet { lv, rv }).unwrap();
        for i in 0..mesh.num_nodes() {
            let m = Matrix3::from_columns(&[f.f0[i], f.s0[i], f.n0[i]]);
            prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-10);
            assert_relative_eq!(m.determinant().abs(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn permissivity_and_relay_stay_in_unit_interval(
        ca in 0.0..5.0f64,
        sl in 1.5..2.6f64,
        s1 in 0.0..1.0f64,
        s2 in 0.0..1.0f64,
        dt in 1e-5..2e-3f64,
    ) {
        let p = ActivationParams::default();
        let pinf = p.permissivity(ca, sl);
        prop_assert!((0.0..=1.0).contains(&pinf));
        let s = step_force(ForceState { s1, s2 }, ca, sl, dt, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.s1) && (0.0..=1.0).contains(&s.s2));
        prop_assert!(active_tension(&s, 0.5, &p) <= p.t_max);
    }

    #[test]
    fn valve_flow_follows_pressure_gradient(up in -50.0..200.0f64, down in -50.0..200.0f64) {
        let q = valve_flow(up, down, 0.0075, 75006.2);
        prop_assert_eq!(q.signum() * (up - down).signum() >= 0.0, true);
        prop_assert_eq!(valve_flow(up, up, 0.0075, 75006.2), 0.0);
    }

    #[test]
    fn activation_curve_is_bounded(t in 0.0..3.0f64) {
        let e = activation_curve(t, 0.1, 0.25, 0.4, 0.8);
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn circulation_conserves_volume_from_any_state(scale in proptest::array::uniform4(0.7..1.3f64)) {
        let params = CircuitParams::default();
        let circ = Circulation::new(params).unwrap();
        let mut c0 = CircState::default();
        c0.v_la *= scale[0];
        c0.v_lv *= scale[1];
        c0.v_ra *= scale[2];
        c0.v_rv *= scale[3];
        let samples = circ.run(c0, 1, 1e-3).unwrap();
        let v0 = c0.total_volume(&params);
        for (_, s) in &samples {
            prop_assert!((s.total_volume(&params) - v0).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn config_round_trip_preserves_hash(kappa in 1e3..1e6f64, t_hb in 0.5..1.2f64, beats in 1usize..6) {
        let text = format!("[mechanics.material]\nkappa = {kappa:?}\n[circulation]\nt_hb = {t_hb:?}\n[output]\nbeats = {beats}\n");
        let c = RunConfig::from_toml_str(&text).unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(c.hash(), back.hash());
        prop_assert_eq!(c.mechanics.material.kappa, kappa);
    }

    #[test]
    fn vtk_fields_round_trip_bitwise(values in proptest::collection::vec(-1e6..1e6f64, 8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.vtk");
        let mesh = build_geometry(&GeometrySpec::slab([1.0; 3], [1; 3])).unwrap();
        vtk::write_volume(&path, &mesh, "h", &[vtk::Field::scalars("u", values.clone())], &[]).unwrap();
        let back = vtk::read(&path).unwrap();
        prop_assert_eq!(back.point_field("u").unwrap().to_vec(), values);
    }

    #[test]
    fn checkpoints_round_trip(values in proptest::collection::vec(any::<f64>(), 0..64)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        checkpoint::save(&path, "test", "abc", &values).unwrap();
        let back: Vec<f64> = checkpoint::load(&path, "test", Some("abc")).unwrap();
        prop_assert_eq!(back.len(), values.len());
        for (a, b) in back.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert!(checkpoint::load::<Vec<f64>>(&path, "test", Some("other")).is_err());
    }
}
