//! Staggered time loop: monodomain substeps on the fine mesh, one explicit
//! force update, one constrained mechanics solve on the coarse mesh and one
//! circulation step with the new pressures.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{CoupledMechanics, SaddleReport};
use crate::activation::{active_tension, sarcomere_length, step_force, ActivationParams, ForceState};
use crate::circulation::{CircMode, CircState, Circulation, MMHG};
use crate::electrophysiology::{EpState, Monodomain};
use crate::error::{Error, Result};
use crate::geometry::{interpolate_with, restrict_to_coarse, GradientProjector, Mesh};
use crate::mechanics::MechMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SisParams {
    /// Mechanics and circulation step (s).
    pub dt: f64,
    /// Pull the conductivities back with the current deformation.
    pub deform_ep: bool,
}

impl Default for SisParams {
    fn default() -> Self {
        Self {
            dt: 500e-6,
            deform_ep: true,
        }
    }
}

/// Everything that evolves in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    /// Fine-mesh potential and cell state.
    pub ep: EpState,
    /// Fine-mesh force states.
    pub force: Vec<ForceState>,
    /// Coarse displacement at tⁿ and tⁿ⁻¹ (m, interleaved xyz).
    pub d: Vec<f64>,
    pub d_prev: Vec<f64>,
    /// Cavity pressures (Pa).
    pub p: [f64; 2],
    pub circ: CircState,
}

/// One row of the per-step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// mmHg
    pub p_lv: f64,
    pub p_rv: f64,
    /// Cavity volumes of the 3D model (mL).
    pub v_lv: f64,
    pub v_rv: f64,
    pub newton_iterations: usize,
    /// Largest |V_0D − V_3D| over the coupled ventricles (mL).
    pub volume_residual: f64,
    pub max_momentum_error: f64,
    /// Largest nodal active tension (Pa).
    pub ta_max: f64,
    /// Atrial and arterial pressures on both sides (mmHg).
    pub p_la: f64,
    pub p_ar_sys: f64,
    pub p_ra: f64,
    pub p_ar_pul: f64,
}

impl StepRecord {
    pub const HEADER: [&'static str; 13] = [
        "t_ms",
        "p_lv_mmHg",
        "p_rv_mmHg",
        "v_lv_mL",
        "v_rv_mL",
        "newton_iterations",
        "volume_residual_mL",
        "momentum_error",
        "ta_max_kPa",
        "p_la_mmHg",
        "p_ar_sys_mmHg",
        "p_ra_mmHg",
        "p_ar_pul_mmHg",
    ];

    pub fn row(&self) -> [f64; 13] {
        [
            self.t * 1e3,
            self.p_lv,
            self.p_rv,
            self.v_lv,
            self.v_rv,
            self.newton_iterations as f64,
            self.volume_residual,
            self.max_momentum_error,
            self.ta_max * 1e-3,
            self.p_la,
            self.p_ar_sys,
            self.p_ra,
            self.p_ar_pul,
        ]
    }
}

/// The staggered electromechanics driver.
#[derive(Debug)]
pub struct Sis {
    pub params: SisParams,
    pub ep: Monodomain,
    pub activation: ActivationParams,
    pub mech: CoupledMechanics,
    pub circulation: Circulation,
    fine: Mesh,
    fine_f0: Vec<Vector3<f64>>,
    fine_xi_hat: Vec<f64>,
    projector: GradientProjector,
    substeps: usize,
}

fn to_vectors(d: &[f64]) -> Vec<Vector3<f64>> {
    d.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

impl Sis {
    /// `fine_f0` and `fine_xi_hat` are nodal fibers and the normalized
    /// transventricular coordinate on the fine mesh of `ep`.
    pub fn new(
        params: SisParams,
        ep: Monodomain,
        activation: ActivationParams,
        mech: CoupledMechanics,
        circulation: Circulation,
        fine_f0: Vec<Vector3<f64>>,
        fine_xi_hat: Vec<f64>,
    ) -> Result<Self> {
        activation.validate()?;
        let fine = ep.mesh().clone();
        let coarse = mech.problem.mesh();
        restrict_to_coarse(coarse, &fine, &vec![0u8; fine.num_nodes()])?;
        if fine_f0.len() != fine.num_nodes() || fine_xi_hat.len() != fine.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: fine.num_nodes(),
                got: fine_f0.len().min(fine_xi_hat.len()),
            });
        }
        let tau = ep.params().tau;
        let ratio = params.dt / tau;
        let substeps = ratio.round() as usize;
        if substeps == 0 || (ratio - substeps as f64).abs() > 1e-9 * ratio {
            return Err(Error::InvalidParameter(format!(
                "mechanics step {} s is not a whole multiple of the EP step {tau} s",
                params.dt
            )));
        }
        let projector = GradientProjector::new(coarse);
        Ok(Self {
            params,
            ep,
            activation,
            mech,
            circulation,
            fine,
            fine_f0,
            fine_xi_hat,
            projector,
            substeps,
        })
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn fine_mesh(&self) -> &Mesh {
        &self.fine
    }

    /// Initial state at time `t0` with the 0D ventricular volumes of the
    /// coupled ventricles replaced by the 3D cavity volumes at `d0`.
    pub fn initial_state(
        &self,
        t0: f64,
        d0: Vec<f64>,
        p0: [f64; 2],
        mut circ: CircState,
        ep: EpState,
        force: ForceState,
    ) -> Result<SimState> {
        let v = self.mech.volumes(&d0)?;
        for k in self.mech.problem.ventricles() {
            if k == 0 {
                circ.v_lv = v[0] * 1e6;
            } else {
                circ.v_rv = v[1] * 1e6;
            }
        }
        Ok(SimState {
            t: t0,
            step: 0,
            ep,
            force: vec![force; self.fine.num_nodes()],
            d_prev: d0.clone(),
            d: d0,
            p: p0,
            circ,
        })
    }

    /// Circulation mode with the given cavity pressures (Pa) imposed on
    /// the coupled ventricles.
    pub fn circ_mode(&self, p: [f64; 2]) -> CircMode {
        let v = self.mech.problem.ventricles();
        CircMode::Coupled {
            p_lv: v.contains(&0).then(|| p[0] / MMHG),
            p_rv: v.contains(&1).then(|| p[1] / MMHG),
        }
    }

    /// Nodal displacement gradients on the fine mesh.
    fn fine_gradients(&self, d: &[f64]) -> Result<Vec<Matrix3<f64>>> {
        let g = self.projector.project(&to_vectors(d))?;
        interpolate_with(self.mech.problem.mesh(), &self.fine, &g, Matrix3::zeros())
    }

    /// Nodal active tension on the coarse mesh from the fine force states.
    pub fn coarse_tension(&self, force: &[ForceState]) -> Result<Vec<f64>> {
        let fine: Vec<f64> = force
            .iter()
            .zip(&self.fine_xi_hat)
            .map(|(s, &xi)| active_tension(s, xi, &self.activation))
            .collect();
        restrict_to_coarse(self.mech.problem.mesh(), &self.fine, &fine)
    }

    /// Advances `state` by one mechanics step.
    pub fn step(&mut self, state: &mut SimState) -> Result<StepRecord> {
        let t0 = state.t;
        self.advance(state).map_err(|e| e.at(t0))
    }

    fn advance(&mut self, state: &mut SimState) -> Result<StepRecord> {
        let dt = self.params.dt;
        let grads = self.fine_gradients(&state.d)?;
        if self.params.deform_ep {
            self.ep.set_deformation(Some(&grads))?;
        }
        for _ in 0..self.substeps {
            self.ep.step(&mut state.ep)?;
        }

        let ca = state.ep.calcium(&self.ep.params().cell);
        let sl0 = self.activation.sl0;
        let next: Vec<ForceState> = (0..self.fine.num_nodes())
            .map(|i| {
                let f = Matrix3::identity() + grads[i];
                let sl = sarcomere_length(&f, &self.fine_f0[i], sl0);
                step_force(state.force[i], ca[i], sl, dt, &self.activation)
            })
            .collect::<Result<_>>()?;
        state.force = next;
        let ta = self.coarse_tension(&state.force)?;

        let (t, circ) = (state.t, state.circ);
        let circulation = self.circulation;
        let ventricles = self.mech.problem.ventricles();
        let target = |p: [f64; 2]| -> Result<[f64; 2]> {
            let mode = CircMode::Coupled {
                p_lv: ventricles.contains(&0).then(|| p[0] / MMHG),
                p_rv: ventricles.contains(&1).then(|| p[1] / MMHG),
            };
            let c = circulation.step_rk4(&circ, t, dt, mode)?;
            Ok([c.v_lv * 1e-6, c.v_rv * 1e-6])
        };
        let mode = MechMode::Dynamic {
            d_prev: &state.d,
            d_prev2: &state.d_prev,
            dt,
        };
        let (d_new, p_new, report): (Vec<f64>, [f64; 2], SaddleReport) =
            self.mech.solve(&state.d, state.p, &ta, mode, &target)?;

        state.circ = self.circulation.step_rk4(&circ, t, dt, self.circ_mode(p_new))?;
        state.d_prev = std::mem::replace(&mut state.d, d_new);
        state.p = p_new;
        state.step += 1;
        state.t = t + dt;
        // Keep the EP clock on the same grid as the mechanics clock.
        state.ep.t = state.t;

        let v = self.mech.volumes(&state.d)?;
        let v0d = [state.circ.v_lv, state.circ.v_rv];
        let o = self.circulation.outputs(state.t, &state.circ, self.circ_mode(p_new));
        let volume_residual = ventricles
            .iter()
            .map(|&k| (v0d[k] - v[k] * 1e6).abs())
            .fold(0.0, f64::max);
        Ok(StepRecord {
            t: state.t,
            p_lv: if ventricles.contains(&0) { p_new[0] / MMHG } else { state.circ_pressure(&self.circulation, 0) },
            p_rv: if ventricles.contains(&1) { p_new[1] / MMHG } else { state.circ_pressure(&self.circulation, 1) },
            v_lv: if ventricles.contains(&0) { v[0] * 1e6 } else { state.circ.v_lv },
            v_rv: if ventricles.contains(&1) { v[1] * 1e6 } else { state.circ.v_rv },
            newton_iterations: report.iterations,
            volume_residual,
            max_momentum_error: report.max_momentum_error,
            ta_max: ta.iter().copied().fold(0.0, f64::max),
            p_la: o.p_la,
            p_ar_sys: state.circ.p_ar_sys,
            p_ra: o.p_ra,
            p_ar_pul: state.circ.p_ar_pul,
        })
    }
}

impl SimState {
    /// Elastance pressure (mmHg) of a ventricle left in the 0D model.
    fn circ_pressure(&self, circ: &Circulation, k: usize) -> f64 {
        let o = circ.outputs(self.t, &self.circ, CircMode::Standalone);
        if k == 0 {
            o.p_lv
        } else {
            o.p_rv
        }
    }
}
