//! Monodomain electrophysiology on the fine mesh.

mod ionic;
mod stimulus;
pub mod verify;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{iterative_solve, CsrMatrix, ElementCache, ScalarSpace, SolverKind, SolverOptions};
use crate::fibers::FiberField;
use crate::geometry::Mesh;
pub use ionic::{step_ionic, AlievPanfilov, IonicModel, IonicStep};
pub use stimulus::{default_protocol, PacingSettings, Stimulus, StimulusProtocol};

/// Monodomain and cell parameters. Conductivities in mS/cm, surface-to-
/// volume ratio in 1/cm, membrane capacitance in μF/cm², times in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpParams {
    pub surface_to_volume: f64,
    pub capacitance: f64,
    pub sigma_fast: [f64; 3],
    pub sigma_myo: [f64; 3],
    pub fast_threshold: f64,
    pub fast_layer: bool,
    pub tau: f64,
    /// Uniform multiplier on every conductivity. Coarse meshes cannot
    /// resolve the physical front width; widening it keeps propagation
    /// numerically meaningful.
    pub conductivity_scale: f64,
    /// Row-sum lumped mass. Keeps the discrete operator monotone, so fronts
    /// on coarse meshes do not undershoot below rest ahead of the wave.
    pub lumped_mass: bool,
    /// Activation threshold as a fraction of the action-potential amplitude.
    pub activation_threshold: f64,
    pub pacing: PacingSettings,
    pub cell: AlievPanfilov,
}

impl Default for EpParams {
    fn default() -> Self {
        Self {
            surface_to_volume: 1400.0,
            capacitance: 1.0,
            sigma_fast: [4.28, 1.96, 0.64],
            sigma_myo: [1.07, 0.49, 0.16],
            fast_threshold: 0.01,
            fast_layer: true,
            tau: 50e-6,
            conductivity_scale: 1.0,
            lumped_mass: true,
            activation_threshold: 0.2,
            pacing: PacingSettings::default(),
            cell: AlievPanfilov::default(),
        }
    }
}

impl EpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.surface_to_volume > 0.0 && self.capacitance > 0.0) {
            return bad("surface-to-volume ratio and capacitance must be positive".into());
        }
        for k in 0..3 {
            if !(self.sigma_myo[k] > 0.0) {
                return bad("conductivities must be positive".into());
            }
            if self.sigma_fast[k] < self.sigma_myo[k] {
                return bad("fast-layer conductivities must not be below the myocardial ones".into());
            }
        }
        if !(self.tau > 0.0) || !(self.conductivity_scale > 0.0) || !(self.fast_threshold > 0.0) {
            return bad("time step, conductivity scale and fast-layer threshold must be positive".into());
        }
        if !(self.activation_threshold > 0.0 && self.activation_threshold < 1.0) {
            return bad("activation threshold must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// χ C_m in F/m³.
    pub fn chi_cm(&self) -> f64 {
        self.surface_to_volume * 100.0 * self.capacitance * 0.01
    }

    /// Diffusivities (m²/s) from conductivities in mS/cm.
    pub fn diffusivity(&self, sigma: [f64; 3]) -> [f64; 3] {
        sigma.map(|s| s * 0.1 * self.conductivity_scale / self.chi_cm())
    }

    /// Applied current (μA/cm³, numerically equal to A/m³) to a rate of the
    /// dimensionless potential (1/s).
    pub fn current_to_rate(&self, i_app: f64) -> f64 {
        i_app / self.chi_cm() / (self.cell.v_amplitude * 1e-3)
    }
}

/// Conductivity tensor Σ σ_k (F k0 ⊗ F k0)/‖F k0‖² for the fiber frame
/// R = [f0 s0 n0].
pub fn diffusion_tensor(f: &Matrix3<f64>, r: &Matrix3<f64>, sigma: [f64; 3]) -> Result<Matrix3<f64>> {
    if !(f.determinant() > 0.0) {
        return Err(Error::InvalidParameter("deformation gradient must have positive determinant".into()));
    }
    let mut d = Matrix3::zeros();
    for k in 0..3 {
        let fk = f * r.column(k);
        d += fk * fk.transpose() * (sigma[k] / fk.norm_squared());
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpState {
    /// Dimensionless potential per node.
    pub u: Vec<f64>,
    pub u_prev: Option<Vec<f64>>,
    /// Cell states, `n_state` entries per node.
    pub w: Vec<f64>,
    reaction_prev: Option<Vec<f64>>,
    pub t: f64,
    /// First threshold crossing per node (s).
    pub activation: Vec<Option<f64>>,
}

impl EpState {
    pub fn rest(n: usize, model: &dyn IonicModel) -> Self {
        let (u0, w0) = model.rest();
        Self::uniform(n, u0, &w0)
    }

    pub fn uniform(n: usize, u0: f64, w0: &[f64]) -> Self {
        Self {
            u: vec![u0; n],
            u_prev: None,
            w: w0.iter().copied().cycle().take(n * w0.len()).collect(),
            reaction_prev: None,
            t: 0.0,
            activation: vec![None; n],
        }
    }

    pub fn calcium(&self, model: &dyn IonicModel) -> Vec<f64> {
        let k = model.n_state();
        self.w.chunks_exact(k).map(|w| model.calcium(w)).collect()
    }

    pub fn u_mv(&self, model: &dyn IonicModel) -> Vec<f64> {
        self.u.iter().map(|&u| model.to_mv(u)).collect()
    }

    /// Activation times in ms (NaN where the node never activated).
    pub fn activation_map_ms(&self) -> Vec<f64> {
        self.activation.iter().map(|a| a.map_or(f64::NAN, |t| t * 1e3)).collect()
    }

    /// Forget the activation map and step history (new beat).
    pub fn reset_activation(&mut self) {
        self.activation.iter_mut().for_each(|a| *a = None);
    }

    /// Restart the multistep history, e.g. after a restart.
    pub fn restart_history(&mut self) {
        self.u_prev = None;
        self.reaction_prev = None;
    }
}

/// BDF2-IMEX monodomain solver: implicit diffusion, explicit reaction.
#[derive(Debug)]
pub struct Monodomain {
    pub params: EpParams,
    pub protocol: StimulusProtocol,
    pub model: AlievPanfilov,
    mesh: Mesh,
    cache: ElementCache,
    space: ScalarSpace,
    frames: Vec<[Matrix3<f64>; 8]>,
    fast: Vec<[f64; 8]>,
    mass: CsrMatrix,
    bdf1: CsrMatrix,
    bdf2: CsrMatrix,
    stim_nodes: Vec<Vec<usize>>,
    reaction_enabled: bool,
}

impl Monodomain {
    pub fn new(mesh: &Mesh, fibers: &FiberField, fast_mask: &[bool], params: EpParams, protocol: StimulusProtocol) -> Result<Self> {
        params.validate()?;
        protocol.validate()?;
        if fibers.f0.len() != mesh.num_nodes() || fast_mask.len() != mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_nodes(),
                got: fibers.f0.len().min(fast_mask.len()),
            });
        }
        let cache = ElementCache::new(mesh);
        let frames = fibers.at_quadrature(mesh);
        let fast = mesh
            .elements
            .iter()
            .zip(&cache.qps)
            .map(|(el, qs)| {
                std::array::from_fn(|q| {
                    if !params.fast_layer {
                        return 0.0;
                    }
                    (0..8).filter(|&a| fast_mask[el[a]]).map(|a| qs[q].n[a]).sum()
                })
            })
            .collect();
        let stim_nodes = protocol
            .stimuli
            .iter()
            .map(|s| (0..mesh.num_nodes()).filter(|&n| s.contains(&mesh.nodes[n])).collect())
            .collect();
        let space = ScalarSpace::new(mesh);
        let mut me = Self {
            model: params.cell,
            params,
            protocol,
            mesh: mesh.clone(),
            mass: space.pattern.clone(),
            bdf1: space.pattern.clone(),
            bdf2: space.pattern.clone(),
            space,
            cache,
            frames,
            fast,
            stim_nodes,
            reaction_enabled: true,
        };
        me.set_deformation(None)?;
        Ok(me)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &EpParams {
        &self.params
    }

    /// Pure diffusion (for verification).
    pub fn disable_reaction(&mut self) {
        self.reaction_enabled = false;
    }

    pub fn rest_state(&self) -> EpState {
        EpState::rest(self.mesh.num_nodes(), &self.model)
    }

    /// Nodes covered by each stimulus sphere.
    pub fn stimulus_nodes(&self) -> &[Vec<usize>] {
        &self.stim_nodes
    }

    /// Reassembles the pulled-back operators for nodal displacement
    /// gradients `grad_d` (None for the reference configuration).
    pub fn set_deformation(&mut self, grad_d: Option<&[Matrix3<f64>]>) -> Result<()> {
        let p = &self.params;
        let d_myo = p.diffusivity(p.sigma_myo);
        let d_fast = p.diffusivity(p.sigma_fast);
        let elements = &self.mesh.elements;
        let qdata: Vec<[(f64, Matrix3<f64>); 8]> = self
            .cache
            .qps
            .par_iter()
            .enumerate()
            .map(|(e, qs)| {
                let mut out = [(1.0, Matrix3::zeros()); 8];
                for (q, qp) in qs.iter().enumerate() {
                    let f = match grad_d {
                        Some(g) => Matrix3::identity() + (0..8).map(|a| g[elements[e][a]] * qp.n[a]).sum::<Matrix3<f64>>(),
                        None => Matrix3::identity(),
                    };
                    let m = self.fast[e][q];
                    let sigma: [f64; 3] = std::array::from_fn(|k| d_myo[k] + m * (d_fast[k] - d_myo[k]));
                    let j = f.determinant();
                    let d = diffusion_tensor(&f, &self.frames[e][q], sigma)?;
                    let finv = f.try_inverse().ok_or_else(|| Error::InvalidParameter("singular F".into()))?;
                    out[q] = (j, finv * d * finv.transpose() * j);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        self.mass = self.space.assemble(&self.cache, |e, q| qdata[e][q].0, |_, _| None);
        if self.params.lumped_mass {
            let sums = self.mass.row_sums();
            let mut lumped = self.mass.clone();
            lumped.zero();
            for (i, s) in sums.into_iter().enumerate() {
                lumped.add(i, i, s);
            }
            self.mass = lumped;
        }
        let stiff = self.space.assemble(&self.cache, |_, _| 0.0, |e, q| Some(qdata[e][q].1));
        let tau = self.params.tau;
        self.bdf1 = stiff.clone();
        self.bdf1.axpy(1.0 / tau, &self.mass);
        self.bdf2 = stiff;
        self.bdf2.axpy(1.5 / tau, &self.mass);
        Ok(())
    }

    /// Applied-current rate (1/s) per node at time t.
    pub fn stimulus_rate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0_f64; self.mesh.num_nodes()];
        let tl = if self.protocol.period > 0.0 {
            t.rem_euclid(self.protocol.period)
        } else {
            t
        };
        for (s, nodes) in self.protocol.stimuli.iter().zip(&self.stim_nodes) {
            if s.is_active(tl) {
                let r = self.params.current_to_rate(s.amplitude);
                for &n in nodes {
                    out[n] = out[n].max(r);
                }
            }
        }
        out
    }

    /// One BDF2-IMEX step of length τ (BDF1 when no history is stored).
    pub fn step(&self, state: &mut EpState) -> Result<()> {
        let tau = self.params.tau;
        let n = self.mesh.num_nodes();
        let k = self.model.n_state();
        let stim = self.stimulus_rate(state.t);
        let model = &self.model;
        let enabled = self.reaction_enabled;
        let reaction: Vec<f64> = state
            .w
            .par_chunks_exact_mut(k)
            .zip(state.u.par_iter())
            .map(|(w, &u)| if enabled { model.step(u, w, tau) } else { 0.0 })
            .collect();
        let (mat, mut src) = match (&state.u_prev, &state.reaction_prev) {
            (Some(up), Some(rp)) => {
                let v: Vec<f64> = (0..n)
                    .map(|i| (4.0 * state.u[i] - up[i]) / (2.0 * tau) + 2.0 * reaction[i] - rp[i] + stim[i])
                    .collect();
                (&self.bdf2, v)
            }
            _ => {
                let v: Vec<f64> = (0..n).map(|i| state.u[i] / tau + reaction[i] + stim[i]).collect();
                (&self.bdf1, v)
            }
        };
        src = self.mass.mul_vec(&src);
        let opts = SolverOptions {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_iter: 5000,
        };
        let (u_new, _) = iterative_solve(mat, &src, Some(&state.u), SolverKind::Spd, &opts)
            .map_err(|e| e.at(state.t))?;
        if u_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "transmembrane potential",
                time: state.t,
            });
        }
        let th = self.params.activation_threshold;
        let t0 = state.t;
        for i in 0..n {
            if state.activation[i].is_none() && u_new[i] >= th {
                let (a, b) = (state.u[i], u_new[i]);
                let frac = if a < th && b > a { (th - a) / (b - a) } else { 0.0 };
                state.activation[i] = Some(t0 + frac * tau);
            }
        }
        state.u_prev = Some(std::mem::replace(&mut state.u, u_new));
        state.reaction_prev = Some(reaction);
        state.t = t0 + tau;
        Ok(())
    }

    /// ∫ u dV / ∫ dV with the current J-weighted mass.
    pub fn mean(&self, u: &[f64]) -> f64 {
        let mu = self.mass.mul_vec(u);
        let total: f64 = self.mass.row_sums().iter().sum();
        mu.iter().sum::<f64>() / total
    }
}

/// Earliest and latest activation over the activated nodes (s).
pub fn activation_span(state: &EpState) -> Option<(f64, f64)> {
    let times: Vec<f64> = state.activation.iter().flatten().copied().collect();
    if times.is_empty() {
        return None;
    }
    Some((
        times.iter().copied().fold(f64::INFINITY, f64::min),
        times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ))
}
