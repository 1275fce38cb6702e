//! Initialization: stress-free reference recovery, end-diastolic inflation,
//! single-cell pre-runs and limit-cycle acceleration through a 0D emulator.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationParams, ForceState};
use crate::circulation::{rk4_step, CircMode, CircState, Circulation};
use crate::coupling::{cavity_volume, CavityFrame};
use crate::electrophysiology::IonicModel;
use crate::error::{Error, Result};
use crate::mechanics::{LoadState, MechanicsProblem, NewtonOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryOptions {
    pub relaxation: f64,
    /// Largest admissible nodal mismatch (m).
    pub tol: f64,
    pub max_iter: usize,
    pub newton: NewtonOptions,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            relaxation: 1.0,
            tol: 1e-4,
            max_iter: 50,
            newton: NewtonOptions::default(),
        }
    }
}

/// Residual loads of the imaged configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualLoads {
    /// Pa
    pub p_lv: f64,
    pub p_rv: f64,
    /// Residual active tension (Pa), applied uniformly.
    pub ta: f64,
}

impl Default for ResidualLoads {
    fn default() -> Self {
        Self {
            p_lv: 600.0,
            p_rv: 400.0,
            ta: 350e3,
        }
    }
}

impl ResidualLoads {
    pub fn load_state(&self, n_nodes: usize) -> LoadState {
        LoadState {
            ta: vec![self.ta; n_nodes],
            p: [self.p_lv, self.p_rv],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveredReference {
    /// The mechanics problem posed on the recovered coordinates.
    pub problem: MechanicsProblem,
    /// Displacement from the recovered reference to the loaded geometry.
    pub displacement: Vec<f64>,
    /// Largest nodal mismatch (m) per iteration.
    pub history: Vec<f64>,
}

fn max_mismatch(x_ref: &[Vector3<f64>], d: &[f64], target: &[Vector3<f64>]) -> f64 {
    x_ref
        .iter()
        .zip(d.chunks_exact(3))
        .zip(target)
        .map(|((x, u), t)| (x + Vector3::new(u[0], u[1], u[2]) - t).norm())
        .fold(0.0, f64::max)
}

/// Finds reference coordinates X such that loading X with `loads`
/// reproduces the coordinates of `loaded`, by the fixed point
/// X ← X − ω (x(X) − x̃).
pub fn recover_reference(
    loaded: &MechanicsProblem,
    loads: &ResidualLoads,
    opts: &RecoveryOptions,
) -> Result<RecoveredReference> {
    let target = loaded.mesh().nodes.clone();
    let state = loads.load_state(target.len());
    let mut problem = loaded.clone();
    let mut history = Vec::new();
    for _ in 0..opts.max_iter {
        let (d, _) = problem.solve_quasistatic(&state, &opts.newton)?;
        let x_ref = problem.mesh().nodes.clone();
        let err = max_mismatch(&x_ref, &d, &target);
        history.push(err);
        if err < opts.tol {
            return Ok(RecoveredReference {
                problem,
                displacement: d,
                history,
            });
        }
        let next: Vec<Vector3<f64>> = x_ref
            .iter()
            .zip(d.chunks_exact(3))
            .zip(&target)
            .map(|((x, u), t)| x - (x + Vector3::new(u[0], u[1], u[2]) - t) * opts.relaxation)
            .collect();
        problem = match problem.with_nodes(next) {
            Ok(p) => p,
            Err(_) => return Err(Error::ReferenceNotConverged { history }),
        };
    }
    Err(Error::ReferenceNotConverged { history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InflationOptions {
    /// Volume tolerance (mL).
    pub tol_ml: f64,
    pub max_iter: usize,
    /// Pressure cap (Pa).
    pub max_pressure: f64,
    /// First pressure guess (Pa).
    pub initial_pressure: f64,
    pub newton: NewtonOptions,
}

impl Default for InflationOptions {
    fn default() -> Self {
        Self {
            tol_ml: 0.5,
            max_iter: 30,
            max_pressure: 10e3,
            initial_pressure: 500.0,
            newton: NewtonOptions {
                ramp_steps: 4,
                ..NewtonOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inflated {
    pub d: Vec<f64>,
    /// Pa
    pub p: [f64; 2],
    /// mL
    pub volumes: [f64; 2],
    pub evaluations: usize,
}

/// Cavity volumes (mL) of every ventricle, zero where absent.
pub fn cavity_volumes_ml(problem: &MechanicsProblem, frame: &CavityFrame, d: &[f64]) -> Result<[f64; 2]> {
    let mut v = [0.0; 2];
    for k in problem.ventricles() {
        v[k] = cavity_volume(problem.mesh(), problem.endo_faces(k), d, &frame.h, &frame.b[k])? * 1e6;
    }
    Ok(v)
}

/// Passive inflation to end-diastolic volumes (mL) by a secant iteration
/// on the two pressures.
pub fn inflate_to_ed(problem: &MechanicsProblem, targets: [f64; 2], opts: &InflationOptions) -> Result<Inflated> {
    let frame = CavityFrame::from_mesh(problem.mesh())?;
    let ventricles = problem.ventricles();
    let n = problem.mesh().num_nodes();
    let v_ref = cavity_volumes_ml(problem, &frame, &vec![0.0; problem.num_dofs()])?;
    for &k in &ventricles {
        if targets[k] < v_ref[k] {
            return Err(Error::Unreachable(format!(
                "target {:.2} mL is below the reference volume {:.2} mL",
                targets[k], v_ref[k]
            )));
        }
    }
    let mut d = vec![0.0; problem.num_dofs()];
    let mut loads = LoadState::zero(n);
    let mut v = v_ref;
    let mut evaluations = 0;
    let within = |v: &[f64; 2]| ventricles.iter().all(|&k| (v[k] - targets[k]).abs() < opts.tol_ml);
    if within(&v) {
        return Ok(Inflated {
            d,
            p: [0.0; 2],
            volumes: v,
            evaluations,
        });
    }
    let m = ventricles.len();
    let mut p = [0.0; 2];
    for &k in &ventricles {
        p[k] = opts.initial_pressure;
    }
    // Broyden (multivariate secant) on the pressures; the septum couples
    // the two cavities, so the volume response is not diagonal.
    let mut jac: Option<DMatrix<f64>> = None;
    let mut last: Option<([f64; 2], [f64; 2])> = None;
    for _ in 0..opts.max_iter {
        let next = LoadState {
            ta: vec![0.0; n],
            p,
        };
        let (dn, _) = problem.solve_quasistatic_from(&loads, &next, &d, &opts.newton)?;
        evaluations += 1;
        d = dn;
        loads = next;
        v = cavity_volumes_ml(problem, &frame, &d)?;
        if within(&v) {
            return Ok(Inflated {
                d,
                p,
                volumes: v,
                evaluations,
            });
        }
        let j = match (jac.take(), last) {
            (None, _) | (_, None) => DMatrix::from_fn(m, m, |a, b| {
                let k = ventricles[a];
                if a == b {
                    ((v[k] - v_ref[k]) / p[k]).max(1e-6)
                } else {
                    0.0
                }
            }),
            (Some(mut j), Some((p_old, v_old))) => {
                let dp = DVector::from_fn(m, |a, _| p[ventricles[a]] - p_old[ventricles[a]]);
                let dv = DVector::from_fn(m, |a, _| v[ventricles[a]] - v_old[ventricles[a]]);
                let denom = dp.norm_squared();
                if denom > 0.0 {
                    j += (&dv - &j * &dp) * dp.transpose() / denom;
                }
                j
            }
        };
        let rhs = DVector::from_fn(m, |a, _| targets[ventricles[a]] - v[ventricles[a]]);
        let step = j
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Unreachable("singular pressure-volume secant matrix".into()))?;
        last = Some((p, v));
        jac = Some(j);
        for (a, &k) in ventricles.iter().enumerate() {
            // Limit each update to a doubling or halving of the pressure.
            p[k] = (p[k] + step[a]).clamp(0.5 * p[k], 2.0 * p[k]);
            if p[k] > opts.max_pressure {
                return Err(Error::Unreachable(format!(
                    "ventricle {k} needs more than {:.0} Pa to reach {:.1} mL",
                    opts.max_pressure, targets[k]
                )));
            }
        }
    }
    Err(Error::Unreachable(format!(
        "volumes {:.2?} mL after {} secant steps (targets {:.2?})",
        v, opts.max_iter, targets
    )))
}

/// Result of the single-cell pre-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrerun {
    pub u: f64,
    pub w: Vec<f64>,
    pub force: ForceState,
    /// Largest state change between the last two cycles.
    pub cycle_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrerunOptions {
    pub cycles: usize,
    pub period: f64,
    pub dt: f64,
    /// Stimulus as a rate of u (1/s) and its duration (s); zero rate
    /// disables pacing.
    pub stimulus_rate: f64,
    pub stimulus_duration: f64,
    /// Sarcomere length for the force relaxation (μm).
    pub sarcomere_length: f64,
}

impl Default for PrerunOptions {
    fn default() -> Self {
        Self {
            cycles: 1000,
            period: 0.8,
            dt: 50e-6,
            stimulus_rate: 200.0,
            stimulus_duration: 3e-3,
            sarcomere_length: 2.2,
        }
    }
}

/// Paces one cell for `cycles` beats, then relaxes the force model under
/// the final diastolic calcium.
pub fn single_cell_prerun(model: &dyn IonicModel, act: &ActivationParams, opts: &PrerunOptions) -> Result<CellPrerun> {
    if !(opts.dt > 0.0 && opts.period > 0.0) {
        return Err(Error::InvalidParameter("pre-run step and period must be positive".into()));
    }
    let steps = (opts.period / opts.dt).round() as usize;
    let stim_steps = (opts.stimulus_duration / opts.dt).round() as usize;
    let (mut u, mut w) = model.rest();
    let mut change = 0.0;
    for _ in 0..opts.cycles {
        let last = (u, w.clone());
        for n in 0..steps {
            let stim = if n < stim_steps { opts.stimulus_rate } else { 0.0 };
            let rate = model.step(u, &mut w, opts.dt);
            u += opts.dt * (rate + stim);
        }
        change = w
            .iter()
            .zip(&last.1)
            .map(|(a, b)| (a - b).abs())
            .fold((u - last.0).abs(), f64::max);
    }
    let ca = model.calcium(&w);
    let s = act.permissivity(ca, opts.sarcomere_length);
    Ok(CellPrerun {
        u,
        w,
        force: ForceState { s1: s, s2: s },
        cycle_change: if opts.cycles > 0 { change } else { 0.0 },
    })
}

/// Phase-binned elastance E(t) = p / (V − V₀) of one ventricle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElastanceEmulator {
    pub v0: f64,
    pub period: f64,
    /// mmHg/mL per phase bin.
    pub bins: Vec<f64>,
}

impl ElastanceEmulator {
    /// Least-squares fit per bin from samples (t s, p mmHg, V mL).
    pub fn fit(samples: &[(f64, f64, f64)], v0: f64, period: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || !(period > 0.0) {
            return Err(Error::InvalidParameter("need a positive period and at least one bin".into()));
        }
        let mut num = vec![0.0; n_bins];
        let mut den = vec![0.0; n_bins];
        for &(t, p, v) in samples {
            let b = Self::bin_of(t, period, n_bins);
            num[b] += p * (v - v0);
            den[b] += (v - v0) * (v - v0);
        }
        let bins = num
            .iter()
            .zip(&den)
            .enumerate()
            .map(|(b, (n, d))| {
                if *d > 1e-12 {
                    Ok(n / d)
                } else {
                    Err(Error::DegenerateFit(format!("phase bin {b} has no samples away from V0 = {v0} mL")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { v0, period, bins })
    }

    fn bin_of(t: f64, period: f64, n_bins: usize) -> usize {
        let phase = t.rem_euclid(period) / period;
        ((phase * n_bins as f64) as usize).min(n_bins - 1)
    }

    /// Piecewise-linear elastance between bin centers, periodic in t.
    pub fn elastance(&self, t: f64) -> f64 {
        let n = self.bins.len();
        let x = t.rem_euclid(self.period) / self.period * n as f64 - 0.5;
        let i = x.floor();
        let frac = x - i;
        let a = (i as isize).rem_euclid(n as isize) as usize;
        let b = (a + 1) % n;
        self.bins[a] * (1.0 - frac) + self.bins[b] * frac
    }

    pub fn pressure(&self, t: f64, v: f64) -> f64 {
        self.elastance(t) * (v - self.v0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccelerationOptions {
    pub dt: f64,
    pub max_beats: usize,
    /// Relative beat-to-beat change that counts as periodic.
    pub tol: f64,
}

impl Default for AccelerationOptions {
    fn default() -> Self {
        Self {
            dt: 500e-6,
            max_beats: 200,
            tol: 1e-3,
        }
    }
}

/// The periodic state found by the emulated loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Accelerated {
    pub state: CircState,
    pub beats: usize,
    pub last_change: f64,
}

/// Runs the closed loop with emulated ventricles from `c0` at time `t0`
/// (a beat start) until consecutive beat-start states agree.
pub fn limit_cycle_accelerate(
    circ: &Circulation,
    emulators: [Option<&ElastanceEmulator>; 2],
    c0: CircState,
    t0: f64,
    opts: &AccelerationOptions,
) -> Result<Accelerated> {
    let t_hb = circ.params.t_hb;
    let steps = (t_hb / opts.dt).round() as usize;
    let rhs = |t: f64, y: &[f64; 12]| {
        let c = CircState::from_array(*y);
        let mode = CircMode::Coupled {
            p_lv: emulators[0].map(|e| e.pressure(t, c.v_lv)),
            p_rv: emulators[1].map(|e| e.pressure(t, c.v_rv)),
        };
        circ.rhs(t, &c, mode).to_array()
    };
    let mut y = c0.to_array();
    let mut t = t0;
    let mut change = f64::INFINITY;
    for beat in 1..=opts.max_beats {
        let start = y;
        for _ in 0..steps {
            y = rk4_step(rhs, t, &y, opts.dt);
            t += opts.dt;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "emulated circulation",
                time: t,
            });
        }
        change = y
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max);
        if change < opts.tol {
            return Ok(Accelerated {
                state: CircState::from_array(y),
                beats: beat,
                last_change: change,
            });
        }
    }
    Err(Error::Unreachable(format!(
        "emulated loop not periodic after {} beats (last change {change:.3e})",
        opts.max_beats
    )))
}
