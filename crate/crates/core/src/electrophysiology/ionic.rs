//! Cell models behind the (u, w, Ca) interface.

use serde::{Deserialize, Serialize};

/// A cell model advanced explicitly. `u` is dimensionless (0 at rest,
/// about 1 at the plateau).
pub trait IonicModel: Send + Sync + std::fmt::Debug {
    fn n_state(&self) -> usize;

    /// Resting potential and gating state.
    fn rest(&self) -> (f64, Vec<f64>);

    /// Reaction rate du/dt (1/s) at (u, w), then w ← w + dt·g(u, w).
    fn step(&self, u: f64, w: &mut [f64], dt: f64) -> f64;

    /// Intracellular calcium (μM).
    fn calcium(&self, w: &[f64]) -> f64;

    /// Dimensionless potential to mV.
    fn to_mv(&self, u: f64) -> f64;

    fn from_mv(&self, v: f64) -> f64;
}

/// Output of one explicit cell update.
#[derive(Debug, Clone, PartialEq)]
pub struct IonicStep {
    /// Reaction rate du/dt (1/s).
    pub i_ion: f64,
    pub w_next: Vec<f64>,
    /// Calcium after the update (μM).
    pub ca: f64,
}

pub fn step_ionic(model: &dyn IonicModel, u: f64, w: &[f64], tau: f64) -> IonicStep {
    let mut w_next = w.to_vec();
    let i_ion = model.step(u, &mut w_next, tau);
    IonicStep {
        i_ion,
        ca: model.calcium(&w_next),
        w_next,
    }
}

/// Aliev–Panfilov excitation with a first-order calcium proxy.
/// State w = (r, g): recovery variable and calcium gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlievPanfilov {
    pub k: f64,
    pub a: f64,
    pub eps0: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Seconds per dimensionless time unit.
    pub time_scale: f64,
    pub v_rest: f64,
    pub v_amplitude: f64,
    /// Potential above which the calcium gate opens (dimensionless).
    pub ca_gate: f64,
    pub tau_ca_rise: f64,
    pub tau_ca_decay: f64,
    pub ca_rest: f64,
    pub ca_amplitude: f64,
}

impl Default for AlievPanfilov {
    fn default() -> Self {
        Self {
            k: 8.0,
            a: 0.1,
            eps0: 0.002,
            mu1: 0.2,
            mu2: 0.3,
            time_scale: 0.0093,
            v_rest: -84.0,
            v_amplitude: 120.0,
            ca_gate: 0.05,
            tau_ca_rise: 0.020,
            tau_ca_decay: 0.100,
            ca_rest: 0.1,
            ca_amplitude: 0.28,
        }
    }
}

impl IonicModel for AlievPanfilov {
    fn n_state(&self) -> usize {
        2
    }

    fn rest(&self) -> (f64, Vec<f64>) {
        (0.0, vec![0.0, 0.0])
    }

    fn step(&self, u: f64, w: &mut [f64], dt: f64) -> f64 {
        let r = w[0];
        let g = w[1];
        let ts = self.time_scale;
        let rate = (self.k * u * (u - self.a) * (1.0 - u) - u * r) / ts;
        let gate = self.eps0 + self.mu1 * r / (self.mu2 + u).max(1e-3);
        let dr = gate * (-r - self.k * u * (u - self.a - 1.0)) / ts;
        let h = if u > self.ca_gate { 1.0 } else { 0.0 };
        let tau = if h > g { self.tau_ca_rise } else { self.tau_ca_decay };
        w[0] = r + dt * dr;
        w[1] = g + dt * (h - g) / tau;
        rate
    }

    fn calcium(&self, w: &[f64]) -> f64 {
        self.ca_rest + self.ca_amplitude * w[1]
    }

    fn to_mv(&self, u: f64) -> f64 {
        self.v_rest + self.v_amplitude * u
    }

    fn from_mv(&self, v: f64) -> f64 {
        (v - self.v_rest) / self.v_amplitude
    }
}
