//! Force-generation dynamics and the active tension field.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivationParams {
    /// Maximum tension (Pa).
    pub t_max: f64,
    /// RV/LV contractility ratio.
    pub c_r: f64,
    /// Reference sarcomere length (μm).
    pub sl0: f64,
    /// Half-activation calcium at SL0 (μM).
    pub ca50: f64,
    /// Length sensitivity of the half-activation calcium (μM/μm).
    pub ca50_slope: f64,
    pub hill: f64,
    /// Diastolic calcium (μM); only the transient above it activates.
    pub ca_rest: f64,
    pub tau_a: f64,
    pub tau_f: f64,
    pub sl_min: f64,
    pub sl_max: f64,
}

impl Default for ActivationParams {
    fn default() -> Self {
        Self {
            t_max: 840e3,
            c_r: 0.6,
            sl0: 2.0,
            ca50: 0.5,
            ca50_slope: 0.3,
            hill: 4.0,
            ca_rest: 0.1,
            tau_a: 0.030,
            tau_f: 0.050,
            sl_min: 1.6,
            sl_max: 2.6,
        }
    }
}

impl ActivationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidParameter("maximum tension must be positive".into()));
        }
        if !(self.c_r > 0.0 && self.c_r <= 1.0) {
            return Err(Error::InvalidParameter("contractility ratio must lie in (0, 1]".into()));
        }
        if !(self.sl0 > 0.0 && self.tau_a > 0.0 && self.tau_f > 0.0 && self.hill > 0.0) {
            return Err(Error::InvalidParameter("force-model constants must be positive".into()));
        }
        if !(self.sl_min < self.sl_max) {
            return Err(Error::InvalidParameter("sarcomere clamp range is empty".into()));
        }
        if self.ca50 - self.ca50_slope * (self.sl_max - self.sl0) <= 0.0 {
            return Err(Error::InvalidParameter("half-activation calcium must stay positive over the clamp range".into()));
        }
        Ok(())
    }

    /// Steady-state permissivity P∞(Ca, SL), a Hill curve in the calcium
    /// excess over the diastolic level.
    pub fn permissivity(&self, ca: f64, sl: f64) -> f64 {
        let sl = sl.clamp(self.sl_min, self.sl_max);
        let c50 = self.ca50 - self.ca50_slope * (sl - self.sl0);
        let x = (ca - self.ca_rest).max(0.0).powf(self.hill);
        x / (x + c50.powf(self.hill))
    }
}

/// Relay state (s₁, s₂) of one node.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceState {
    pub s1: f64,
    pub s2: f64,
}

/// SL = SL₀ ‖F f0‖ (μm).
pub fn sarcomere_length(f: &Matrix3<f64>, f0: &Vector3<f64>, sl0: f64) -> f64 {
    sl0 * (f * f0).norm()
}

/// Explicit Euler step of the relay dynamics.
pub fn step_force(s: ForceState, ca: f64, sl: f64, dt: f64, p: &ActivationParams) -> Result<ForceState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("force step must be positive, got {dt}")));
    }
    let pinf = p.permissivity(ca, sl);
    let s1 = (s.s1 + dt * (pinf - s.s1) / p.tau_a).clamp(0.0, 1.0);
    let s2 = (s.s2 + dt * (s.s1 - s.s2) / p.tau_f).clamp(0.0, 1.0);
    Ok(ForceState { s1, s2 })
}

/// T_a = T_max s₂ [ξ̂ + C_r (1 − ξ̂)] (Pa).
pub fn active_tension(s: &ForceState, xi_hat: f64, p: &ActivationParams) -> f64 {
    let xi = xi_hat.clamp(0.0, 1.0);
    (p.t_max * s.s2 * (xi + p.c_r * (1.0 - xi))).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sarcomere_examples() {
        let f0 = Vector3::x();
        assert_eq!(sarcomere_length(&Matrix3::identity(), &f0, 2.0), 2.0);
        let f = Matrix3::from_diagonal(&Vector3::new(1.1, 1.0, 1.0));
        assert!((sarcomere_length(&f, &f0, 2.0) - 2.2).abs() < 1e-14);
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        assert!((sarcomere_length(&rot, &f0, 2.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tension_examples() {
        let p = ActivationParams::default();
        let s = ForceState { s1: 1.0, s2: 1.0 };
        assert_eq!(active_tension(&s, 1.0, &p), 840e3);
        assert!((active_tension(&s, 0.0, &p) - 504e3).abs() < 1e-6);
        assert_eq!(active_tension(&ForceState::default(), 0.3, &p), 0.0);
    }

    #[test]
    fn length_dependence_is_monotone() {
        let p = ActivationParams::default();
        assert!(p.permissivity(0.5, 2.2) > p.permissivity(0.5, 2.0));
    }

    #[test]
    fn nonpositive_step_rejected() {
        let p = ActivationParams::default();
        assert!(step_force(ForceState::default(), 0.1, 2.0, 0.0, &p).is_err());
    }
}
