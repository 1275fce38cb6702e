//! Closed-loop lumped circulation: time-varying elastance chambers, diode
//! valves and RLC systemic and pulmonary compartments.
//!
//! Units are mL, mmHg and s throughout this module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pa per mmHg.
pub const MMHG: f64 = 133.322;

/// Time-varying elastance chamber. Timing values are fractions of the
/// heartbeat period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChamberParams {
    /// Baseline elastance (mmHg/mL).
    pub e_a: f64,
    /// Elastance amplitude (mmHg/mL).
    pub e_p: f64,
    /// Resting volume (mL).
    pub v0: f64,
    /// Contraction start.
    pub t_start: f64,
    /// Contraction duration.
    pub t_contract: f64,
    /// Relaxation duration.
    pub t_relax: f64,
}

impl ChamberParams {
    pub fn elastance(&self, t: f64, t_hb: f64) -> f64 {
        self.e_a + self.e_p * activation_curve(t, self.t_start * t_hb, self.t_contract * t_hb, self.t_relax * t_hb, t_hb)
    }

    pub fn pressure(&self, t: f64, v: f64, t_hb: f64) -> f64 {
        self.elastance(t, t_hb) * (v - self.v0)
    }
}

/// Cosine activation e(t) ∈ [0, 1]: rises over `t_c` from `t_start`, decays
/// over `t_r`, zero elsewhere, periodic with `t_hb`.
pub fn activation_curve(t: f64, t_start: f64, t_c: f64, t_r: f64, t_hb: f64) -> f64 {
    let s = (t - t_start).rem_euclid(t_hb);
    if s < t_c {
        0.5 * (1.0 - (std::f64::consts::PI * s / t_c).cos())
    } else if s < t_c + t_r {
        0.5 * (1.0 + (std::f64::consts::PI * (s - t_c) / t_r).cos())
    } else {
        0.0
    }
}

/// Elastance of a chamber at time t (mmHg/mL).
pub fn elastance(t: f64, e_a: f64, e_p: f64, t_start: f64, t_contract: f64, t_relax: f64, t_hb: f64) -> f64 {
    e_a + e_p * activation_curve(t, t_start * t_hb, t_contract * t_hb, t_relax * t_hb, t_hb)
}

/// Classical fourth-order Runge–Kutta step for y' = f(t, y).
pub fn rk4_step<F, const N: usize>(f: F, t: f64, y: &[f64; N], dt: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let shift = |k: &[f64; N], s: f64| -> [f64; N] { std::array::from_fn(|i| y[i] + s * k[i]) };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &shift(&k1, 0.5 * dt));
    let k3 = f(t + 0.5 * dt, &shift(&k2, 0.5 * dt));
    let k4 = f(t + dt, &shift(&k3, dt));
    std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Non-ideal diode: low resistance forward, high resistance backward.
pub fn valve_flow(p_up: f64, p_down: f64, r_min: f64, r_max: f64) -> f64 {
    let dp = p_up - p_down;
    dp / if dp > 0.0 { r_min } else { r_max }
}

/// One resistance–inductance–capacitance compartment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rlc {
    pub r: f64,
    pub c: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitParams {
    /// Heartbeat period (s).
    pub t_hb: f64,
    pub ar_sys: Rlc,
    pub ven_sys: Rlc,
    pub ar_pul: Rlc,
    pub ven_pul: Rlc,
    pub la: ChamberParams,
    pub ra: ChamberParams,
    /// Standalone ventricles (replaced by the 3D model when coupled).
    pub lv: ChamberParams,
    pub rv: ChamberParams,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        let atrium = |e_p| ChamberParams {
            e_a: 0.07,
            e_p,
            v0: 4.0,
            t_start: 0.8,
            t_contract: 0.17,
            t_relax: 0.17,
        };
        let ventricle = |e_a, e_p| ChamberParams {
            e_a,
            e_p,
            v0: 16.0,
            t_start: 0.0,
            t_contract: 0.425,
            t_relax: 0.2125,
        };
        Self {
            t_hb: 0.8,
            ar_sys: Rlc { r: 0.416, c: 1.62, l: 5e-3 },
            ven_sys: Rlc { r: 0.26, c: 60.0, l: 5e-4 },
            ar_pul: Rlc { r: 0.048, c: 5.0, l: 5e-4 },
            ven_pul: Rlc { r: 0.036, c: 16.0, l: 5e-4 },
            la: atrium(0.09),
            ra: atrium(0.06),
            lv: ventricle(0.08, 2.75),
            rv: ventricle(0.05, 0.55),
            r_min: 75e-4,
            r_max: 75e3,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_hb > 0.0) {
            return Err(Error::InvalidParameter("heartbeat period must be positive".into()));
        }
        for (name, c) in [
            ("ar_sys", self.ar_sys),
            ("ven_sys", self.ven_sys),
            ("ar_pul", self.ar_pul),
            ("ven_pul", self.ven_pul),
        ] {
            if !(c.r > 0.0 && c.c > 0.0 && c.l > 0.0) {
                return Err(Error::InvalidParameter(format!("{name}: R, C and L must be positive")));
            }
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::InvalidParameter("valve resistances need 0 < R_min < R_max".into()));
        }
        for (name, ch) in [("la", self.la), ("ra", self.ra), ("lv", self.lv), ("rv", self.rv)] {
            let fr = [ch.t_start, ch.t_contract, ch.t_relax];
            if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(Error::InvalidParameter(format!("{name}: timing fractions must lie in [0, 1]")));
            }
            if !(ch.e_a >= 0.0 && ch.e_p >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name}: elastances must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// The twelve circulation unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircState {
    pub v_la: f64,
    pub v_lv: f64,
    pub v_ra: f64,
    pub v_rv: f64,
    pub p_ar_sys: f64,
    pub p_ven_sys: f64,
    pub p_ar_pul: f64,
    pub p_ven_pul: f64,
    pub q_ar_sys: f64,
    pub q_ven_sys: f64,
    pub q_ar_pul: f64,
    pub q_ven_pul: f64,
}

/// A state on the standalone limit cycle at the start of a beat.
impl Default for CircState {
    fn default() -> Self {
        Self {
            v_la: 78.0,
            v_lv: 152.0,
            v_ra: 66.9,
            v_rv: 152.4,
            p_ar_sys: 72.7,
            p_ven_sys: 38.9,
            p_ar_pul: 14.7,
            p_ven_pul: 13.1,
            q_ar_sys: 82.8,
            q_ven_sys: 119.0,
            q_ar_pul: 34.6,
            q_ven_pul: 34.4,
        }
    }
}

impl CircState {
    pub const NAMES: [&'static str; 12] = [
        "V_LA", "V_LV", "V_RA", "V_RV", "p_ar_SYS", "p_ven_SYS", "p_ar_PUL", "p_ven_PUL", "Q_ar_SYS", "Q_ven_SYS",
        "Q_ar_PUL", "Q_ven_PUL",
    ];

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.v_la,
            self.v_lv,
            self.v_ra,
            self.v_rv,
            self.p_ar_sys,
            self.p_ven_sys,
            self.p_ar_pul,
            self.p_ven_pul,
            self.q_ar_sys,
            self.q_ven_sys,
            self.q_ar_pul,
            self.q_ven_pul,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        Self {
            v_la: a[0],
            v_lv: a[1],
            v_ra: a[2],
            v_rv: a[3],
            p_ar_sys: a[4],
            p_ven_sys: a[5],
            p_ar_pul: a[6],
            p_ven_pul: a[7],
            q_ar_sys: a[8],
            q_ven_sys: a[9],
            q_ar_pul: a[10],
            q_ven_pul: a[11],
        }
    }

    /// Chamber volumes plus compliance-stored volumes (mL).
    pub fn total_volume(&self, p: &CircuitParams) -> f64 {
        self.v_la
            + self.v_lv
            + self.v_ra
            + self.v_rv
            + p.ar_sys.c * self.p_ar_sys
            + p.ven_sys.c * self.p_ven_sys
            + p.ar_pul.c * self.p_ar_pul
            + p.ven_pul.c * self.p_ven_pul
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Source of the ventricular pressures.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CircMode {
    /// Ventricles follow their elastance curves.
    #[default]
    Standalone,
    /// Ventricular pressures (mmHg) imposed from outside; `None` keeps the
    /// elastance model for that ventricle.
    Coupled { p_lv: Option<f64>, p_rv: Option<f64> },
}

/// Chamber pressures and valve flows at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircOutputs {
    pub p_la: f64,
    pub p_lv: f64,
    pub p_ra: f64,
    pub p_rv: f64,
    pub q_mv: f64,
    pub q_av: f64,
    pub q_tv: f64,
    pub q_pv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Circulation {
    pub params: CircuitParams,
}

impl Circulation {
    pub fn new(params: CircuitParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn outputs(&self, t: f64, c: &CircState, mode: CircMode) -> CircOutputs {
        let p = &self.params;
        let (lv, rv) = match mode {
            CircMode::Standalone => (None, None),
            CircMode::Coupled { p_lv, p_rv } => (p_lv, p_rv),
        };
        let p_la = p.la.pressure(t, c.v_la, p.t_hb);
        let p_ra = p.ra.pressure(t, c.v_ra, p.t_hb);
        let p_lv = lv.unwrap_or_else(|| p.lv.pressure(t, c.v_lv, p.t_hb));
        let p_rv = rv.unwrap_or_else(|| p.rv.pressure(t, c.v_rv, p.t_hb));
        CircOutputs {
            p_la,
            p_lv,
            p_ra,
            p_rv,
            q_mv: valve_flow(p_la, p_lv, p.r_min, p.r_max),
            q_av: valve_flow(p_lv, c.p_ar_sys, p.r_min, p.r_max),
            q_tv: valve_flow(p_ra, p_rv, p.r_min, p.r_max),
            q_pv: valve_flow(p_rv, c.p_ar_pul, p.r_min, p.r_max),
        }
    }

    pub fn rhs(&self, t: f64, c: &CircState, mode: CircMode) -> CircState {
        let p = &self.params;
        let o = self.outputs(t, c, mode);
        CircState {
            v_la: c.q_ven_pul - o.q_mv,
            v_lv: o.q_mv - o.q_av,
            v_ra: c.q_ven_sys - o.q_tv,
            v_rv: o.q_tv - o.q_pv,
            p_ar_sys: (o.q_av - c.q_ar_sys) / p.ar_sys.c,
            p_ven_sys: (c.q_ar_sys - c.q_ven_sys) / p.ven_sys.c,
            p_ar_pul: (o.q_pv - c.q_ar_pul) / p.ar_pul.c,
            p_ven_pul: (c.q_ar_pul - c.q_ven_pul) / p.ven_pul.c,
            q_ar_sys: (-p.ar_sys.r * c.q_ar_sys + c.p_ar_sys - c.p_ven_sys) / p.ar_sys.l,
            q_ven_sys: (-p.ven_sys.r * c.q_ven_sys + c.p_ven_sys - o.p_ra) / p.ven_sys.l,
            q_ar_pul: (-p.ar_pul.r * c.q_ar_pul + c.p_ar_pul - c.p_ven_pul) / p.ar_pul.l,
            q_ven_pul: (-p.ven_pul.r * c.q_ven_pul + c.p_ven_pul - o.p_la) / p.ven_pul.l,
        }
    }

    /// Classical fourth-order Runge–Kutta step.
    pub fn step_rk4(&self, c: &CircState, t: f64, dt: f64, mode: CircMode) -> Result<CircState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("time step must be positive".into()));
        }
        let f = |t: f64, y: &[f64; 12]| self.rhs(t, &CircState::from_array(*y), mode).to_array();
        let next = CircState::from_array(rk4_step(f, t, &c.to_array(), dt));
        if next.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "circulation state".into(),
                time: t + dt,
            });
        }
        Ok(next)
    }

    /// Standalone run of `beats` heartbeats; returns samples at every step
    /// including the initial state.
    pub fn run(&self, c0: CircState, beats: usize, dt: f64) -> Result<Vec<(f64, CircState)>> {
        let steps = (beats as f64 * self.params.t_hb / dt).round() as usize;
        let mut out = Vec::with_capacity(steps + 1);
        let mut c = c0;
        out.push((0.0, c));
        for n in 0..steps {
            let t = n as f64 * dt;
            c = self.step_rk4(&c, t, dt, CircMode::Standalone)?;
            out.push(((n + 1) as f64 * dt, c));
        }
        Ok(out)
    }
}

/// Per-beat maxima of the systemic arterial pressure from a sampled run.
pub fn beat_peaks(samples: &[(f64, CircState)], t_hb: f64) -> Vec<f64> {
    let mut peaks: Vec<f64> = Vec::new();
    for (t, c) in samples {
        let beat = ((t / t_hb) - 1e-9).floor().max(0.0) as usize;
        if peaks.len() <= beat {
            peaks.resize(beat + 1, f64::NEG_INFINITY);
        }
        peaks[beat] = peaks[beat].max(c.p_ar_sys);
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elastance_examples() {
        let la = CircuitParams::default().la;
        // Mid relaxed phase.
        assert!((la.elastance(0.3, 0.8) - 0.07).abs() < 1e-15);
        // Peak at end of contraction: t_start + T_ac = 0.8 + 0.17 of the period.
        let t_peak = (0.8 + 0.17) * 0.8;
        assert!((la.elastance(t_peak, 0.8) - 0.16).abs() < 1e-12);
        let flat = ChamberParams { e_p: 0.0, ..la };
        assert_eq!(flat.elastance(0.1, 0.8), flat.elastance(0.7, 0.8));
    }

    #[test]
    fn valve_examples() {
        assert!((valve_flow(10.0, 0.0, 75e-4, 75e3) - 10.0 / 75e-4).abs() < 1e-9);
        assert!((valve_flow(0.0, 10.0, 75e-4, 75e3) + 10.0 / 75e3).abs() < 1e-15);
        assert_eq!(valve_flow(5.0, 5.0, 75e-4, 75e3), 0.0);
    }

    #[test]
    fn rhs_conserves_volume() {
        let circ = Circulation::default();
        let c = CircState {
            q_ar_sys: 40.0,
            q_ven_pul: -3.0,
            ..Default::default()
        };
        let p = &circ.params;
        for t in [0.0, 0.1, 0.33, 0.7] {
            let d = circ.rhs(t, &c, CircMode::Standalone);
            let total = d.v_la
                + d.v_lv
                + d.v_ra
                + d.v_rv
                + p.ar_sys.c * d.p_ar_sys
                + p.ven_sys.c * d.p_ven_sys
                + p.ar_pul.c * d.p_ar_pul
                + p.ven_pul.c * d.p_ven_pul;
            assert!(total.abs() < 1e-9);
        }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let mut params = CircuitParams::default();
        for ch in [&mut params.la, &mut params.ra, &mut params.lv, &mut params.rv] {
            ch.e_p = 0.0;
            ch.e_a = 1.0;
            ch.v0 = 0.0;
        }
        let circ = Circulation::new(params).unwrap();
        let c = CircState {
            v_la: 10.0,
            v_lv: 10.0,
            v_ra: 10.0,
            v_rv: 10.0,
            p_ar_sys: 10.0,
            p_ven_sys: 10.0,
            p_ar_pul: 10.0,
            p_ven_pul: 10.0,
            q_ar_sys: 0.0,
            q_ven_sys: 0.0,
            q_ar_pul: 0.0,
            q_ven_pul: 0.0,
        };
        assert!(circ.rhs(0.2, &c, CircMode::Standalone).to_array().iter().all(|v| *v == 0.0));
        assert_eq!(circ.step_rk4(&c, 0.2, 1e-3, CircMode::Standalone).unwrap(), c);
    }

    #[test]
    fn rk4_local_error_is_fifth_order() {
        // y' = A y with a rotation-plus-decay generator.
        let f = |_t: f64, y: &[f64; 2]| [-0.5 * y[0] + 2.0 * y[1], -2.0 * y[0] - 0.5 * y[1]];
        let exact = |t: f64| {
            let e = (-0.5 * t).exp();
            [e * (2.0 * t).cos(), -e * (2.0 * t).sin()]
        };
        let err = |h: f64| {
            let y = rk4_step(f, 0.0, &[1.0, 0.0], h);
            let ex = exact(h);
            ((y[0] - ex[0]).powi(2) + (y[1] - ex[1]).powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((24.0..=40.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = CircuitParams::default();
        p.r_min = p.r_max * 2.0;
        assert!(Circulation::new(p).is_err());
        let circ = Circulation::default();
        assert!(circ.step_rk4(&CircState::default(), 0.0, 0.0, CircMode::Standalone).is_err());
    }
}
