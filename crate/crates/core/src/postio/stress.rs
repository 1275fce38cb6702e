//! Axial stresses along the myocardial frame.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::mechanics::MechanicsProblem;

/// Axial stress σ_aa = (P a₀)·(F a₀ / |F a₀|) for a unit reference direction a₀.
pub fn axial_stress(f: &Matrix3<f64>, p: &Matrix3<f64>, a0: &Vector3<f64>) -> f64 {
    let fa = f * a0;
    (p * a0).dot(&fa) / fa.norm()
}

/// Quadrature-point axial stresses along fibers, sheets and normals (Pa).
#[derive(Debug, Clone, PartialEq)]
pub struct AxialStresses {
    pub ff: Vec<[f64; 8]>,
    pub ss: Vec<[f64; 8]>,
    pub nn: Vec<[f64; 8]>,
}

/// Minimum, mean and maximum of one field over all quadrature points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trace {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Trace {
    fn of(values: &[[f64; 8]]) -> Self {
        let all = values.iter().flatten();
        let n = values.len() * 8;
        Self {
            min: all.clone().copied().fold(f64::INFINITY, f64::min),
            mean: all.clone().sum::<f64>() / n.max(1) as f64,
            max: all.copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl AxialStresses {
    /// Evaluates the three axial stresses at displacement `d` with nodal
    /// active tension `ta`.
    pub fn compute(problem: &MechanicsProblem, d: &[f64], ta: &[f64]) -> Result<Self> {
        let sp = problem.stresses(d, ta)?;
        let mut out = Self {
            ff: Vec::with_capacity(sp.len()),
            ss: Vec::with_capacity(sp.len()),
            nn: Vec::with_capacity(sp.len()),
        };
        for (e, qps) in sp.iter().enumerate() {
            let mut k = [[0.0; 8]; 3];
            for (q, (f, p)) in qps.iter().enumerate() {
                let r = &problem.frames()[e][q];
                for (a, slot) in k.iter_mut().enumerate() {
                    slot[q] = axial_stress(f, p, &r.column(a).into());
                }
            }
            out.ff.push(k[0]);
            out.ss.push(k[1]);
            out.nn.push(k[2]);
        }
        Ok(out)
    }

    /// Traces for (ff, ss, nn).
    pub fn traces(&self) -> [Trace; 3] {
        [Trace::of(&self.ff), Trace::of(&self.ss), Trace::of(&self.nn)]
    }

    /// Element means, for cell data output.
    pub fn element_means(values: &[[f64; 8]]) -> Vec<f64> {
        values.iter().map(|q| q.iter().sum::<f64>() / 8.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::material::active_piola;

    #[test]
    fn pure_fiber_tension_at_identity() {
        let r = Matrix3::identity();
        let f = Matrix3::identity();
        let p = active_piola(&f, &r, 5e4, [1.0, 0.0, 0.0]);
        assert_eq!(axial_stress(&f, &p, &Vector3::x()), 5e4);
        assert_eq!(axial_stress(&f, &p, &Vector3::y()), 0.0);
        assert_eq!(axial_stress(&f, &p, &Vector3::z()), 0.0);
    }

    #[test]
    fn zero_stress_is_zero() {
        let f = Matrix3::new(1.1, 0.1, 0.0, 0.0, 0.95, 0.02, 0.0, 0.0, 0.97);
        for a in [Vector3::x(), Vector3::y(), Vector3::z()] {
            assert_eq!(axial_stress(&f, &Matrix3::zeros(), &a), 0.0);
        }
    }
}
