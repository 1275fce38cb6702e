//! 3D-0D coupling: cavity volume constraints enforced with the ventricular
//! pressures as Lagrange multipliers, solved by Newton with a two-pressure
//! Schur complement, and the staggered time loop.

pub mod sis;
pub mod volume;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::sparse::{dot, norm};
use crate::mechanics::{JacobianSolver, LoadState, MechJacobian, MechMode, MechanicsProblem};
pub use volume::{cavity_volume, cavity_volume_and_gradient, CavityFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaddleOptions {
    pub rel_increment: f64,
    pub max_iter: usize,
    /// Constraint tolerance (m³).
    pub volume_tol: f64,
    /// Mechanical residual tolerance (N).
    pub abs_residual: f64,
    /// Pressure perturbation for the constraint-target derivative (Pa).
    pub fd_pressure_step: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            rel_increment: 1e-8,
            max_iter: 20,
            volume_tol: 1e-12,
            abs_residual: 1e-6,
            fd_pressure_step: 1.0,
        }
    }
}

/// Linearized saddle-point system at one Newton iterate.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub jac: MechJacobian,
    pub r_d: Vec<f64>,
    /// Ventricles carrying a pressure unknown (0 = LV, 1 = RV).
    pub ventricles: Vec<usize>,
    /// ∂r_d/∂p_k, one column per active ventricle.
    pub p_cols: Vec<Vec<f64>>,
    /// ∂r_k/∂d, one row per active ventricle.
    pub v_rows: Vec<Vec<f64>>,
    /// ∂r_k/∂p_j.
    pub jpp: DMatrix<f64>,
    pub r_p: Vec<f64>,
}

/// Newton step through the pressure Schur complement: three solves with
/// J_dd, a small pressure system, then back substitution.
pub fn schur_step(sys: &SaddleSystem, solver: &mut JacobianSolver) -> Result<(Vec<f64>, Vec<f64>)> {
    solver.factor(&sys.jac)?;
    let mut rhs: Vec<Vec<f64>> = sys.p_cols.clone();
    rhs.push(sys.r_d.iter().map(|v| -v).collect());
    let mut sol = solver.solve_many(&rhs)?;
    let v = sol.pop().expect("state column");
    let w = sol;
    let m = sys.ventricles.len();
    let alpha = DMatrix::from_fn(m, m, |k, j| sys.jpp[(k, j)] - dot(&sys.v_rows[k], &w[j]));
    let b: Vec<f64> = (0..m).map(|k| -sys.r_p[k] - dot(&sys.v_rows[k], &v)).collect();
    let dp = match m {
        0 => Vec::new(),
        1 => {
            if alpha[(0, 0)] == 0.0 || !alpha[(0, 0)].is_finite() {
                return Err(Error::SingularSchur(alpha[(0, 0)]));
            }
            vec![b[0] / alpha[(0, 0)]]
        }
        2 => {
            let det = alpha[(0, 0)] * alpha[(1, 1)] - alpha[(0, 1)] * alpha[(1, 0)];
            let scale = (alpha[(0, 0)] * alpha[(1, 1)]).abs() + (alpha[(0, 1)] * alpha[(1, 0)]).abs();
            if !(det.abs() > 1e-14 * scale) {
                return Err(Error::SingularSchur(det));
            }
            vec![
                (b[0] * alpha[(1, 1)] - alpha[(0, 1)] * b[1]) / det,
                (alpha[(0, 0)] * b[1] - alpha[(1, 0)] * b[0]) / det,
            ]
        }
        _ => unreachable!("at most two ventricles"),
    };
    let mut dd = v;
    for (wk, dpk) in w.iter().zip(&dp) {
        dd.iter_mut().zip(wk).for_each(|(x, y)| *x -= dpk * y);
    }
    Ok((dd, dp))
}

/// The same Newton step from a dense LU of the full bordered matrix.
pub fn monolithic_step(sys: &SaddleSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sys.r_d.len();
    let m = sys.ventricles.len();
    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&sys.jac.to_dense());
    for k in 0..m {
        for i in 0..n {
            a[(i, n + k)] = sys.p_cols[k][i];
            a[(n + k, i)] = sys.v_rows[k][i];
        }
        for j in 0..m {
            a[(n + k, n + j)] = sys.jpp[(k, j)];
        }
    }
    let b = DVector::from_iterator(n + m, sys.r_d.iter().chain(&sys.r_p).map(|v| -v));
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Factorization("singular monolithic saddle matrix".into()))?;
    Ok((x.rows(0, n).iter().copied().collect(), x.rows(n, m).iter().copied().collect()))
}

/// Diagnostics of one constrained solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SaddleReport {
    pub iterations: usize,
    /// Final constraint residuals (mL).
    pub volume_residual_ml: [f64; 2],
    /// Largest relative mismatch of the base momentum balance over all
    /// iterates (only when tracking is enabled).
    pub max_momentum_error: f64,
}

/// Mechanics with cavity volume constraints.
#[derive(Debug)]
pub struct CoupledMechanics {
    pub problem: MechanicsProblem,
    pub frame: CavityFrame,
    pub options: SaddleOptions,
    pub track_momentum: bool,
    solver: JacobianSolver,
}

/// Target volumes (m³) of both ventricles as a function of the pressures (Pa).
pub type VolumeTarget<'a> = dyn Fn([f64; 2]) -> Result<[f64; 2]> + 'a;

impl CoupledMechanics {
    pub fn new(problem: MechanicsProblem) -> Result<Self> {
        let frame = CavityFrame::from_mesh(problem.mesh())?;
        Ok(Self {
            problem,
            frame,
            options: SaddleOptions::default(),
            track_momentum: false,
            solver: Default::default(),
        })
    }

    /// Cavity volumes (m³) at displacement d; zero for a missing ventricle.
    pub fn volumes(&self, d: &[f64]) -> Result<[f64; 2]> {
        let mut v = [0.0; 2];
        for k in self.problem.ventricles() {
            v[k] = cavity_volume(self.problem.mesh(), self.problem.endo_faces(k), d, &self.frame.h, &self.frame.b[k])?;
        }
        Ok(v)
    }

    pub fn assemble_system(
        &self,
        d: &[f64],
        p: [f64; 2],
        ta: &[f64],
        mode: MechMode<'_>,
        target: &VolumeTarget<'_>,
    ) -> Result<SaddleSystem> {
        let loads = LoadState { ta: ta.to_vec(), p };
        let (r_d, jac) = self.problem.residual_and_jacobian(d, &loads, mode)?;
        let ventricles = self.problem.ventricles();
        let pv = self.problem.pressure_vectors(d)?;
        let tv = target(p)?;
        let mut p_cols = Vec::new();
        let mut v_rows = Vec::new();
        let mut r_p = Vec::new();
        for &k in &ventricles {
            let (v, g) = cavity_volume_and_gradient(
                self.problem.mesh(),
                self.problem.endo_faces(k),
                d,
                &self.frame.h,
                &self.frame.b[k],
                true,
            )?;
            p_cols.push(pv[k].clone());
            v_rows.push(g);
            r_p.push(v - tv[k]);
        }
        let m = ventricles.len();
        let h = self.options.fd_pressure_step;
        let mut jpp = DMatrix::zeros(m, m);
        for (j, &kj) in ventricles.iter().enumerate() {
            let mut pp = p;
            let mut pm = p;
            pp[kj] += h;
            pm[kj] -= h;
            let (tp, tm) = (target(pp)?, target(pm)?);
            for (k, &kk) in ventricles.iter().enumerate() {
                jpp[(k, j)] = -(tp[kk] - tm[kk]) / (2.0 * h);
            }
        }
        Ok(SaddleSystem {
            jac,
            r_d,
            ventricles,
            p_cols,
            v_rows,
            jpp,
            r_p,
        })
    }

    fn momentum_error(&self, d: &[f64], p: [f64; 2]) -> Result<f64> {
        let total: nalgebra::Vector3<f64> = self
            .problem
            .base_traction(d, p)?
            .iter()
            .map(|(_, da, t)| t * *da)
            .sum();
        let mut expect = nalgebra::Vector3::zeros();
        for k in self.problem.ventricles() {
            expect += self.problem.endo_area_vector(k, d)? * p[k];
        }
        let scale = expect.norm();
        Ok(if scale > 0.0 { (total - expect).norm() / scale } else { total.norm() })
    }

    /// Newton iteration on displacement and pressures starting from
    /// (d0, p0). `target` gives the 0D volumes for candidate pressures.
    pub fn solve(
        &mut self,
        d0: &[f64],
        p0: [f64; 2],
        ta: &[f64],
        mode: MechMode<'_>,
        target: &VolumeTarget<'_>,
    ) -> Result<(Vec<f64>, [f64; 2], SaddleReport)> {
        let mut d = d0.to_vec();
        let mut p = p0;
        let mut report = SaddleReport::default();
        let mut last_res = f64::NAN;
        for it in 0..=self.options.max_iter {
            if self.track_momentum {
                report.max_momentum_error = report.max_momentum_error.max(self.momentum_error(&d, p)?);
            }
            let sys = self.assemble_system(&d, p, ta, mode, target)?;
            let rd = norm(&sys.r_d);
            let rp = sys.r_p.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            last_res = rd;
            let record = |report: &mut SaddleReport| {
                report.volume_residual_ml = [0.0; 2];
                for (i, &k) in sys.ventricles.iter().enumerate() {
                    report.volume_residual_ml[k] = sys.r_p[i] * 1e6;
                }
            };
            if rd < self.options.abs_residual && rp < self.options.volume_tol {
                record(&mut report);
                report.iterations = it;
                return Ok((d, p, report));
            }
            if it == self.options.max_iter {
                break;
            }
            let (dd, dp) = schur_step(&sys, &mut self.solver)?;
            d.iter_mut().zip(&dd).for_each(|(a, b)| *a += b);
            for (i, &k) in sys.ventricles.iter().enumerate() {
                p[k] += dp[i];
            }
            let small_d = norm(&dd) <= self.options.rel_increment * norm(&d).max(1e-12);
            let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small_p = dp.iter().map(|v| v * v).sum::<f64>().sqrt() <= self.options.rel_increment * pnorm.max(1.0);
            if small_d && small_p {
                let sys = self.assemble_system(&d, p, ta, mode, target)?;
                let rp = sys.r_p.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                if rp < 1e3 * self.options.volume_tol {
                    if self.track_momentum {
                        report.max_momentum_error = report.max_momentum_error.max(self.momentum_error(&d, p)?);
                    }
                    report.volume_residual_ml = [0.0; 2];
                    for (i, &k) in sys.ventricles.iter().enumerate() {
                        report.volume_residual_ml[k] = sys.r_p[i] * 1e6;
                    }
                    report.iterations = it + 1;
                    return Ok((d, p, report));
                }
            }
        }
        Err(Error::NewtonDiverged {
            iterations: self.options.max_iter,
            residual: last_res,
            ramp: 1.0,
        })
    }
}
