//! Krylov solvers with Jacobi preconditioning.

use super::sparse::{dot, norm, CsrMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Preconditioned conjugate gradients.
    Spd,
    /// Preconditioned BiCGSTAB.
    General,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Converged once ‖r‖ ≤ rel_tol ‖b‖.
    pub rel_tol: f64,
    /// ... or once ‖r‖ ≤ abs_tol.
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// A sparse system with optional Dirichlet constraints (one entry per
/// unknown, `Some(value)` when fixed).
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraints: Vec<Option<f64>>,
}

impl LinearSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if rhs.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: rhs.len(),
            });
        }
        let n = rhs.len();
        Ok(Self {
            matrix,
            rhs,
            constraints: vec![None; n],
        })
    }

    pub fn constrain(&mut self, dof: usize, value: f64) {
        self.constraints[dof] = Some(value);
    }

    pub fn has_constraints(&self) -> bool {
        self.constraints.iter().any(Option::is_some)
    }

    /// Eliminates constraints in place; afterwards constrained rows are
    /// identity rows.
    pub fn apply_constraints(&mut self) {
        if self.has_constraints() {
            self.matrix.apply_dirichlet(&self.constraints, &mut self.rhs);
        }
    }

    pub fn solve(mut self, kind: SolverKind, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
        self.apply_constraints();
        let x0: Vec<f64> = self.constraints.iter().map(|c| c.unwrap_or(0.0)).collect();
        iterative_solve(&self.matrix, &self.rhs, Some(&x0), kind, opts)
    }
}

pub fn iterative_solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    kind: SolverKind,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    match kind {
        SolverKind::Spd => cg(a, b, x0, &inv_diag, opts),
        SolverKind::General => bicgstab(a, b, x0, &inv_diag, opts),
    }
}

fn threshold(b: &[f64], opts: &SolverOptions) -> f64 {
    (opts.rel_tol * norm(b)).max(opts.abs_tol)
}

fn cg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    inv_diag: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = a.mul_vec(&x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let tol = threshold(b, opts);
    let mut res = norm(&r);
    if res <= tol {
        return Ok((x, SolveStats { iterations: 0, residual: res }));
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverBreakdown {
                method: "CG",
                iteration: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        if res <= tol {
            return Ok((x, SolveStats { iterations: it, residual: res }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverNotConverged {
        method: "CG",
        iterations: opts.max_iter,
        residual: res,
    })
}

fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    inv_diag: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = a.mul_vec(&x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let tol = threshold(b, opts);
    let mut res = norm(&r);
    if res <= tol {
        return Ok((x, SolveStats { iterations: 0, residual: res }));
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    let breakdown = |iteration, residual| Error::SolverBreakdown {
        method: "BiCGSTAB",
        iteration,
        residual,
    };
    for it in 1..=opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(breakdown(it, res));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.mul_vec_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(breakdown(it, res));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, SolveStats { iterations: it, residual: norm(&s) }));
        }
        for i in 0..n {
            zz[i] = s[i] * inv_diag[i];
        }
        a.mul_vec_into(&zz, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(breakdown(it, res));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r);
        if res <= tol {
            return Ok((x, SolveStats { iterations: it, residual: res }));
        }
        if omega == 0.0 {
            return Err(breakdown(it, res));
        }
    }
    Err(Error::SolverNotConverged {
        method: "BiCGSTAB",
        iterations: opts.max_iter,
        residual: res,
    })
}
