//! Q1 finite-element kernels: assembly, Laplace solves and linear solvers.

pub mod direct;
pub mod element;
pub mod solver;
pub mod sparse;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Mesh};
pub use direct::SparseLu;
pub use element::{ElementCache, QuadPoint};
pub use solver::{iterative_solve, LinearSystem, SolveStats, SolverKind, SolverOptions};
pub use sparse::{CsrMatrix, ScatterMap};

/// Nodal scalar values with their physical unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub unit: String,
}

impl ScalarField {
    pub fn new(values: Vec<f64>, unit: impl Into<String>) -> Self {
        Self {
            values,
            unit: unit.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Nodal vector values with their physical unit.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub values: Vec<Vector3<f64>>,
    pub unit: String,
}

impl VectorField {
    pub fn new(values: Vec<Vector3<f64>>, unit: impl Into<String>) -> Self {
        Self {
            values,
            unit: unit.into(),
        }
    }

    pub fn zeros(n: usize, unit: impl Into<String>) -> Self {
        Self::new(vec![Vector3::zeros(); n], unit)
    }

    /// Interleaved dof vector (x0, y0, z0, x1, ...).
    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn from_flat(flat: &[f64], unit: impl Into<String>) -> Self {
        Self::new(
            flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
            unit,
        )
    }
}

/// Sparsity pattern and scatter map of the nodal scalar space.
#[derive(Debug, Clone)]
pub struct ScalarSpace {
    pub pattern: CsrMatrix,
    pub map: ScatterMap,
}

impl ScalarSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let dofs = mesh.elements.iter().map(|e| e.to_vec()).collect();
        let (pattern, map) = sparse::pattern_from_elements(mesh.nodes.len(), dofs);
        Self { pattern, map }
    }

    /// Assembles Σ_q [m(e,q) N_a N_b + ∇N_a · D(e,q) ∇N_b] dV.
    pub fn assemble<M, D>(&self, cache: &ElementCache, mass: M, diffusion: D) -> CsrMatrix
    where
        M: Fn(usize, usize) -> f64 + Sync,
        D: Fn(usize, usize) -> Option<Matrix3<f64>> + Sync,
    {
        let locals: Vec<[f64; 64]> = cache
            .qps
            .par_iter()
            .enumerate()
            .map(|(e, qs)| {
                let mut k = [0.0; 64];
                for (q, qp) in qs.iter().enumerate() {
                    let m = mass(e, q);
                    let d = diffusion(e, q);
                    for a in 0..8 {
                        let dga = d.map(|d| d * qp.grad[a]);
                        for b in 0..8 {
                            let mut v = m * qp.n[a] * qp.n[b];
                            if let Some(dga) = &dga {
                                v += dga.dot(&qp.grad[b]);
                            }
                            k[a * 8 + b] += v * qp.dv;
                        }
                    }
                }
                k
            })
            .collect();
        let mut mat = self.pattern.clone();
        for (e, k) in locals.iter().enumerate() {
            self.map.scatter(&mut mat, e, k);
        }
        mat
    }

    pub fn mass(&self, cache: &ElementCache) -> CsrMatrix {
        self.assemble(cache, |_, _| 1.0, |_, _| None)
    }

    pub fn stiffness(&self, cache: &ElementCache) -> CsrMatrix {
        self.assemble(cache, |_, _| 0.0, |_, _| Some(Matrix3::identity()))
    }
}

/// Integrals of each basis function (row sums of the consistent mass).
pub fn lumped_volumes(mesh: &Mesh, cache: &ElementCache) -> Vec<f64> {
    let mut v = vec![0.0; mesh.nodes.len()];
    for (el, qs) in mesh.elements.iter().zip(&cache.qps) {
        for qp in qs {
            for a in 0..8 {
                v[el[a]] += qp.n[a] * qp.dv;
            }
        }
    }
    v
}

/// Harmonic field with node-wise Dirichlet data (homogeneous Neumann on the
/// remaining boundary).
pub fn solve_laplace_nodes(mesh: &Mesh, constraints: &[Option<f64>]) -> Result<Vec<f64>> {
    if constraints.len() != mesh.nodes.len() {
        return Err(Error::DimensionMismatch {
            expected: mesh.nodes.len(),
            got: constraints.len(),
        });
    }
    if constraints.iter().all(Option::is_none) {
        return Err(Error::NoConstraints);
    }
    let cache = ElementCache::new(mesh);
    let space = ScalarSpace::new(mesh);
    let k = space.stiffness(&cache);
    let mut sys = LinearSystem::new(k, vec![0.0; mesh.nodes.len()])?;
    sys.constraints = constraints.to_vec();
    let opts = SolverOptions {
        rel_tol: 1e-14,
        abs_tol: 0.0,
        max_iter: 20 * mesh.nodes.len() + 100,
    };
    let (x, _) = sys.solve(SolverKind::Spd, &opts)?;
    Ok(x)
}

/// Constraints from tag data. Earlier entries win on shared nodes.
pub fn tag_constraints(mesh: &Mesh, dirichlet: &[(BoundaryTag, f64)]) -> Vec<Option<f64>> {
    let mut c = vec![None; mesh.nodes.len()];
    for &(tag, value) in dirichlet {
        for n in mesh.tagged_nodes(tag) {
            if c[n].is_none() {
                c[n] = Some(value);
            }
        }
    }
    c
}

/// Laplace problem with Dirichlet data on tagged faces. Tags listed in
/// `neumann` (and every untagged remainder) carry zero flux.
pub fn solve_laplace(
    mesh: &Mesh,
    dirichlet: &[(BoundaryTag, f64)],
    neumann: &[BoundaryTag],
) -> Result<ScalarField> {
    for &(tag, _) in dirichlet {
        if neumann.contains(&tag) {
            return Err(Error::InvalidParameter(format!(
                "tag {tag:?} listed as both Dirichlet and Neumann"
            )));
        }
    }
    let c = tag_constraints(mesh, dirichlet);
    Ok(ScalarField::new(solve_laplace_nodes(mesh, &c)?, "1"))
}

/// Largest amount by which `values` leave the range of the Dirichlet data.
pub fn max_principle_excess(values: &[f64], constraints: &[Option<f64>]) -> f64 {
    let data = constraints.iter().flatten();
    let lo = data.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = data.copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| (lo - v).max(v - hi).max(0.0))
        .fold(0.0, f64::max)
}
