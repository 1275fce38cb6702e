//! Quasi-static and BDF1 dynamic hyperelastic mechanics with follower
//! pressure loads, an energy-consistent base condition and Robin support.

pub mod material;
mod surface;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::direct::SparseLu;
use crate::fem::element::{ElementCache, QuadPoint};
use crate::fem::sparse::{dot, norm, pattern_from_elements, CsrMatrix, ScatterMap};
use crate::geometry::{BoundaryFace, BoundaryTag, Mesh};

pub use material::{active_piola, passive_piola, strain_energy, stress_and_tangent, MaterialParams, RobinParams};
pub(crate) use surface::{face_samples, normal_derivative};

/// Distribution of the base traction between the two ventricles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaseBcVariant {
    Uniform,
    PerBase,
    #[default]
    Weighted,
}

/// Time discretization of the momentum balance.
#[derive(Debug, Clone, Copy)]
pub enum MechMode<'a> {
    Quasistatic,
    /// BDF1 with the two previous displacements and the step (s).
    Dynamic {
        d_prev: &'a [f64],
        d_prev2: &'a [f64],
        dt: f64,
    },
}

/// Nodal active tension (Pa) and cavity pressures (Pa, LV then RV).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadState {
    pub ta: Vec<f64>,
    pub p: [f64; 2],
}

impl LoadState {
    pub fn zero(n_nodes: usize) -> Self {
        Self {
            ta: vec![0.0; n_nodes],
            p: [0.0; 2],
        }
    }

    pub fn pressures(n_nodes: usize, p_lv: f64, p_rv: f64) -> Self {
        Self {
            ta: vec![0.0; n_nodes],
            p: [p_lv, p_rv],
        }
    }

    fn lerp(&self, other: &Self, s: f64) -> Self {
        Self {
            ta: self.ta.iter().zip(&other.ta).map(|(a, b)| a + s * (b - a)).collect(),
            p: [
                self.p[0] + s * (other.p[0] - self.p[0]),
                self.p[1] + s * (other.p[1] - self.p[1]),
            ],
        }
    }
}

/// Sparse matrix plus a low-rank correction Σ u_r v_rᵀ.
#[derive(Debug, Clone)]
pub struct MechJacobian {
    pub sparse: CsrMatrix,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl MechJacobian {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.sparse.mul_vec(x);
        for (u, v) in self.u.iter().zip(&self.v) {
            let s = dot(v, x);
            if s != 0.0 {
                y.iter_mut().zip(u).for_each(|(yi, ui)| *yi += s * ui);
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = self.sparse.to_dense();
        for (u, v) in self.u.iter().zip(&self.v) {
            for i in 0..u.len() {
                if u[i] != 0.0 {
                    for j in 0..v.len() {
                        m[(i, j)] += u[i] * v[j];
                    }
                }
            }
        }
        m
    }
}

/// Factorization of a [`MechJacobian`] via sparse LU and the Woodbury
/// identity. Keeps the symbolic analysis between refactorizations.
#[derive(Debug, Default)]
pub struct JacobianSolver {
    lu: Option<SparseLu>,
    v: Vec<Vec<f64>>,
    ku: Vec<Vec<f64>>,
    capacitance: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl JacobianSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, jac: &MechJacobian) -> Result<()> {
        match &mut self.lu {
            Some(lu) => lu.factor(&jac.sparse)?,
            None => self.lu = Some(SparseLu::new(&jac.sparse)?),
        }
        let lu = self.lu.as_ref().expect("factored above");
        self.v = jac.v.clone();
        if jac.u.is_empty() {
            self.ku.clear();
            self.capacitance = None;
            return Ok(());
        }
        self.ku = lu.solve_many(&jac.u)?;
        let r = jac.u.len();
        let cap = DMatrix::from_fn(r, r, |i, j| if i == j { 1.0 } else { 0.0 } + dot(&jac.v[i], &self.ku[j]));
        self.capacitance = Some(cap.lu());
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_many(&[b.to_vec()])?.pop().expect("one column"))
    }

    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let lu = self
            .lu
            .as_ref()
            .ok_or_else(|| Error::Factorization("solve before factorization".into()))?;
        let mut ys = lu.solve_many(rhs)?;
        if let Some(cap) = &self.capacitance {
            for y in &mut ys {
                let t = nalgebra::DVector::from_iterator(self.v.len(), self.v.iter().map(|v| dot(v, y)));
                let z = cap
                    .solve(&t)
                    .ok_or_else(|| Error::Factorization("singular low-rank capacitance matrix".into()))?;
                for (ku, zr) in self.ku.iter().zip(z.iter()) {
                    y.iter_mut().zip(ku).for_each(|(yi, k)| *yi -= zr * k);
                }
            }
        }
        Ok(ys)
    }
}

/// Newton settings for the quasi-static solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    pub rel_increment: f64,
    /// Absolute residual tolerance (N).
    pub abs_residual: f64,
    pub max_iter: usize,
    pub ramp_steps: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            rel_increment: 1e-8,
            abs_residual: 1e-6,
            max_iter: 25,
            ramp_steps: 10,
            max_halvings: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Per-ventricle base weights at the four quadrature points of each base
/// face.
#[derive(Debug, Clone)]
struct BaseWeights {
    per_face: Vec<[[f64; 4]; 2]>,
}

/// Mechanics problem on a fixed reference mesh.
#[derive(Debug, Clone)]
pub struct MechanicsProblem {
    mesh: Mesh,
    material: MaterialParams,
    frames: Vec<[Matrix3<f64>; 8]>,
    cache: ElementCache,
    pattern: CsrMatrix,
    map: ScatterMap,
    mass: CsrMatrix,
    robin_k: CsrMatrix,
    robin_c: CsrMatrix,
    endo: [Vec<BoundaryFace>; 2],
    base: Vec<BoundaryFace>,
    weights: BaseWeights,
    variant: BaseBcVariant,
    xi_hat: Vec<f64>,
}

/// Interventricular weight used by each base variant at one point.
fn base_weight(variant: BaseBcVariant, xi_point: f64, xi_face: f64) -> [f64; 2] {
    match variant {
        BaseBcVariant::Uniform => [0.5, 0.5],
        BaseBcVariant::PerBase => {
            if xi_face >= 0.5 {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        }
        BaseBcVariant::Weighted => {
            let w = xi_point.clamp(0.0, 1.0);
            [w, 1.0 - w]
        }
    }
}

impl MechanicsProblem {
    /// `frames` holds the fiber frame [f0 s0 n0] at every quadrature point
    /// and `xi_hat` the nodal LV indicator (1 in the LV, 0 in the RV).
    pub fn new(
        mesh: Mesh,
        frames: Vec<[Matrix3<f64>; 8]>,
        xi_hat: &[f64],
        material: MaterialParams,
        variant: BaseBcVariant,
    ) -> Result<Self> {
        material.validate()?;
        if frames.len() != mesh.num_elements() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_elements(),
                got: frames.len(),
            });
        }
        if xi_hat.len() != mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_nodes(),
                got: xi_hat.len(),
            });
        }
        if !mesh.has_tag(BoundaryTag::EndoLv) {
            return Err(Error::MissingTag("ENDO_LV"));
        }
        let cache = ElementCache::new(&mesh);
        if let Some((e, q, det)) = cache.min_det() {
            if det <= 0.0 {
                return Err(Error::InvertedElement { element: e, qp: q, det });
            }
        }
        let dofs: Vec<Vec<usize>> = mesh
            .elements
            .iter()
            .map(|el| el.iter().flat_map(|&n| (0..3).map(move |i| 3 * n + i)).collect())
            .collect();
        let (pattern, map) = pattern_from_elements(3 * mesh.num_nodes(), dofs);

        let mut mass = pattern.clone();
        for (e, qps) in cache.qps.iter().enumerate() {
            let mut local = vec![0.0; 576];
            for qp in qps {
                for a in 0..8 {
                    for b in 0..8 {
                        let m = material.rho * qp.n[a] * qp.n[b] * qp.dv;
                        for i in 0..3 {
                            local[surface::element_entry(a, i, b, i)] += m;
                        }
                    }
                }
            }
            map.scatter(&mut mass, e, &local);
        }

        let mut robin_k = pattern.clone();
        let mut robin_c = pattern.clone();
        let r = material.robin;
        for face in mesh.faces_with(BoundaryTag::Epi) {
            let pts = face_samples(face, &mesh.nodes);
            let ln = surface::local_nodes(face);
            let mut lk = vec![0.0; 576];
            let mut lc = vec![0.0; 576];
            for fp in &pts {
                let an = fp.area_normal();
                let da = an.norm();
                let nn = an / da;
                let proj = nn * nn.transpose();
                let kt = proj * r.k_normal + (Matrix3::identity() - proj) * r.k_tangential;
                let ct = proj * r.c_normal + (Matrix3::identity() - proj) * r.c_tangential;
                for a in 0..4 {
                    for b in 0..4 {
                        let w = fp.n[a] * fp.n[b] * da;
                        for i in 0..3 {
                            for j in 0..3 {
                                let pos = surface::element_entry(ln[a], i, ln[b], j);
                                lk[pos] += w * kt[(i, j)];
                                lc[pos] += w * ct[(i, j)];
                            }
                        }
                    }
                }
            }
            map.scatter(&mut robin_k, face.element, &lk);
            map.scatter(&mut robin_c, face.element, &lc);
        }

        let endo = [
            mesh.faces_with(BoundaryTag::EndoLv).cloned().collect::<Vec<_>>(),
            mesh.faces_with(BoundaryTag::EndoRv).cloned().collect::<Vec<_>>(),
        ];
        let base: Vec<BoundaryFace> = mesh.faces_with(BoundaryTag::Base).cloned().collect();
        let per_face = base
            .iter()
            .map(|f| {
                let xi: [f64; 4] = std::array::from_fn(|m| xi_hat[f.nodes[m]]);
                let centroid = xi.iter().sum::<f64>() / 4.0;
                let pts = face_samples(f, &mesh.nodes);
                let mut w = [[0.0; 4]; 2];
                for (q, fp) in pts.iter().enumerate() {
                    let xq: f64 = (0..4).map(|m| fp.n[m] * xi[m]).sum();
                    let bw = base_weight(variant, xq, centroid);
                    w[0][q] = bw[0];
                    w[1][q] = bw[1];
                }
                w
            })
            .collect();
        let problem = Self {
            mesh,
            material,
            frames,
            cache,
            pattern,
            map,
            mass,
            robin_k,
            robin_c,
            endo,
            base,
            weights: BaseWeights { per_face },
            variant,
            xi_hat: xi_hat.to_vec(),
        };
        for k in problem.ventricles() {
            let d = problem.base_denominator(k, &problem.mesh.nodes);
            if !(d > 0.0) {
                return Err(Error::ZeroBaseWeight(if k == 0 { "LV" } else { "RV" }));
            }
        }
        Ok(problem)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// The same problem on moved reference coordinates, keeping fibers,
    /// material and base weights per node.
    pub fn with_nodes(&self, nodes: Vec<Vector3<f64>>) -> Result<Self> {
        let mesh = self.mesh.with_nodes(nodes)?;
        Self::new(mesh, self.frames.clone(), &self.xi_hat, self.material, self.variant)
    }

    pub fn xi_hat(&self) -> &[f64] {
        &self.xi_hat
    }

    pub fn material(&self) -> &MaterialParams {
        &self.material
    }

    pub fn frames(&self) -> &[[Matrix3<f64>; 8]] {
        &self.frames
    }

    pub fn variant(&self) -> BaseBcVariant {
        self.variant
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.mesh.num_nodes()
    }

    pub fn endo_faces(&self, k: usize) -> &[BoundaryFace] {
        &self.endo[k]
    }

    /// Indices of the ventricles that carry a pressure (0 = LV, 1 = RV).
    pub fn ventricles(&self) -> Vec<usize> {
        (0..2).filter(|&k| !self.endo[k].is_empty()).collect()
    }

    pub fn current_coords(&self, d: &[f64]) -> Vec<Vector3<f64>> {
        self.mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(i, x)| x + Vector3::new(d[3 * i], d[3 * i + 1], d[3 * i + 2]))
            .collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.num_dofs(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn deformation_gradient(qp: &QuadPoint, el: &[usize; 8], d: &[f64]) -> Matrix3<f64> {
        let mut f = Matrix3::identity();
        for a in 0..8 {
            let n = el[a];
            let da = Vector3::new(d[3 * n], d[3 * n + 1], d[3 * n + 2]);
            f += da * qp.grad[a].transpose();
        }
        f
    }

    /// Deformation gradient and total first Piola stress at every
    /// quadrature point.
    pub fn stresses(&self, d: &[f64], ta: &[f64]) -> Result<Vec<[(Matrix3<f64>, Matrix3<f64>); 8]>> {
        self.check_len(d)?;
        (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let el = &self.mesh.elements[e];
                let mut out = [(Matrix3::zeros(), Matrix3::zeros()); 8];
                for (q, qp) in self.cache.qps[e].iter().enumerate() {
                    let f = Self::deformation_gradient(qp, el, d);
                    let t: f64 = (0..8).map(|a| qp.n[a] * ta[el[a]]).sum();
                    let r = &self.frames[e][q];
                    let p = passive_piola(&f, r, &self.material)
                        .map_err(|_| Error::InvertedElement { element: e, qp: q, det: f.determinant() })?
                        + active_piola(&f, r, t, self.material.proportions());
                    out[q] = (f, p);
                }
                Ok(out)
            })
            .collect()
    }

    /// Minimum and maximum of det F over all quadrature points.
    pub fn jacobian_range(&self, d: &[f64]) -> Result<(f64, f64)> {
        self.check_len(d)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (e, qps) in self.cache.qps.iter().enumerate() {
            for qp in qps {
                let j = Self::deformation_gradient(qp, &self.mesh.elements[e], d).determinant();
                lo = lo.min(j);
                hi = hi.max(j);
            }
        }
        Ok((lo, hi))
    }

    /// Elastic energy ∫ W dV of the passive material (J).
    pub fn strain_energy(&self, d: &[f64]) -> Result<f64> {
        self.check_len(d)?;
        let mut w = 0.0;
        for (e, qps) in self.cache.qps.iter().enumerate() {
            for (q, qp) in qps.iter().enumerate() {
                let f = Self::deformation_gradient(qp, &self.mesh.elements[e], d);
                w += strain_energy(&f, &self.frames[e][q], &self.material)? * qp.dv;
            }
        }
        Ok(w)
    }

    /// Element internal forces and optionally tangent blocks.
    fn element_terms(&self, e: usize, d: &[f64], ta: &[f64], tangent: bool) -> Result<([f64; 24], Vec<f64>)> {
        let el = &self.mesh.elements[e];
        let mut fe = [0.0; 24];
        let mut ke = if tangent { vec![0.0; 576] } else { Vec::new() };
        for (q, qp) in self.cache.qps[e].iter().enumerate() {
            let f = Self::deformation_gradient(qp, el, d);
            let t: f64 = (0..8).map(|a| qp.n[a] * ta[el[a]]).sum();
            let r = &self.frames[e][q];
            let det = f.determinant();
            if !(det > 0.0) {
                return Err(Error::InvertedElement { element: e, qp: q, det });
            }
            let (p, c) = if tangent {
                stress_and_tangent(&f, r, t, &self.material)
                    .map_err(|_| Error::InvertedElement { element: e, qp: q, det })?
            } else {
                let p = passive_piola(&f, r, &self.material)
                    .map_err(|_| Error::InvertedElement { element: e, qp: q, det })?
                    + active_piola(&f, r, t, self.material.proportions());
                (p, Default::default())
            };
            for a in 0..8 {
                let g = p * qp.grad[a] * qp.dv;
                for i in 0..3 {
                    fe[3 * a + i] += g[i];
                }
            }
            if tangent {
                // ∂P_iJ/∂F_kL G_aJ G_bL, contracted first over J for each a.
                for a in 0..8 {
                    let ga = qp.grad[a] * qp.dv;
                    let mut ca = [[0.0; 9]; 3];
                    for i in 0..3 {
                        for kl in 0..9 {
                            ca[i][kl] = (0..3).map(|jj| c[(3 * i + jj, kl)] * ga[jj]).sum();
                        }
                    }
                    for b in 0..8 {
                        let gb = qp.grad[b];
                        for i in 0..3 {
                            for k in 0..3 {
                                let v = ca[i][3 * k] * gb[0] + ca[i][3 * k + 1] * gb[1] + ca[i][3 * k + 2] * gb[2];
                                ke[surface::element_entry(a, i, b, k)] += v;
                            }
                        }
                    }
                }
            }
        }
        Ok((fe, ke))
    }

    /// ∫ w_k |n| over the base.
    fn base_denominator(&self, k: usize, x: &[Vector3<f64>]) -> f64 {
        let mut dsum = 0.0;
        for (fi, face) in self.base.iter().enumerate() {
            for (q, fp) in face_samples(face, x).iter().enumerate() {
                dsum += self.weights.per_face[fi][k][q] * fp.area_normal().norm();
            }
        }
        dsum
    }

    /// Pressure-load vectors P_k = ∂r/∂p_k at displacement d: the endocardial
    /// follower load minus its base counterpart.
    pub fn pressure_vectors(&self, d: &[f64]) -> Result<[Vec<f64>; 2]> {
        self.check_len(d)?;
        let x = self.current_coords(d);
        let mut out = [vec![0.0; self.num_dofs()], vec![0.0; self.num_dofs()]];
        for k in self.ventricles() {
            let parts = self.pressure_parts(k, &x);
            out[k] = parts.vector();
        }
        Ok(out)
    }

    fn pressure_parts(&self, k: usize, x: &[Vector3<f64>]) -> PressureParts {
        let n = 3 * x.len();
        let mut endo = vec![0.0; n];
        let mut area = Vector3::zeros();
        for face in &self.endo[k] {
            for fp in face_samples(face, x).iter() {
                let an = fp.area_normal();
                area += an;
                for m in 0..4 {
                    for i in 0..3 {
                        endo[3 * face.nodes[m] + i] += fp.n[m] * an[i];
                    }
                }
            }
        }
        let mut s = vec![0.0; x.len()];
        let mut dsum = 0.0;
        for (fi, face) in self.base.iter().enumerate() {
            for (q, fp) in face_samples(face, x).iter().enumerate() {
                let w = self.weights.per_face[fi][k][q] * fp.area_normal().norm();
                dsum += w;
                for m in 0..4 {
                    s[face.nodes[m]] += w * fp.n[m];
                }
            }
        }
        PressureParts { endo, area, s, dsum }
    }

    /// Base traction per unit current area at each base quadrature point,
    /// for pressures `p` (Pa). Returns (point, |n| weight, traction).
    pub fn base_traction(&self, d: &[f64], p: [f64; 2]) -> Result<Vec<(Vector3<f64>, f64, Vector3<f64>)>> {
        self.check_len(d)?;
        let x = self.current_coords(d);
        let mut factors = [Vector3::zeros(); 2];
        for k in self.ventricles() {
            let parts = self.pressure_parts(k, &x);
            factors[k] = parts.area * (p[k] / parts.dsum);
        }
        let mut out = Vec::new();
        for (fi, face) in self.base.iter().enumerate() {
            let xs = surface::face_coords(face, &x);
            for (q, fp) in face_samples(face, &x).iter().enumerate() {
                let pt: Vector3<f64> = (0..4).map(|m| xs[m] * fp.n[m]).sum();
                let da = fp.area_normal().norm();
                let w = &self.weights.per_face[fi];
                out.push((pt, da, factors[0] * w[0][q] + factors[1] * w[1][q]));
            }
        }
        Ok(out)
    }

    /// ∫ n da over the endocardium of ventricle k in the current
    /// configuration.
    pub fn endo_area_vector(&self, k: usize, d: &[f64]) -> Result<Vector3<f64>> {
        self.check_len(d)?;
        let x = self.current_coords(d);
        Ok(self.pressure_parts(k, &x).area)
    }

    pub fn residual(&self, d: &[f64], loads: &LoadState, mode: MechMode<'_>) -> Result<Vec<f64>> {
        Ok(self.assemble(d, loads, mode, false)?.0)
    }

    pub fn residual_and_jacobian(
        &self,
        d: &[f64],
        loads: &LoadState,
        mode: MechMode<'_>,
    ) -> Result<(Vec<f64>, MechJacobian)> {
        let (r, j) = self.assemble(d, loads, mode, true)?;
        Ok((r, j.expect("tangent requested")))
    }

    fn assemble(
        &self,
        d: &[f64],
        loads: &LoadState,
        mode: MechMode<'_>,
        tangent: bool,
    ) -> Result<(Vec<f64>, Option<MechJacobian>)> {
        self.check_len(d)?;
        if loads.ta.len() != self.mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.mesh.num_nodes(),
                got: loads.ta.len(),
            });
        }
        let n = self.num_dofs();
        let locals: Vec<([f64; 24], Vec<f64>)> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| self.element_terms(e, d, &loads.ta, tangent))
            .collect::<Result<_>>()?;
        let mut r = vec![0.0; n];
        let mut k = if tangent { Some(self.pattern.clone()) } else { None };
        for (e, (fe, ke)) in locals.iter().enumerate() {
            for (a, &node) in self.mesh.elements[e].iter().enumerate() {
                for i in 0..3 {
                    r[3 * node + i] += fe[3 * a + i];
                }
            }
            if let Some(k) = k.as_mut() {
                self.map.scatter(k, e, ke);
            }
        }

        let gk = self.robin_k.mul_vec(d);
        r.iter_mut().zip(&gk).for_each(|(ri, g)| *ri += g);
        if let Some(k) = k.as_mut() {
            k.axpy(1.0, &self.robin_k);
        }
        if let MechMode::Dynamic { d_prev, d_prev2, dt } = mode {
            self.check_len(d_prev)?;
            self.check_len(d_prev2)?;
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter("time step must be positive".into()));
            }
            let acc: Vec<f64> = (0..n).map(|i| (d[i] - 2.0 * d_prev[i] + d_prev2[i]) / (dt * dt)).collect();
            let vel: Vec<f64> = (0..n).map(|i| (d[i] - d_prev[i]) / dt).collect();
            let ma = self.mass.mul_vec(&acc);
            let cv = self.robin_c.mul_vec(&vel);
            for i in 0..n {
                r[i] += ma[i] + cv[i];
            }
            if let Some(k) = k.as_mut() {
                k.axpy(1.0 / (dt * dt), &self.mass);
                k.axpy(1.0 / dt, &self.robin_c);
            }
        }

        let mut u = Vec::new();
        let mut v = Vec::new();
        let x = self.current_coords(d);
        for kv in self.ventricles() {
            let p = loads.p[kv];
            if p == 0.0 {
                continue;
            }
            let parts = self.pressure_parts(kv, &x);
            let pv = parts.vector();
            r.iter_mut().zip(&pv).for_each(|(ri, pi)| *ri += p * pi);
            if let Some(kmat) = k.as_mut() {
                self.pressure_tangent(kv, p, &x, &parts, kmat, &mut u, &mut v);
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "mechanics residual".into(),
                time: f64::NAN,
            });
        }
        Ok((r, k.map(|sparse| MechJacobian { sparse, u, v })))
    }

    /// Adds p ∂P_k/∂d: local face blocks into `kmat` and the global
    /// couplings as four rank-one terms.
    #[allow(clippy::too_many_arguments)]
    fn pressure_tangent(
        &self,
        k: usize,
        p: f64,
        x: &[Vector3<f64>],
        parts: &PressureParts,
        kmat: &mut CsrMatrix,
        u: &mut Vec<Vec<f64>>,
        v: &mut Vec<Vec<f64>>,
    ) {
        let n = 3 * x.len();
        let dsum = parts.dsum;
        let area = parts.area;
        // Endocardial follower load and the derivative rows of A.
        let mut ga = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for face in &self.endo[k] {
            let ln = surface::local_nodes(face);
            let mut local = vec![0.0; 576];
            for fp in face_samples(face, x).iter() {
                for b in 0..4 {
                    let dn = normal_derivative(fp, b);
                    for i in 0..3 {
                        for j in 0..3 {
                            ga[i][3 * face.nodes[b] + j] += dn[(i, j)];
                        }
                    }
                    for a in 0..4 {
                        let w = p * fp.n[a];
                        for i in 0..3 {
                            for j in 0..3 {
                                local[surface::element_entry(ln[a], i, ln[b], j)] += w * dn[(i, j)];
                            }
                        }
                    }
                }
            }
            self.map.scatter(kmat, face.element, &local);
        }
        // Base: -p [ (∂s_a/D) A - s_a A ∂D/D² + c_a ∂A ].
        let mut gd = vec![0.0; n];
        for (fi, face) in self.base.iter().enumerate() {
            let ln = surface::local_nodes(face);
            let mut local = vec![0.0; 576];
            for (q, fp) in face_samples(face, x).iter().enumerate() {
                let w = self.weights.per_face[fi][k][q];
                if w == 0.0 {
                    continue;
                }
                let an = fp.area_normal();
                let nhat = an / an.norm();
                for b in 0..4 {
                    let dn = normal_derivative(fp, b);
                    let dlen = dn.transpose() * nhat * w;
                    for j in 0..3 {
                        gd[3 * face.nodes[b] + j] += dlen[j];
                    }
                    for a in 0..4 {
                        for i in 0..3 {
                            let coef = -p * fp.n[a] * area[i] / dsum;
                            for j in 0..3 {
                                local[surface::element_entry(ln[a], i, ln[b], j)] += coef * dlen[j];
                            }
                        }
                    }
                }
            }
            self.map.scatter(kmat, face.element, &local);
        }
        for i in 0..3 {
            let mut ui = vec![0.0; n];
            for (a, sa) in parts.s.iter().enumerate() {
                ui[3 * a + i] = -p * sa / dsum;
            }
            u.push(ui);
            v.push(std::mem::take(&mut ga[i]));
        }
        let mut us = vec![0.0; n];
        for (a, sa) in parts.s.iter().enumerate() {
            for i in 0..3 {
                us[3 * a + i] = p * sa * area[i] / (dsum * dsum);
            }
        }
        u.push(us);
        v.push(gd);
    }

    /// Quasi-static equilibrium under `target` loads, ramped from zero
    /// loads and zero displacement.
    pub fn solve_quasistatic(&self, target: &LoadState, opts: &NewtonOptions) -> Result<(Vec<f64>, NewtonReport)> {
        let start = LoadState::zero(self.mesh.num_nodes());
        self.solve_quasistatic_from(&start, target, &vec![0.0; self.num_dofs()], opts)
    }

    /// Continuation from an equilibrium `d_start` under `start` loads to
    /// `target` loads in `opts.ramp_steps` uniform increments.
    pub fn solve_quasistatic_from(
        &self,
        start: &LoadState,
        target: &LoadState,
        d_start: &[f64],
        opts: &NewtonOptions,
    ) -> Result<(Vec<f64>, NewtonReport)> {
        self.check_len(d_start)?;
        let steps = opts.ramp_steps.max(1);
        let mut d = d_start.to_vec();
        let mut lambda = 0.0;
        let mut step = 1.0 / steps as f64;
        let mut halvings = 0;
        let mut total = NewtonReport::default();
        let mut solver = JacobianSolver::new();
        while lambda < 1.0 - 1e-12 {
            let next = (lambda + step).min(1.0);
            let loads = start.lerp(target, next);
            match self.newton(&mut d.clone(), &loads, MechMode::Quasistatic, opts, &mut solver) {
                Ok((dn, rep)) => {
                    d = dn;
                    total.iterations += rep.iterations;
                    total.residual = rep.residual;
                    lambda = next;
                }
                Err(e) => {
                    if halvings >= opts.max_halvings {
                        let (iterations, residual) = match e {
                            Error::NewtonDiverged { iterations, residual, .. } => (iterations, residual),
                            _ => (total.iterations, f64::NAN),
                        };
                        return Err(Error::NewtonDiverged {
                            iterations,
                            residual,
                            ramp: lambda,
                        });
                    }
                    halvings += 1;
                    step *= 0.5;
                }
            }
        }
        Ok((d, total))
    }

    /// Newton iteration at fixed loads starting from `d`.
    pub fn newton(
        &self,
        d: &mut Vec<f64>,
        loads: &LoadState,
        mode: MechMode<'_>,
        opts: &NewtonOptions,
        solver: &mut JacobianSolver,
    ) -> Result<(Vec<f64>, NewtonReport)> {
        let mut res_norm = f64::INFINITY;
        for it in 0..=opts.max_iter {
            let (r, jac) = self.residual_and_jacobian(d, loads, mode)?;
            res_norm = norm(&r);
            if res_norm < opts.abs_residual {
                return Ok((
                    d.clone(),
                    NewtonReport {
                        iterations: it,
                        residual: res_norm,
                    },
                ));
            }
            if it == opts.max_iter {
                break;
            }
            solver.factor(&jac)?;
            let mut delta = solver.solve(&r)?;
            delta.iter_mut().for_each(|v| *v = -*v);
            // Backtrack only when the full step leaves the admissible set.
            let mut alpha = 1.0;
            let mut trial;
            loop {
                trial = d.iter().zip(&delta).map(|(a, b)| a + alpha * b).collect::<Vec<_>>();
                match self.residual(&trial, loads, mode) {
                    Ok(_) => break,
                    Err(Error::InvertedElement { .. }) | Err(Error::NonFinite { .. }) if alpha > 1e-3 => alpha *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            *d = trial;
            let inc = alpha * norm(&delta);
            if inc <= opts.rel_increment * norm(d).max(1e-300) {
                let r = self.residual(d, loads, mode)?;
                return Ok((
                    d.clone(),
                    NewtonReport {
                        iterations: it + 1,
                        residual: norm(&r),
                    },
                ));
            }
        }
        Err(Error::NewtonDiverged {
            iterations: opts.max_iter,
            residual: res_norm,
            ramp: f64::NAN,
        })
    }
}

/// Pieces of the pressure-load vector of one ventricle.
#[derive(Debug, Clone)]
struct PressureParts {
    /// Σ φ_a n over the endocardium, per dof.
    endo: Vec<f64>,
    /// A = ∫ n over the endocardium.
    area: Vector3<f64>,
    /// s_a = ∫ w φ_a |n| over the base, per node.
    s: Vec<f64>,
    /// D = ∫ w |n| over the base.
    dsum: f64,
}

impl PressureParts {
    fn vector(&self) -> Vec<f64> {
        let mut v = self.endo.clone();
        for (a, sa) in self.s.iter().enumerate() {
            for i in 0..3 {
                v[3 * a + i] -= sa / self.dsum * self.area[i];
            }
        }
        v
    }
}

#[cfg(test)]
mod tests;
