//! Cavity volumes as surface integrals over the endocardium.
//!
//! With h a unit vector lying in the (flat) base plane, div((h⊗h)(x − b)) = 1
//! and the open base contributes nothing because h·n vanishes there. The
//! endocardial normal points into the cavity, hence the leading minus sign.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryFace, BoundaryTag, Mesh};
use crate::mechanics::{face_samples, normal_derivative};

/// Direction h and interior points b_k used by the volume functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityFrame {
    pub h: Vector3<f64>,
    pub b: [Vector3<f64>; 2],
}

impl CavityFrame {
    pub fn new(h: Vector3<f64>, b: [Vector3<f64>; 2]) -> Result<Self> {
        let n = h.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::InvalidGeometry("volume direction h is degenerate".into()));
        }
        Ok(Self { h: h / n, b })
    }

    /// h is the lateral direction projected onto the base plane; b_k is the
    /// area-weighted centroid of the endocardium of ventricle k.
    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        let axis = mesh.axis.normalize();
        let h = mesh.lateral - axis * mesh.lateral.dot(&axis);
        let centroid = |tag| {
            let mut c = Vector3::zeros();
            let mut a = 0.0;
            for f in mesh.faces_with(tag) {
                for fp in face_samples(f, &mesh.nodes).iter() {
                    let da = fp.area_normal().norm();
                    let x: Vector3<f64> = (0..4).map(|m| mesh.nodes[f.nodes[m]] * fp.n[m]).sum();
                    c += x * da;
                    a += da;
                }
            }
            if a > 0.0 {
                c / a
            } else {
                Vector3::zeros()
            }
        };
        Self::new(h, [centroid(BoundaryTag::EndoLv), centroid(BoundaryTag::EndoRv)])
    }
}

fn current(mesh: &Mesh, d: &[f64], n: usize) -> Vector3<f64> {
    mesh.nodes[n] + Vector3::new(d[3 * n], d[3 * n + 1], d[3 * n + 2])
}

/// Volume (m³) enclosed by `faces` and the base plane for displacement `d`.
pub fn cavity_volume(mesh: &Mesh, faces: &[BoundaryFace], d: &[f64], h: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64> {
    Ok(cavity_volume_and_gradient(mesh, faces, d, h, b, false)?.0)
}

/// Volume and its derivative with respect to every displacement dof.
pub fn cavity_volume_and_gradient(
    mesh: &Mesh,
    faces: &[BoundaryFace],
    d: &[f64],
    h: &Vector3<f64>,
    b: &Vector3<f64>,
    gradient: bool,
) -> Result<(f64, Vec<f64>)> {
    if d.len() != 3 * mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: 3 * mesh.num_nodes(),
            got: d.len(),
        });
    }
    let mut v = 0.0;
    let mut g = if gradient { vec![0.0; d.len()] } else { Vec::new() };
    for f in faces {
        let x: [Vector3<f64>; 4] = std::array::from_fn(|m| current(mesh, d, f.nodes[m]));
        let pts = crate::fem::element::face_points(&x);
        for fp in &pts {
            let xq: Vector3<f64> = (0..4).map(|m| x[m] * fp.n[m]).sum();
            let an = fp.area_normal();
            let hx = h.dot(&(xq - b));
            let hn = h.dot(&an);
            v -= hx * hn;
            if gradient {
                for m in 0..4 {
                    let dn = normal_derivative(fp, m).transpose() * h;
                    let row = -(h * (fp.n[m] * hn) + dn * hx);
                    for i in 0..3 {
                        g[3 * f.nodes[m] + i] += row[i];
                    }
                }
            }
        }
    }
    Ok((v, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_cavity;

    fn box_volume(d: &[f64], mesh: &Mesh) -> f64 {
        let faces: Vec<_> = mesh.faces_with(BoundaryTag::EndoLv).cloned().collect();
        let frame = CavityFrame::from_mesh(mesh).unwrap();
        cavity_volume(mesh, &faces, d, &frame.h, &frame.b[0]).unwrap()
    }

    #[test]
    fn box_cavity_volume_is_exact() {
        let mesh = box_cavity([0.02, 0.02, 0.05], 0.005, 2).unwrap();
        let d = vec![0.0; 3 * mesh.num_nodes()];
        let v = box_volume(&d, &mesh);
        assert!((v - 20e-6).abs() < 1e-10 * 20e-6, "{v}");
        // Rigid shift along h.
        let shift: Vec<f64> = (0..d.len()).map(|i| if i % 3 == 0 { 3e-3 } else { 0.0 }).collect();
        assert!((box_volume(&shift, &mesh) - v).abs() < 1e-10 * v);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = box_cavity([0.02, 0.02, 0.05], 0.005, 1).unwrap();
        let faces: Vec<_> = mesh.faces_with(BoundaryTag::EndoLv).cloned().collect();
        let frame = CavityFrame::from_mesh(&mesh).unwrap();
        let d: Vec<f64> = (0..3 * mesh.num_nodes()).map(|i| 1e-3 * ((i as f64) * 0.7).sin()).collect();
        let (_, g) = cavity_volume_and_gradient(&mesh, &faces, &d, &frame.h, &frame.b[0], true).unwrap();
        let eps = 1e-7;
        for i in (0..d.len()).step_by(7) {
            let mut p = d.clone();
            let mut m = d.clone();
            p[i] += eps;
            m[i] -= eps;
            let fd = (cavity_volume(&mesh, &faces, &p, &frame.h, &frame.b[0]).unwrap()
                - cavity_volume(&mesh, &faces, &m, &frame.h, &frame.b[0]).unwrap())
                / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * g.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn degenerate_direction_rejected() {
        assert!(CavityFrame::new(Vector3::zeros(), [Vector3::zeros(); 2]).is_err());
    }
}
