//! Trilinear hexahedron: reference shape functions, Gauss rules and the
//! local face numbering shared by every other module.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::Mesh;

/// Reference corner signs in VTK hexahedron order.
pub const HEX_CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Local face node lists. Each face is numbered so that the parametric
/// cross product x_u × x_v points out of a positively oriented element.
pub const HEX_FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1], // zeta = -1
    [4, 5, 6, 7], // zeta = +1
    [0, 1, 5, 4], // eta = -1
    [2, 3, 7, 6], // eta = +1
    [0, 4, 7, 3], // xi = -1
    [1, 2, 6, 5], // xi = +1
];

/// Reference quad corner signs for face parametrizations.
pub const QUAD_CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

const G: f64 = 0.577_350_269_189_625_8;

/// 2×2×2 Gauss points (unit weights).
pub const HEX_GAUSS: [[f64; 3]; 8] = [
    [-G, -G, -G],
    [G, -G, -G],
    [G, G, -G],
    [-G, G, -G],
    [-G, -G, G],
    [G, -G, G],
    [G, G, G],
    [-G, G, G],
];

/// 2×2 Gauss points (unit weights).
pub const QUAD_GAUSS: [[f64; 2]; 4] = [[-G, -G], [G, -G], [G, G], [-G, G]];

pub fn hex_shape(r: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, c) in HEX_CORNERS.iter().enumerate() {
        n[a] = 0.125 * (1.0 + c[0] * r[0]) * (1.0 + c[1] * r[1]) * (1.0 + c[2] * r[2]);
    }
    n
}

pub fn hex_shape_grad(r: [f64; 3]) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (a, c) in HEX_CORNERS.iter().enumerate() {
        let (f0, f1, f2) = (1.0 + c[0] * r[0], 1.0 + c[1] * r[1], 1.0 + c[2] * r[2]);
        g[a] = [
            0.125 * c[0] * f1 * f2,
            0.125 * c[1] * f0 * f2,
            0.125 * c[2] * f0 * f1,
        ];
    }
    g
}

pub fn quad_shape(r: [f64; 2]) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (a, c) in QUAD_CORNERS.iter().enumerate() {
        n[a] = 0.25 * (1.0 + c[0] * r[0]) * (1.0 + c[1] * r[1]);
    }
    n
}

pub fn quad_shape_grad(r: [f64; 2]) -> [[f64; 2]; 4] {
    let mut g = [[0.0; 2]; 4];
    for (a, c) in QUAD_CORNERS.iter().enumerate() {
        g[a] = [
            0.25 * c[0] * (1.0 + c[1] * r[1]),
            0.25 * c[1] * (1.0 + c[0] * r[0]),
        ];
    }
    g
}

/// Jacobian dx/dr of the trilinear map (columns are derivatives w.r.t.
/// the reference coordinates).
pub fn hex_jacobian(x: &[Vector3<f64>; 8], dn: &[[f64; 3]; 8]) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for a in 0..8 {
        for c in 0..3 {
            for k in 0..3 {
                j[(c, k)] += x[a][c] * dn[a][k];
            }
        }
    }
    j
}

/// Shape data of one element at one quadrature point in physical space.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub n: [f64; 8],
    pub grad: [Vector3<f64>; 8],
    /// det J times the Gauss weight.
    pub dv: f64,
}

/// Precomputed volume quadrature data for every element of a mesh.
#[derive(Debug, Clone)]
pub struct ElementCache {
    pub qps: Vec<[QuadPoint; 8]>,
}

impl ElementCache {
    pub fn new(mesh: &Mesh) -> Self {
        Self::with_coords(mesh, &mesh.nodes)
    }

    /// Quadrature data for the mesh topology placed at arbitrary nodal
    /// coordinates. Negative determinants are kept so callers can check.
    pub fn with_coords(mesh: &Mesh, coords: &[Vector3<f64>]) -> Self {
        use rayon::prelude::*;
        let qps = mesh
            .elements
            .par_iter()
            .map(|el| {
                let x: [Vector3<f64>; 8] = std::array::from_fn(|a| coords[el[a]]);
                std::array::from_fn(|q| element_qp(&x, HEX_GAUSS[q]))
            })
            .collect();
        Self { qps }
    }

    pub fn min_det(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (e, qs) in self.qps.iter().enumerate() {
            for (q, p) in qs.iter().enumerate() {
                if best.is_none_or(|b| p.dv < b.2) {
                    best = Some((e, q, p.dv));
                }
            }
        }
        best
    }
}

pub fn element_qp(x: &[Vector3<f64>; 8], r: [f64; 3]) -> QuadPoint {
    let dn = hex_shape_grad(r);
    let j = hex_jacobian(x, &dn);
    let det = j.determinant();
    let jinv_t = j.try_inverse().unwrap_or_else(Matrix3::zeros).transpose();
    let grad = std::array::from_fn(|a| jinv_t * Vector3::new(dn[a][0], dn[a][1], dn[a][2]));
    QuadPoint {
        n: hex_shape(r),
        grad,
        dv: det,
    }
}

/// Surface quadrature sample on a boundary face.
#[derive(Debug, Clone, Copy)]
pub struct FacePoint {
    pub n: [f64; 4],
    /// Parametric tangents x_u and x_v.
    pub xu: Vector3<f64>,
    pub xv: Vector3<f64>,
    pub dn: [[f64; 2]; 4],
}

impl FacePoint {
    /// Area-weighted normal x_u × x_v (unit Gauss weight included).
    pub fn area_normal(&self) -> Vector3<f64> {
        self.xu.cross(&self.xv)
    }
}

pub fn face_points(x: &[Vector3<f64>; 4]) -> [FacePoint; 4] {
    std::array::from_fn(|q| {
        let r = QUAD_GAUSS[q];
        let dn = quad_shape_grad(r);
        let mut xu = Vector3::zeros();
        let mut xv = Vector3::zeros();
        for a in 0..4 {
            xu += x[a] * dn[a][0];
            xv += x[a] * dn[a][1];
        }
        FacePoint {
            n: quad_shape(r),
            xu,
            xv,
            dn,
        }
    })
}

/// Reference coordinates on the hex of a point given by face parameters.
pub fn face_to_hex(face: usize, uv: [f64; 2]) -> [f64; 3] {
    let nodes = HEX_FACES[face];
    let n = quad_shape(uv);
    let mut r = [0.0; 3];
    for a in 0..4 {
        for k in 0..3 {
            r[k] += n[a] * HEX_CORNERS[nodes[a]][k];
        }
    }
    r
}

/// Skew matrix with `skew(a) b = a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let r = [0.3, -0.7, 0.1];
        let n = hex_shape(r);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = hex_shape_grad(r);
        for k in 0..3 {
            assert!(g.iter().map(|v| v[k]).sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn shape_is_kronecker_at_corners() {
        for (a, c) in HEX_CORNERS.iter().enumerate() {
            let n = hex_shape(*c);
            for (b, v) in n.iter().enumerate() {
                assert_eq!(*v, if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn face_normals_point_outward_on_reference_cube() {
        let x: [Vector3<f64>; 8] = std::array::from_fn(|a| Vector3::from(HEX_CORNERS[a]));
        let expected = [
            [0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0],
            [0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0],
            [-1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
        ];
        for (f, nodes) in HEX_FACES.iter().enumerate() {
            let fx: [Vector3<f64>; 4] = std::array::from_fn(|a| x[nodes[a]]);
            let nrm: Vector3<f64> = face_points(&fx).iter().map(|p| p.area_normal()).sum();
            assert!((nrm - Vector3::from(expected[f]) * 4.0).norm() < 1e-14, "face {f}");
        }
    }

    #[test]
    fn face_to_hex_lands_on_face() {
        let r = face_to_hex(5, [0.2, -0.4]);
        assert!((r[0] - 1.0).abs() < 1e-15);
    }
}
