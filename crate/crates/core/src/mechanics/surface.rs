//! Surface quadrature helpers: follower pressure loads, the base traction
//! that balances them, and the Robin support matrices.

use nalgebra::{Matrix3, Vector3};

use crate::fem::element::{face_points, skew, FacePoint, HEX_FACES};
use crate::geometry::BoundaryFace;

/// Derivative of the area normal x_u × x_v with respect to the
/// displacement of face node `b`.
pub(crate) fn normal_derivative(fp: &FacePoint, b: usize) -> Matrix3<f64> {
    skew(&fp.xu) * fp.dn[b][1] - skew(&fp.xv) * fp.dn[b][0]
}

pub(crate) fn face_coords(face: &BoundaryFace, x: &[Vector3<f64>]) -> [Vector3<f64>; 4] {
    std::array::from_fn(|m| x[face.nodes[m]])
}

pub(crate) fn face_samples(face: &BoundaryFace, x: &[Vector3<f64>]) -> [FacePoint; 4] {
    face_points(&face_coords(face, x))
}

/// Element-local node index of each face node.
pub(crate) fn local_nodes(face: &BoundaryFace) -> [usize; 4] {
    HEX_FACES[face.local]
}

/// Offsets into the element's 24×24 matrix for a face block entry.
#[inline]
pub(crate) fn element_entry(la: usize, i: usize, lb: usize, j: usize) -> usize {
    (3 * la + i) * 24 + 3 * lb + j
}
