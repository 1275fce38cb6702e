use std::collections::HashMap;
use std::ops::{Add, Mul};

use nalgebra::{Matrix3, Vector3};

use super::{BoundaryFace, Mesh, ParentLink};
use crate::error::{Error, Result};
use crate::fem::element::{hex_shape, ElementCache, HEX_CORNERS, HEX_FACES};
use crate::fem::{iterative_solve, CsrMatrix, ScalarSpace, SolverKind, SolverOptions};

/// Splits every hexahedron into eight. Parent nodes keep their indices, so
/// the first `parent.nodes.len()` child nodes are exactly the parent nodes.
pub fn uniform_refine(mesh: &Mesh) -> Mesh {
    let mut nodes = mesh.nodes.clone();
    let mut embedding: Vec<(usize, [f64; 3])> = vec![(usize::MAX, [0.0; 3]); nodes.len()];
    for (e, el) in mesh.elements.iter().enumerate() {
        for (a, &n) in el.iter().enumerate() {
            if embedding[n].0 == usize::MAX {
                embedding[n] = (e, HEX_CORNERS[a]);
            }
        }
    }
    let mut shared: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut elements = Vec::with_capacity(8 * mesh.elements.len());
    let mut element_parent = Vec::with_capacity(8 * mesh.elements.len());

    for (e, el) in mesh.elements.iter().enumerate() {
        // 3×3×3 lattice of child nodes, indexed by reference position.
        let mut lattice = [[[0usize; 3]; 3]; 3];
        for (i, plane) in lattice.iter_mut().enumerate() {
            for (j, row) in plane.iter_mut().enumerate() {
                for (k, slot) in row.iter_mut().enumerate() {
                    let r = [i as f64 - 1.0, j as f64 - 1.0, k as f64 - 1.0];
                    // Parent corners whose reference coordinates agree with r
                    // wherever r is ±1: the child node is their centroid.
                    let support: Vec<usize> = (0..8)
                        .filter(|&a| (0..3).all(|d| r[d] == 0.0 || r[d] == HEX_CORNERS[a][d]))
                        .collect();
                    let mut key: Vec<usize> = support.iter().map(|&a| el[a]).collect();
                    key.sort_unstable();
                    *slot = if key.len() == 1 {
                        key[0]
                    } else {
                        *shared.entry(key).or_insert_with(|| {
                            let c = support.iter().map(|&a| mesh.nodes[el[a]]).sum::<Vector3<f64>>()
                                / support.len() as f64;
                            nodes.push(c);
                            embedding.push((e, r));
                            nodes.len() - 1
                        })
                    };
                }
            }
        }
        for cz in 0..2 {
            for cy in 0..2 {
                for cx in 0..2 {
                    elements.push(std::array::from_fn(|a| {
                        let b = HEX_CORNERS[a].map(|c| usize::from(c > 0.0));
                        lattice[cx + b[0]][cy + b[1]][cz + b[2]]
                    }));
                    element_parent.push(e);
                }
            }
        }
    }

    let mut faces = Vec::with_capacity(4 * mesh.faces.len());
    for f in &mesh.faces {
        // Which reference axis / side the parent face lies on.
        let (axis, side) = match f.local {
            0 => (2, 0),
            1 => (2, 1),
            2 => (1, 0),
            3 => (1, 1),
            4 => (0, 0),
            _ => (0, 1),
        };
        for cz in 0..2 {
            for cy in 0..2 {
                for cx in 0..2 {
                    if [cx, cy, cz][axis] != side {
                        continue;
                    }
                    let child = 8 * f.element + cx + 2 * cy + 4 * cz;
                    faces.push(BoundaryFace {
                        element: child,
                        local: f.local,
                        nodes: HEX_FACES[f.local].map(|a| elements[child][a]),
                        tag: f.tag,
                    });
                }
            }
        }
    }

    Mesh {
        nodes,
        elements,
        faces,
        axis: mesh.axis,
        base_height: mesh.base_height,
        lateral: mesh.lateral,
        parent: Some(ParentLink {
            parent_nodes: mesh.nodes.len(),
            parent_elements: mesh.elements.clone(),
            element_parent,
            node_embedding: embedding,
        }),
    }
}

fn link<'a>(coarse: &Mesh, fine: &'a Mesh) -> Result<&'a ParentLink> {
    let link = fine
        .parent
        .as_ref()
        .ok_or_else(|| Error::MeshMismatch("fine mesh has no parent link".into()))?;
    if link.parent_nodes != coarse.nodes.len() || link.parent_elements != coarse.elements {
        return Err(Error::MeshMismatch("fine mesh was not refined from this coarse mesh".into()));
    }
    Ok(link)
}

/// Q1 interpolation of coarse nodal values onto the fine nodes.
pub fn interpolate_with<T>(coarse: &Mesh, fine: &Mesh, values: &[T], zero: T) -> Result<Vec<T>>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    let link = link(coarse, fine)?;
    if values.len() != coarse.nodes.len() {
        return Err(Error::DimensionMismatch {
            expected: coarse.nodes.len(),
            got: values.len(),
        });
    }
    Ok(link
        .node_embedding
        .iter()
        .enumerate()
        .map(|(n, &(e, r))| {
            if n < link.parent_nodes {
                return values[n];
            }
            let w = hex_shape(r);
            let el = &coarse.elements[e];
            (0..8).fold(zero, |acc, a| acc + values[el[a]] * w[a])
        })
        .collect())
}

pub fn interpolate_to_fine(coarse: &Mesh, fine: &Mesh, values: &[f64]) -> Result<Vec<f64>> {
    interpolate_with(coarse, fine, values, 0.0)
}

pub fn interpolate_vectors_to_fine(coarse: &Mesh, fine: &Mesh, values: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    interpolate_with(coarse, fine, values, Vector3::zeros())
}

/// Injection of fine nodal values onto the coarse nodes.
pub fn restrict_to_coarse<T: Copy>(coarse: &Mesh, fine: &Mesh, values: &[T]) -> Result<Vec<T>> {
    let link = link(coarse, fine)?;
    if values.len() != fine.nodes.len() {
        return Err(Error::DimensionMismatch {
            expected: fine.nodes.len(),
            got: values.len(),
        });
    }
    Ok(values[..link.parent_nodes].to_vec())
}

/// Reusable L² projection of elementwise displacement gradients.
#[derive(Debug, Clone)]
pub struct GradientProjector {
    cache: ElementCache,
    mass: CsrMatrix,
    elements: Vec<[usize; 8]>,
}

impl GradientProjector {
    pub fn new(mesh: &Mesh) -> Self {
        let cache = ElementCache::new(mesh);
        let mass = ScalarSpace::new(mesh).mass(&cache);
        Self {
            cache,
            mass,
            elements: mesh.elements.clone(),
        }
    }

    /// Nodal gradient of a scalar field.
    pub fn project_scalar(&self, v: &[f64]) -> Result<Vec<Vector3<f64>>> {
        let d: Vec<Vector3<f64>> = v.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect();
        Ok(self.project(&d)?.iter().map(|g| g.row(0).transpose()).collect())
    }

    pub fn project(&self, d: &[Vector3<f64>]) -> Result<Vec<Matrix3<f64>>> {
        let n = self.mass.nrows();
        if d.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: d.len() });
        }
        let mut rhs = vec![vec![0.0; n]; 9];
        for (el, qs) in self.elements.iter().zip(&self.cache.qps) {
            for qp in qs {
                let mut g = Matrix3::zeros();
                for a in 0..8 {
                    g += d[el[a]] * qp.grad[a].transpose();
                }
                for a in 0..8 {
                    let w = qp.n[a] * qp.dv;
                    for c in 0..9 {
                        rhs[c][el[a]] += w * g[(c / 3, c % 3)];
                    }
                }
            }
        }
        let opts = SolverOptions {
            rel_tol: 1e-13,
            abs_tol: 0.0,
            max_iter: 10 * n + 100,
        };
        let mut out = vec![Matrix3::zeros(); n];
        for (c, b) in rhs.iter().enumerate() {
            if b.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (x, _) = iterative_solve(&self.mass, b, None, SolverKind::Spd, &opts)?;
            for (m, v) in out.iter_mut().zip(x) {
                m[(c / 3, c % 3)] = v;
            }
        }
        Ok(out)
    }
}

/// Nodal ∇d as the L² projection of the elementwise gradient onto Q1.
pub fn project_gradient(mesh: &Mesh, d: &[Vector3<f64>]) -> Result<Vec<Matrix3<f64>>> {
    GradientProjector::new(mesh).project(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometrySpec};

    fn slab() -> Mesh {
        build_geometry(&GeometrySpec::slab([0.01, 0.01, 0.004], [10, 10, 4])).unwrap()
    }

    #[test]
    fn refine_multiplies_elements_and_keeps_nodes() {
        let m = slab();
        let f = uniform_refine(&m);
        assert_eq!(f.num_elements(), 3200);
        assert_eq!(&f.nodes[..m.nodes.len()], &m.nodes[..]);
        f.check_partition().unwrap();
        f.check_jacobians().unwrap();
        let ff = uniform_refine(&f);
        assert_eq!(ff.num_elements(), 64 * m.num_elements());
    }

    #[test]
    fn refined_biventricle_inherits_tags() {
        let m = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
        let f = uniform_refine(&m);
        f.check_partition().unwrap();
        for t in crate::geometry::BoundaryTag::ALL {
            assert_eq!(f.faces_with(t).count(), 4 * m.faces_with(t).count());
        }
    }

    #[test]
    fn interpolation_reproduces_linears_and_restricts() {
        let m = build_geometry(&GeometrySpec::lv_ellipsoid()).unwrap();
        let f = uniform_refine(&m);
        let v: Vec<f64> = m.nodes.iter().map(|x| x.x).collect();
        let vf = interpolate_to_fine(&m, &f, &v).unwrap();
        // Child nodes sit on the parent's trilinear map, so interpolating a
        // coordinate reproduces it.
        for (x, y) in f.nodes.iter().zip(&vf) {
            assert!((x.x - y).abs() < 1e-15);
        }
        assert_eq!(restrict_to_coarse(&m, &f, &vf).unwrap(), v);
    }

    #[test]
    fn mismatched_pair_rejected() {
        let m = slab();
        let other = uniform_refine(&build_geometry(&GeometrySpec::slab([0.01, 0.01, 0.004], [5, 5, 2])).unwrap());
        assert!(interpolate_to_fine(&m, &other, &vec![0.0; m.num_nodes()]).is_err());
    }

    #[test]
    fn projected_gradient_exact_for_affine() {
        let m = build_geometry(&GeometrySpec::lv_ellipsoid()).unwrap();
        let a = Matrix3::new(0.1, -0.2, 0.05, 0.3, 0.0, 0.1, -0.1, 0.2, 0.4);
        let d: Vec<Vector3<f64>> = m.nodes.iter().map(|x| a * x).collect();
        let g = project_gradient(&m, &d).unwrap();
        for gi in g {
            assert!((gi - a).norm() < 1e-9);
        }
        let z = project_gradient(&m, &vec![Vector3::zeros(); m.num_nodes()]).unwrap();
        assert!(z.iter().all(|g| g.norm() == 0.0));
    }
}
