//! Hexahedral meshes with tagged boundaries, nested refinement and
//! intergrid transfer.

mod builders;
mod refine;

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::element::{ElementCache, HEX_FACES, HEX_GAUSS};

pub use builders::{box_cavity, build_geometry, cylinder_cavity, GeometryKind, GeometrySpec};
pub use refine::{
    interpolate_to_fine, interpolate_vectors_to_fine, interpolate_with, project_gradient, restrict_to_coarse,
    uniform_refine, GradientProjector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryTag {
    Epi,
    EndoLv,
    EndoRv,
    Base,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [Self::Epi, Self::EndoLv, Self::EndoRv, Self::Base];

    pub fn code(self) -> i32 {
        match self {
            Self::Epi => 1,
            Self::EndoLv => 2,
            Self::EndoRv => 3,
            Self::Base => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub element: usize,
    /// Local face index into [`HEX_FACES`].
    pub local: usize,
    pub nodes: [usize; 4],
    pub tag: BoundaryTag,
}

/// Link from a uniformly refined mesh back to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentLink {
    pub parent_nodes: usize,
    pub parent_elements: Vec<[usize; 8]>,
    /// Parent element of each child element.
    pub element_parent: Vec<usize>,
    /// Parent element and reference coordinates of each child node.
    pub node_embedding: Vec<(usize, [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Node coordinates in meters.
    pub nodes: Vec<Vector3<f64>>,
    pub elements: Vec<[usize; 8]>,
    pub faces: Vec<BoundaryFace>,
    /// Unit centerline direction, pointing from apex towards base.
    pub axis: Vector3<f64>,
    /// Axial coordinate of the flat base plane.
    pub base_height: f64,
    /// Unit vector orthogonal to the axis, pointing from the LV towards the
    /// RV across the septum.
    pub lateral: Vector3<f64>,
    pub parent: Option<ParentLink>,
}

impl Mesh {
    /// Assembles a mesh, detecting boundary faces and tagging each with
    /// `tagger(element, local_face)`.
    pub(crate) fn from_parts(
        nodes: Vec<Vector3<f64>>,
        elements: Vec<[usize; 8]>,
        axis: Vector3<f64>,
        base_height: f64,
        lateral: Vector3<f64>,
        mut tagger: impl FnMut(usize, usize) -> Option<BoundaryTag>,
    ) -> Result<Self> {
        let mut faces = Vec::new();
        for (element, local) in exterior_faces(&elements) {
            let tag = tagger(element, local).ok_or_else(|| {
                Error::InvalidGeometry(format!("untagged boundary face {local} of element {element}"))
            })?;
            let nodes = HEX_FACES[local].map(|a| elements[element][a]);
            faces.push(BoundaryFace {
                element,
                local,
                nodes,
                tag,
            });
        }
        let mesh = Self {
            nodes,
            elements,
            faces,
            axis: axis.normalize(),
            base_height,
            lateral: lateral.normalize(),
            parent: None,
        };
        mesh.check_jacobians()?;
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn axial(&self, x: &Vector3<f64>) -> f64 {
        self.axis.dot(x)
    }

    pub fn faces_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryFace> {
        self.faces.iter().filter(move |f| f.tag == tag)
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.faces_with(tag).next().is_some()
    }

    /// Sorted, deduplicated nodes on faces carrying `tag`.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces_with(tag).flat_map(|f| f.nodes).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn node_mask(&self, tag: BoundaryTag) -> Vec<bool> {
        let mut m = vec![false; self.nodes.len()];
        for n in self.tagged_nodes(tag) {
            m[n] = true;
        }
        m
    }

    /// Mean element edge length.
    pub fn characteristic_length(&self) -> f64 {
        const EDGES: [(usize, usize); 12] = [
            (0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7),
        ];
        let total: f64 = self
            .elements
            .iter()
            .flat_map(|e| EDGES.iter().map(move |&(a, b)| (self.nodes[e[a]] - self.nodes[e[b]]).norm()))
            .sum();
        total / (12 * self.elements.len().max(1)) as f64
    }

    pub fn volume(&self) -> f64 {
        ElementCache::new(self).qps.iter().flatten().map(|q| q.dv).sum()
    }

    /// Node with the smallest axial coordinate.
    pub fn apex_node(&self) -> usize {
        (0..self.nodes.len())
            .min_by(|&a, &b| self.axial(&self.nodes[a]).total_cmp(&self.axial(&self.nodes[b])))
            .unwrap_or(0)
    }

    /// Same topology and tags at new nodal positions.
    pub fn with_nodes(&self, nodes: Vec<Vector3<f64>>) -> Result<Self> {
        if nodes.len() != self.nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nodes.len(),
                got: nodes.len(),
            });
        }
        let m = Self {
            nodes,
            ..self.clone()
        };
        m.check_jacobians()?;
        Ok(m)
    }

    /// Errors if any quadrature-point Jacobian is non-positive.
    pub fn check_jacobians(&self) -> Result<()> {
        let cache = ElementCache::new(self);
        match cache.min_det() {
            Some((element, qp, det)) if det <= 0.0 => Err(Error::InvertedElement { element, qp, det }),
            _ => Ok(()),
        }
    }

    /// Every boundary face has one tag and every exterior face is tagged.
    pub fn check_partition(&self) -> Result<()> {
        let exterior = exterior_faces(&self.elements);
        if exterior.len() != self.faces.len() {
            return Err(Error::InvalidGeometry(format!(
                "{} exterior faces but {} tagged faces",
                exterior.len(),
                self.faces.len()
            )));
        }
        let mut seen = HashMap::new();
        for f in &self.faces {
            if seen.insert((f.element, f.local), f.tag).is_some() {
                return Err(Error::InvalidGeometry(format!(
                    "face {} of element {} tagged twice",
                    f.local, f.element
                )));
            }
        }
        for (e, l) in exterior {
            if !seen.contains_key(&(e, l)) {
                return Err(Error::InvalidGeometry(format!("face {l} of element {e} untagged")));
            }
        }
        Ok(())
    }

    /// Physical position of reference point `r` in element `e`.
    pub fn map_point(&self, e: usize, r: [f64; 3]) -> Vector3<f64> {
        let n = crate::fem::element::hex_shape(r);
        (0..8).map(|a| self.nodes[self.elements[e][a]] * n[a]).sum()
    }

    /// Physical quadrature-point positions per element.
    pub fn quadrature_points(&self) -> Vec<[Vector3<f64>; 8]> {
        (0..self.elements.len())
            .map(|e| std::array::from_fn(|q| self.map_point(e, HEX_GAUSS[q])))
            .collect()
    }

    /// Rigidly rotated copy (rotation about the origin).
    pub fn rotated(&self, q: &nalgebra::Matrix3<f64>) -> Self {
        Self {
            nodes: self.nodes.iter().map(|x| q * x).collect(),
            axis: q * self.axis,
            lateral: q * self.lateral,
            ..self.clone()
        }
    }
}

/// Faces that belong to exactly one element, as (element, local face).
pub(crate) fn exterior_faces(elements: &[[usize; 8]]) -> Vec<(usize, usize)> {
    let mut count: HashMap<[usize; 4], (usize, usize, u8)> = HashMap::new();
    for (e, el) in elements.iter().enumerate() {
        for (l, f) in HEX_FACES.iter().enumerate() {
            let mut key = f.map(|a| el[a]);
            key.sort_unstable();
            count.entry(key).and_modify(|c| c.2 += 1).or_insert((e, l, 1));
        }
    }
    let mut out: Vec<(usize, usize)> = count
        .into_values()
        .filter(|c| c.2 == 1)
        .map(|c| (c.0, c.1))
        .collect();
    out.sort_unstable();
    out
}
