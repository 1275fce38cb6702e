use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{BoundaryTag, Mesh};
use crate::error::{Error, Result};
use crate::fem::element::{hex_jacobian, hex_shape_grad, HEX_FACES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GeometryKind {
    Slab,
    LvEllipsoid,
    Biventricle,
}

/// Parameters of the generated domains. Lengths in meters.
///
/// Ventricular geometries are built around the z axis with the apex at
/// negative z and a flat base plane cut at `base_fraction` of the long axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    pub slab_size: [f64; 3],
    pub slab_cells: [usize; 3],
    /// Tag the −x slab face as right endocardium.
    pub slab_rv_face: bool,
    /// Outer LV semi-axes (a, b, c).
    pub lv_semi_axes: [f64; 3],
    pub lv_wall: f64,
    /// Fraction of the full long axis kept below the base plane.
    pub base_fraction: f64,
    pub rv_wall: f64,
    /// Largest RV cavity thickness.
    pub rv_cavity: f64,
    /// Angular width of the RV crescent (degrees).
    pub rv_sector_deg: f64,
    /// Normalized apico-basal position where the RV cavity starts.
    pub rv_start: f64,
    /// Elements per side of the O-grid core square.
    pub disc_core: usize,
    /// Radial elements in the O-grid ring blocks.
    pub disc_ring: usize,
    pub lv_layers: usize,
    pub cavity_layers: usize,
    pub rv_layers: usize,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            kind: GeometryKind::Biventricle,
            slab_size: [0.01, 0.01, 0.004],
            slab_cells: [10, 10, 4],
            slab_rv_face: false,
            lv_semi_axes: [0.035, 0.035, 0.070],
            lv_wall: 0.009,
            base_fraction: 0.6,
            rv_wall: 0.004,
            rv_cavity: 0.020,
            rv_sector_deg: 160.0,
            rv_start: 0.35,
            disc_core: 4,
            disc_ring: 4,
            lv_layers: 2,
            cavity_layers: 2,
            rv_layers: 1,
        }
    }
}

impl GeometrySpec {
    pub fn slab(size: [f64; 3], cells: [usize; 3]) -> Self {
        Self {
            kind: GeometryKind::Slab,
            slab_size: size,
            slab_cells: cells,
            ..Self::default()
        }
    }

    pub fn lv_ellipsoid() -> Self {
        Self {
            kind: GeometryKind::LvEllipsoid,
            ..Self::default()
        }
    }

    pub fn biventricle() -> Self {
        Self::default()
    }

    /// Smallest biventricle the generator supports.
    pub fn tiny_biventricle() -> Self {
        Self {
            disc_core: 2,
            disc_ring: 2,
            lv_layers: 1,
            cavity_layers: 1,
            rv_layers: 1,
            ..Self::default()
        }
    }

    /// Axial coordinate of the base plane.
    pub fn base_height(&self) -> f64 {
        self.lv_semi_axes[2] * (2.0 * self.base_fraction - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidGeometry(m.to_string()));
        match self.kind {
            GeometryKind::Slab => {
                if self.slab_size.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return bad("slab dimensions must be positive");
                }
                if self.slab_cells.contains(&0) {
                    return bad("slab element counts must be positive");
                }
            }
            GeometryKind::LvEllipsoid | GeometryKind::Biventricle => {
                let [a, b, c] = self.lv_semi_axes;
                if [a, b, c, self.lv_wall].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return bad("ellipsoid semi-axes and wall thickness must be positive");
                }
                if self.lv_wall >= a.min(b).min(c) {
                    return bad("wall thickness exceeds the semi-axes");
                }
                if !(self.base_fraction > 0.05 && self.base_fraction < 0.95) {
                    return bad("base fraction must lie in (0.05, 0.95)");
                }
                if self.disc_core == 0 || self.disc_ring == 0 || self.lv_layers == 0 {
                    return bad("element counts must be positive");
                }
                if self.kind == GeometryKind::Biventricle {
                    if self.rv_wall <= 0.0 || self.rv_cavity <= 0.0 {
                        return bad("RV wall and cavity thickness must be positive");
                    }
                    if self.cavity_layers == 0 || self.rv_layers == 0 {
                        return bad("RV layer counts must be positive");
                    }
                    if !(self.rv_sector_deg > 30.0 && self.rv_sector_deg < 300.0) {
                        return bad("RV sector must lie in (30, 300) degrees");
                    }
                    if !(self.rv_start > 0.0 && self.rv_start < 0.9) {
                        return bad("RV start must lie in (0, 0.9)");
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn build_geometry(spec: &GeometrySpec) -> Result<Mesh> {
    spec.validate()?;
    match spec.kind {
        GeometryKind::Slab => slab(spec),
        GeometryKind::LvEllipsoid | GeometryKind::Biventricle => ventricles(spec),
    }
}

fn slab(spec: &GeometrySpec) -> Result<Mesh> {
    let [lx, ly, lz] = spec.slab_size;
    let [nx, ny, nz] = spec.slab_cells;
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vector3::new(
                    lx * i as f64 / nx as f64,
                    ly * j as f64 / ny as f64,
                    lz * k as f64 / nz as f64,
                ));
            }
        }
    }
    let mut elements = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let rv = spec.slab_rv_face;
    Mesh::from_parts(
        nodes,
        elements,
        Vector3::y(),
        ly,
        Vector3::x(),
        |_, local| {
            Some(match local {
                0 => BoundaryTag::EndoLv,
                1 => BoundaryTag::Epi,
                4 if rv => BoundaryTag::EndoRv,
                _ => BoundaryTag::Base,
            })
        },
    )
}

/// O-grid discretization of the unit disc: a core square surrounded by four
/// ring blocks.
struct Disc {
    pts: Vec<[f64; 2]>,
    quads: Vec<[usize; 4]>,
}

impl Disc {
    fn new(nc: usize, nr: usize) -> Self {
        const CORE: f64 = 0.4;
        let mut pts = Vec::new();
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut node = |p: [f64; 2]| -> usize {
            let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
            *index.entry(key).or_insert_with(|| {
                pts.push(p);
                pts.len() - 1
            })
        };
        let mut quads = Vec::new();
        let lin = |i: usize, n: usize| -CORE + 2.0 * CORE * i as f64 / n as f64;
        let mut grid = vec![vec![0; nc + 1]; nc + 1];
        for (i, row) in grid.iter_mut().enumerate() {
            for (j, g) in row.iter_mut().enumerate() {
                *g = node([lin(i, nc), lin(j, nc)]);
            }
        }
        for i in 0..nc {
            for j in 0..nc {
                quads.push([grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]]);
            }
        }
        for side in 0..4 {
            let rot = side as f64 * FRAC_PI_2;
            let (s, c) = rot.sin_cos();
            let mut ring = vec![vec![0; nr + 1]; nc + 1];
            for (i, col) in ring.iter_mut().enumerate() {
                let edge = [CORE, lin(i, nc)];
                let th = -FRAC_PI_4 + FRAC_PI_2 * i as f64 / nc as f64;
                let circ = [th.cos(), th.sin()];
                for (j, g) in col.iter_mut().enumerate() {
                    let t = j as f64 / nr as f64;
                    let p = [edge[0] + t * (circ[0] - edge[0]), edge[1] + t * (circ[1] - edge[1])];
                    *g = node([c * p[0] - s * p[1], s * p[0] + c * p[1]]);
                }
            }
            for i in 0..nc {
                for j in 0..nr {
                    quads.push([ring[i][j], ring[i][j + 1], ring[i + 1][j + 1], ring[i + 1][j]]);
                }
            }
        }
        Self { pts, quads }
    }

    fn polar(&self, n: usize) -> (f64, f64) {
        let [x, y] = self.pts[n];
        (x.hypot(y), y.atan2(x))
    }

    fn on_rim(&self, n: usize) -> bool {
        (self.polar(n).0 - 1.0).abs() < 1e-9
    }
}

/// Point on the truncated ellipsoid with semi-axes `s`, for normalized
/// apico-basal coordinate `rho` (0 at apex, 1 on the base plane at `zb`).
fn ellipsoid_point(s: [f64; 3], zb: f64, rho: f64, theta: f64) -> Vector3<f64> {
    let mu = rho * (-zb / s[2]).clamp(-1.0, 1.0).acos();
    Vector3::new(s[0] * mu.sin() * theta.cos(), s[1] * mu.sin() * theta.sin(), -s[2] * mu.cos())
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn ventricles(spec: &GeometrySpec) -> Result<Mesh> {
    let disc = Disc::new(spec.disc_core, spec.disc_ring);
    let zb = spec.base_height();
    let outer = spec.lv_semi_axes;
    let inner = outer.map(|v| v - spec.lv_wall);
    let biv = spec.kind == GeometryKind::Biventricle;
    let (na, nb, nc) = if biv {
        (spec.lv_layers, spec.cavity_layers, spec.rv_layers)
    } else {
        (spec.lv_layers, 0, 0)
    };
    let layers = na + nb + nc;

    // RV crescent profile over the disc: 1 inside the crescent, 0 away.
    let half = 0.5 * spec.rv_sector_deg.to_radians();
    let taper_th = 25f64.to_radians();
    let bump: Vec<f64> = (0..disc.pts.len())
        .map(|n| {
            if !biv {
                return 0.0;
            }
            let (rho, th) = disc.polar(n);
            let d = th.abs().min(2.0 * PI - th.abs());
            smoothstep((half - d) / taper_th) * smoothstep((rho - spec.rv_start) / 0.2)
        })
        .collect();

    let npts = disc.pts.len();
    let mut nodes = Vec::with_capacity(npts * (layers + 1));
    for l in 0..=layers {
        for n in 0..npts {
            let (rho, th) = disc.polar(n);
            let pe = ellipsoid_point(inner, zb, rho, th);
            let po = ellipsoid_point(outer, zb, rho, th);
            let span = po - pe;
            let lw = span.norm();
            let u = span / lw;
            let t = if biv {
                let eps = lw / 6.0;
                let b = bump[n];
                let ta = lw - 2.0 * eps * (1.0 - b);
                let tb = eps + b * (spec.rv_cavity - eps);
                let tc = eps + b * (spec.rv_wall - eps);
                if l <= na {
                    ta * l as f64 / na as f64
                } else if l <= na + nb {
                    ta + tb * (l - na) as f64 / nb as f64
                } else {
                    ta + tb + tc * (l - na - nb) as f64 / nc as f64
                }
            } else {
                lw * l as f64 / layers as f64
            };
            nodes.push(pe + u * t);
        }
    }

    // Orientation: flip quads if the first element comes out negative.
    let mut quads = disc.quads.clone();
    let probe = |q: &[usize; 4]| {
        let el: [usize; 8] = [q[0], q[1], q[2], q[3], q[0] + npts, q[1] + npts, q[2] + npts, q[3] + npts];
        let x = el.map(|i| nodes[i]);
        hex_jacobian(&x, &hex_shape_grad([0.0; 3])).determinant()
    };
    if probe(&quads[0]) < 0.0 {
        for q in &mut quads {
            q.swap(1, 3);
        }
    }

    let mut full = Vec::with_capacity(quads.len() * layers);
    let mut layer_of = Vec::new();
    let mut carved = Vec::new();
    for l in 0..layers {
        for q in &quads {
            let off = l * npts;
            let up = (l + 1) * npts;
            full.push([q[0] + off, q[1] + off, q[2] + off, q[3] + off, q[0] + up, q[1] + up, q[2] + up, q[3] + up]);
            layer_of.push(l);
            let mean_b = q.iter().map(|&n| bump[n]).sum::<f64>() / 4.0;
            carved.push(l >= na && l < na + nb && mean_b >= 0.5);
        }
    }
    if biv && !carved.iter().any(|&c| c) {
        return Err(Error::InvalidGeometry("RV crescent too small for the mesh resolution".into()));
    }

    let rim = |node: usize| disc.on_rim(node % npts);
    carve_and_tag(nodes, full, carved, Vector3::z(), zb, Vector3::x(), |e, local, el, nb_carved| {
        if nb_carved {
            return Some(BoundaryTag::EndoRv);
        }
        match local {
            0 if layer_of[e] == 0 => Some(BoundaryTag::EndoLv),
            1 if layer_of[e] == layers - 1 => Some(BoundaryTag::Epi),
            2..=5 => {
                let f = HEX_FACES[local];
                f.iter().all(|&a| rim(el[a])).then_some(BoundaryTag::Base)
            }
            _ => None,
        }
    })
}

/// Removes carved elements and unused nodes, then tags the exterior faces.
/// `classify(full_element, local_face, nodes, neighbor_was_carved)`.
fn carve_and_tag(
    nodes: Vec<Vector3<f64>>,
    full: Vec<[usize; 8]>,
    carved: Vec<bool>,
    axis: Vector3<f64>,
    base_height: f64,
    lateral: Vector3<f64>,
    classify: impl Fn(usize, usize, &[usize; 8], bool) -> Option<BoundaryTag>,
) -> Result<Mesh> {
    let mut owners: HashMap<[usize; 4], Vec<usize>> = HashMap::new();
    for (e, el) in full.iter().enumerate() {
        for f in HEX_FACES {
            let mut key = f.map(|a| el[a]);
            key.sort_unstable();
            owners.entry(key).or_default().push(e);
        }
    }
    let kept: Vec<usize> = (0..full.len()).filter(|&e| !carved[e]).collect();
    let mut renumber = vec![usize::MAX; nodes.len()];
    let mut new_nodes = Vec::new();
    let mut elements = Vec::with_capacity(kept.len());
    for &e in &kept {
        elements.push(full[e].map(|n| {
            if renumber[n] == usize::MAX {
                renumber[n] = new_nodes.len();
                new_nodes.push(nodes[n]);
            }
            renumber[n]
        }));
    }
    Mesh::from_parts(new_nodes, elements, axis, base_height, lateral, |e, local| {
        let fe = kept[e];
        let el = &full[fe];
        let mut key = HEX_FACES[local].map(|a| el[a]);
        key.sort_unstable();
        let nb_carved = owners[&key].iter().any(|&o| o != fe && carved[o]);
        classify(fe, local, el, nb_carved)
    })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Block of tissue around a rectangular cavity of `cavity` = (w, d, h) that
/// opens onto the base plane z = 0. `wall` is the tissue thickness on the
/// sides and below; `cells` is the element count across each cavity edge
/// length and each wall.
pub fn box_cavity(cavity: [f64; 3], wall: f64, cells: usize) -> Result<Mesh> {
    let [w, d, h] = cavity;
    if [w, d, h, wall].iter().any(|&v| !(v > 0.0)) || cells == 0 {
        return Err(Error::InvalidGeometry("box cavity dimensions must be positive".into()));
    }
    let axis_lines = |half: f64| {
        let mut v = linspace(-half - wall, -half, cells);
        v.extend(linspace(-half, half, cells).into_iter().skip(1));
        v.extend(linspace(half, half + wall, cells).into_iter().skip(1));
        v
    };
    let xs = axis_lines(0.5 * w);
    let ys = axis_lines(0.5 * d);
    let mut zs = linspace(-h - wall, -h, cells);
    zs.extend(linspace(-h, 0.0, cells).into_iter().skip(1));
    let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
    let id = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut nodes = Vec::new();
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                nodes.push(Vector3::new(x, y, z));
            }
        }
    }
    let mut full = Vec::new();
    let mut carved = Vec::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                full.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
                let c = Vector3::new(
                    0.5 * (xs[i] + xs[i + 1]),
                    0.5 * (ys[j] + ys[j + 1]),
                    0.5 * (zs[k] + zs[k + 1]),
                );
                carved.push(c.x.abs() < 0.5 * w && c.y.abs() < 0.5 * d && c.z > -h);
            }
        }
    }
    let top = nz - 2;
    carve_and_tag(nodes, full, carved, Vector3::z(), 0.0, Vector3::x(), |e, local, _, nb| {
        Some(if nb {
            BoundaryTag::EndoLv
        } else if local == 1 && e / ((nx - 1) * (ny - 1)) == top {
            BoundaryTag::Base
        } else {
            BoundaryTag::Epi
        })
    })
}

/// Thick tube with inner radius `r_in`, outer radius `r_out` and height
/// `height`, open at both ends (both end planes tagged as base). The inner
/// wall is the left endocardium, a regular polygon with `n_theta` sides.
pub fn cylinder_cavity(r_in: f64, r_out: f64, height: f64, n_theta: usize, n_r: usize, n_z: usize) -> Result<Mesh> {
    if !(r_in > 0.0 && r_out > r_in && height > 0.0) || n_theta < 3 || n_r == 0 || n_z == 0 {
        return Err(Error::InvalidGeometry("invalid tube dimensions".into()));
    }
    let id = |i: usize, j: usize, k: usize| (k * n_theta + j % n_theta) * (n_r + 1) + i;
    let mut nodes = Vec::new();
    for k in 0..=n_z {
        for j in 0..n_theta {
            let th = 2.0 * PI * j as f64 / n_theta as f64;
            for i in 0..=n_r {
                let r = r_in + (r_out - r_in) * i as f64 / n_r as f64;
                nodes.push(Vector3::new(r * th.cos(), r * th.sin(), -height + height * k as f64 / n_z as f64));
            }
        }
    }
    let mut elements = Vec::new();
    for k in 0..n_z {
        for j in 0..n_theta {
            for i in 0..n_r {
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    Mesh::from_parts(nodes, elements, Vector3::z(), 0.0, Vector3::x(), |_, local| {
        Some(match local {
            0 | 1 => BoundaryTag::Base,
            4 => BoundaryTag::EndoLv,
            _ => BoundaryTag::Epi,
        })
    })
}
