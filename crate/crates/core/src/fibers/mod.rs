//! Laplace-Dirichlet rule-based fiber generation.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::element::{hex_shape, HEX_GAUSS};
use crate::fem::{solve_laplace_nodes, tag_constraints};
use crate::geometry::{BoundaryTag, GradientProjector, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiberRule {
    #[serde(rename = "d-rbm", alias = "D_RBM")]
    DRbm,
    #[serde(rename = "r-rbm", alias = "R_RBM")]
    RRbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lv,
    Rv,
}

/// Helical (α) and sheetlet (β) angles of one ventricle, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideAngles {
    pub alpha_epi: f64,
    pub alpha_endo: f64,
    pub beta_epi: f64,
    pub beta_endo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleSet {
    pub lv: SideAngles,
    pub rv: SideAngles,
}

impl Default for AngleSet {
    fn default() -> Self {
        Self {
            lv: SideAngles {
                alpha_epi: -60.0,
                alpha_endo: 60.0,
                beta_epi: 20.0,
                beta_endo: -20.0,
            },
            rv: SideAngles {
                alpha_epi: -25.0,
                alpha_endo: 90.0,
                beta_epi: 20.0,
                beta_endo: 0.0,
            },
        }
    }
}

impl AngleSet {
    pub fn zero() -> Self {
        let z = SideAngles {
            alpha_epi: 0.0,
            alpha_endo: 0.0,
            beta_epi: 0.0,
            beta_endo: 0.0,
        };
        Self { lv: z, rv: z }
    }

    pub fn side(&self, side: Side) -> &SideAngles {
        match side {
            Side::Lv => &self.lv,
            Side::Rv => &self.rv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.lv, &self.rv] {
            if [s.alpha_epi, s.alpha_endo, s.beta_epi, s.beta_endo].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("fiber angles must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Harmonic distance fields. `phi_lv` and `phi_rv` are the per-ventricle
/// transmural fields (0 on the own endocardium, 1 on the epicardium and the
/// other endocardium); `psi_lv`/`psi_rv` the per-ventricle apico-basal
/// fields used by the D-RBM rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFields {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub xi: Vec<f64>,
    pub xi_hat: Vec<f64>,
    pub phi_fast: Vec<f64>,
    pub phi_lv: Vec<f64>,
    pub phi_rv: Vec<f64>,
    pub psi_lv: Vec<f64>,
    pub psi_rv: Vec<f64>,
}

/// Fraction of the apex-to-base height forming the apical Dirichlet patch.
const APEX_PATCH: f64 = 0.05;

fn base_plane_nodes(mesh: &Mesh) -> Vec<usize> {
    let tol = 1e-6 * mesh.characteristic_length();
    mesh.tagged_nodes(BoundaryTag::Base)
        .into_iter()
        .filter(|&n| (mesh.axial(&mesh.nodes[n]) - mesh.base_height).abs() <= tol)
        .collect()
}

fn apex_patch(mesh: &Mesh, candidates: &[usize]) -> Vec<usize> {
    let lo = candidates
        .iter()
        .map(|&n| mesh.axial(&mesh.nodes[n]))
        .fold(f64::INFINITY, f64::min);
    let delta = APEX_PATCH * (mesh.base_height - lo);
    candidates
        .iter()
        .copied()
        .filter(|&n| mesh.axial(&mesh.nodes[n]) <= lo + delta)
        .collect()
}

fn apico_basal(mesh: &Mesh, base: &[usize], apex: &[usize]) -> Result<Vec<f64>> {
    let mut c = vec![None; mesh.num_nodes()];
    for &n in apex {
        c[n] = Some(0.0);
    }
    for &n in base {
        c[n].get_or_insert(1.0);
    }
    solve_laplace_nodes(mesh, &c)
}

pub fn compute_distance_fields(mesh: &Mesh) -> Result<DistanceFields> {
    use BoundaryTag::*;
    for (tag, name) in [(Epi, "EPI"), (EndoLv, "ENDO_LV"), (Base, "BASE")] {
        if !mesh.has_tag(tag) {
            return Err(Error::MissingTag(name));
        }
    }
    let has_rv = mesh.has_tag(EndoRv);
    let solve = |d: &[(BoundaryTag, f64)]| solve_laplace_nodes(mesh, &tag_constraints(mesh, d));

    let phi = solve(&[(EndoLv, 0.0), (EndoRv, 0.0), (Epi, 1.0)])?;
    let phi_fast = solve(&[(EndoLv, 0.0), (EndoRv, 0.0), (Epi, 1.0), (Base, 1.0)])?;
    let (phi_lv, phi_rv, xi) = if has_rv {
        (
            solve(&[(EndoLv, 0.0), (Epi, 1.0), (EndoRv, 1.0)])?,
            solve(&[(EndoRv, 0.0), (Epi, 1.0), (EndoLv, 1.0)])?,
            solve(&[(EndoLv, 1.0), (EndoRv, -1.0)])?,
        )
    } else {
        (phi.clone(), phi.clone(), vec![1.0; mesh.num_nodes()])
    };

    let base = base_plane_nodes(mesh);
    if base.is_empty() {
        return Err(Error::MissingTag("BASE nodes on the base plane"));
    }
    let all: Vec<usize> = (0..mesh.num_nodes()).collect();
    let psi = apico_basal(mesh, &base, &apex_patch(mesh, &all))?;
    let base_lv: Vec<usize> = base.iter().copied().filter(|&n| xi[n] >= 0.0).collect();
    let psi_lv = apico_basal(mesh, &base_lv, &apex_patch(mesh, &mesh.tagged_nodes(EndoLv)))?;
    let psi_rv = if has_rv {
        let base_rv: Vec<usize> = base.iter().copied().filter(|&n| xi[n] < 0.0).collect();
        apico_basal(mesh, &base_rv, &apex_patch(mesh, &mesh.tagged_nodes(EndoRv)))?
    } else {
        psi_lv.clone()
    };
    let xi_hat = xi.iter().map(|x| 0.5 * (x + 1.0)).collect();
    Ok(DistanceFields {
        phi,
        psi,
        xi,
        xi_hat,
        phi_fast,
        phi_lv,
        phi_rv,
        psi_lv,
        psi_rv,
    })
}

/// Local orthonormal axes (e_ℓ, e_n, e_t) with e_ℓ × e_n = e_t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub e_l: Vector3<f64>,
    pub e_n: Vector3<f64>,
    pub e_t: Vector3<f64>,
}

/// Builds the local frame from the transmural and apico-basal gradients.
/// `node` is only used for error reporting.
pub fn local_frame(grad_phi: &Vector3<f64>, grad_psi: &Vector3<f64>, node: usize) -> Result<Frame> {
    let gp = grad_phi.norm();
    if !(gp > 0.0) || !gp.is_finite() {
        return Err(Error::DegenerateFrame {
            node,
            reason: "vanishing transmural gradient".into(),
        });
    }
    let e_t = grad_phi / gp;
    let perp = grad_psi - e_t * grad_psi.dot(&e_t);
    let gs = grad_psi.norm();
    if !(gs > 0.0) || perp.norm() < 1f64.to_radians().sin() * gs {
        return Err(Error::DegenerateFrame {
            node,
            reason: "apico-basal and transmural gradients are nearly parallel".into(),
        });
    }
    let e_n = perp.normalize();
    Ok(Frame {
        e_l: e_n.cross(&e_t),
        e_n,
        e_t,
    })
}

/// Linear transmural law; `d` = 0 on the epicardium, 1 on the endocardium.
pub fn transmural_angles(d: f64, side: Side, angles: &AngleSet) -> Result<(f64, f64)> {
    if !(-1e-6..=1.0 + 1e-6).contains(&d) {
        return Err(Error::OutOfRange(format!("transmural distance {d} outside [0, 1]")));
    }
    let d = d.clamp(0.0, 1.0);
    let s = angles.side(side);
    Ok((
        s.alpha_epi * (1.0 - d) + s.alpha_endo * d,
        s.beta_epi * (1.0 - d) + s.beta_endo * d,
    ))
}

/// Rotates e_ℓ by α (degrees) about e_t towards e_n, then the sheet pair by
/// β about the new fiber. Returns (f0, s0, n0).
pub fn rotate_frame(frame: &Frame, alpha: f64, beta: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let (sa, ca) = alpha.to_radians().sin_cos();
    let (sb, cb) = beta.to_radians().sin_cos();
    let f0 = frame.e_l * ca + frame.e_n * sa;
    let n1 = frame.e_n * ca - frame.e_l * sa;
    let s1 = frame.e_t;
    (f0, s1 * cb - n1 * sb, n1 * cb + s1 * sb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberField {
    pub f0: Vec<Vector3<f64>>,
    pub s0: Vec<Vector3<f64>>,
    pub n0: Vec<Vector3<f64>>,
    pub rule: FiberRule,
    pub angles: AngleSet,
    /// Nodes whose apico-basal direction was replaced by a fallback axis
    /// because it was parallel to the transmural direction.
    pub fallback_nodes: Vec<usize>,
}

pub fn generate_fibers(mesh: &Mesh, rule: FiberRule, angles: &AngleSet) -> Result<(FiberField, DistanceFields)> {
    let fields = compute_distance_fields(mesh)?;
    let fibers = fibers_from_fields(mesh, &fields, rule, angles)?;
    Ok((fibers, fields))
}

pub fn fibers_from_fields(
    mesh: &Mesh,
    fields: &DistanceFields,
    rule: FiberRule,
    angles: &AngleSet,
) -> Result<FiberField> {
    angles.validate()?;
    let proj = GradientProjector::new(mesh);
    let g_phi_lv = proj.project_scalar(&fields.phi_lv)?;
    let g_phi_rv = proj.project_scalar(&fields.phi_rv)?;
    let (g_psi_lv, g_psi_rv) = match rule {
        FiberRule::DRbm => (proj.project_scalar(&fields.psi_lv)?, proj.project_scalar(&fields.psi_rv)?),
        FiberRule::RRbm => {
            let g = proj.project_scalar(&fields.psi)?;
            (g.clone(), g)
        }
    };
    let results: Vec<Result<((Vector3<f64>, Vector3<f64>, Vector3<f64>), bool)>> = (0..mesh.num_nodes())
        .into_par_iter()
        .map(|n| {
            let side = if fields.xi[n] >= 0.0 { Side::Lv } else { Side::Rv };
            let (gphi, gpsi, phi) = match side {
                Side::Lv => (g_phi_lv[n], g_psi_lv[n], fields.phi_lv[n]),
                Side::Rv => (g_phi_rv[n], g_psi_rv[n], fields.phi_rv[n]),
            };
            let (frame, fallback) = match local_frame(&gphi, &gpsi, n) {
                Ok(f) => (f, false),
                Err(Error::DegenerateFrame { .. }) if gphi.norm() > 0.0 => {
                    // Apex: use the centerline, or the lateral direction where
                    // the transmural direction is along the centerline.
                    let f = local_frame(&gphi, &mesh.axis, n).or_else(|_| local_frame(&gphi, &mesh.lateral, n))?;
                    (f, true)
                }
                Err(e) => return Err(e),
            };
            let (a, b) = transmural_angles((1.0 - phi).clamp(0.0, 1.0), side, angles)?;
            Ok((rotate_frame(&frame, a, b), fallback))
        })
        .collect();
    let mut field = FiberField {
        f0: Vec::with_capacity(mesh.num_nodes()),
        s0: Vec::with_capacity(mesh.num_nodes()),
        n0: Vec::with_capacity(mesh.num_nodes()),
        rule,
        angles: *angles,
        fallback_nodes: Vec::new(),
    };
    for (n, r) in results.into_iter().enumerate() {
        let ((f, s, nn), fb) = r?;
        field.f0.push(f);
        field.s0.push(s);
        field.n0.push(nn);
        if fb {
            field.fallback_nodes.push(n);
        }
    }
    Ok(field)
}

impl FiberField {
    /// Fiber frames R = [f0 s0 n0] (as columns) at every volume quadrature
    /// point. Nodal vectors are sign-aligned with the dominant node before
    /// averaging, since fibers are axial.
    pub fn at_quadrature(&self, mesh: &Mesh) -> Vec<[Matrix3<f64>; 8]> {
        mesh.elements
            .par_iter()
            .map(|el| {
                std::array::from_fn(|q| {
                    let w = hex_shape(HEX_GAUSS[q]);
                    let dom = (0..8).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
                    let avg = |v: &[Vector3<f64>]| -> Vector3<f64> {
                        let r = v[el[dom]];
                        (0..8)
                            .map(|a| {
                                let x = v[el[a]];
                                x * w[a] * if x.dot(&r) < 0.0 { -1.0 } else { 1.0 }
                            })
                            .sum()
                    };
                    let f = avg(&self.f0).normalize();
                    let s = avg(&self.s0);
                    let s = (s - f * s.dot(&f)).normalize();
                    let n = s.cross(&f);
                    Matrix3::from_columns(&[f, s, n])
                })
            })
            .collect()
    }
}

/// Nodes inside the fast endocardial conduction layer.
pub fn fast_layer_mask(fields: &DistanceFields, eps: f64) -> Result<Vec<bool>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("fast-layer threshold must be positive, got {eps}")));
    }
    Ok(fields.phi_fast.iter().map(|&p| p <= eps).collect())
}
