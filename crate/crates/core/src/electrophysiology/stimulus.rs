use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Mesh};

/// Spherical current injection. Amplitude in μA/cm³, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub center: [f64; 3],
    pub radius: f64,
    pub start: f64,
    pub duration: f64,
    pub amplitude: f64,
}

impl Stimulus {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (x - Vector3::from(self.center)).norm() <= self.radius
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusProtocol {
    pub stimuli: Vec<Stimulus>,
    /// Repeat the protocol with this period (s); 0 for a single beat.
    #[serde(default)]
    pub period: f64,
}

impl StimulusProtocol {
    pub fn validate(&self) -> Result<()> {
        for s in &self.stimuli {
            if !(s.radius > 0.0 && s.duration > 0.0 && s.amplitude > 0.0) {
                return Err(Error::InvalidParameter(
                    "stimulus radius, duration and amplitude must be positive".into(),
                ));
            }
        }
        if self.period < 0.0 {
            return Err(Error::InvalidParameter("stimulus period must be nonnegative".into()));
        }
        Ok(())
    }

    fn local_time(&self, t: f64) -> f64 {
        if self.period > 0.0 {
            t.rem_euclid(self.period)
        } else {
            t
        }
    }

    /// Applied current (μA/cm³) at every node.
    pub fn apply(&self, t: f64, nodes: &[Vector3<f64>]) -> Vec<f64> {
        let tl = self.local_time(t);
        let active: Vec<&Stimulus> = self.stimuli.iter().filter(|s| s.is_active(tl)).collect();
        nodes
            .iter()
            .map(|x| {
                active
                    .iter()
                    .filter(|s| s.contains(x))
                    .map(|s| s.amplitude)
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Settings of the default five-site ventricular protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacingSettings {
    /// μA/cm³
    pub amplitude: f64,
    pub duration: f64,
    pub radius: f64,
    pub lv_start: f64,
    pub rv_start: f64,
}

impl Default for PacingSettings {
    fn default() -> Self {
        Self {
            amplitude: 50e3,
            duration: 3e-3,
            radius: 2.5e-3,
            lv_start: 0.0,
            rv_start: 5e-3,
        }
    }
}

fn nearest(mesh: &Mesh, candidates: &[usize], target: &Vector3<f64>) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .min_by(|&a, &b| (mesh.nodes[a] - target).norm().total_cmp(&(mesh.nodes[b] - target).norm()))
}

/// Endocardial pacing sites: anterior para-septal, LV septal and
/// postero-basal on the left; septal and free-wall on the right. Sites are
/// the endocardial nodes nearest to fixed fractions of the geometry.
pub fn default_protocol(mesh: &Mesh, settings: &PacingSettings) -> StimulusProtocol {
    let lv = mesh.tagged_nodes(BoundaryTag::EndoLv);
    let rv = mesh.tagged_nodes(BoundaryTag::EndoRv);
    let apex_z = lv.iter().map(|&n| mesh.axial(&mesh.nodes[n])).fold(f64::INFINITY, f64::min);
    let height = mesh.base_height - apex_z;
    let lat = mesh.lateral;
    let ant = mesh.axis.cross(&lat);
    let radius_at = |frac: f64| {
        let z = apex_z + frac * height;
        let near: Vec<f64> = lv
            .iter()
            .filter(|&&n| (mesh.axial(&mesh.nodes[n]) - z).abs() < 0.15 * height)
            .map(|&n| {
                let x = mesh.nodes[n];
                (x - mesh.axis * mesh.axial(&x)).norm()
            })
            .collect();
        near.iter().sum::<f64>() / near.len().max(1) as f64
    };
    let point = |frac: f64, dir: Vector3<f64>| mesh.axis * (apex_z + frac * height) + dir * radius_at(frac);
    let (s60, c60) = 60f64.to_radians().sin_cos();
    let (s120, c120) = (-120f64).to_radians().sin_cos();
    let mut sites: Vec<(Vector3<f64>, f64)> = Vec::new();
    let lv_targets = [
        point(0.55, lat * c60 + ant * s60),
        point(0.45, lat),
        point(0.8, lat * c120 + ant * s120),
    ];
    for t in lv_targets {
        if let Some(n) = nearest(mesh, &lv, &t) {
            sites.push((mesh.nodes[n], settings.lv_start));
        }
    }
    if !rv.is_empty() {
        let septal = nearest(mesh, &rv, &lv_targets[1]);
        if let Some(n) = septal {
            sites.push((mesh.nodes[n], settings.rv_start));
        }
        let far = point(0.6, lat) + lat * height;
        if let Some(n) = nearest(mesh, &rv, &far) {
            sites.push((mesh.nodes[n], settings.rv_start));
        }
    }
    StimulusProtocol {
        stimuli: sites
            .into_iter()
            .map(|(c, start)| Stimulus {
                center: [c.x, c.y, c.z],
                radius: settings.radius,
                start,
                duration: settings.duration,
                amplitude: settings.amplitude,
            })
            .collect(),
        period: 0.0,
    }
}
