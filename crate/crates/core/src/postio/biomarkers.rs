//! Clinical scalar summaries of a simulated beat.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::coupling::sis::StepRecord;
use crate::electrophysiology::{activation_span, EpState};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Mesh};

/// Ventricular volume and pressure summaries. Index 0 is the LV, 1 the RV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biomarkers {
    /// mL
    pub edv: [f64; 2],
    pub esv: [f64; 2],
    /// %
    pub ef: [f64; 2],
    /// mL
    pub sv: [f64; 2],
    /// Peak pressures (mmHg).
    pub p_peak: [f64; 2],
    /// Longitudinal fractional shortening (%).
    pub lfs: Option<f64>,
    /// Systolic wall thickening (%).
    pub wt: Option<f64>,
    /// Spread of the activation map (ms).
    pub activation_time: Option<f64>,
}

/// Ejection fraction (%) from end-diastolic and end-systolic volumes.
pub fn ejection_fraction(edv: f64, esv: f64) -> f64 {
    (edv - esv) / edv * 100.0
}

impl Biomarkers {
    /// Volumes and pressures from at least one beat of step records.
    pub fn from_records(records: &[StepRecord]) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::MissingData("fewer than two samples in the PV series".into()));
        }
        let series = |f: fn(&StepRecord) -> f64| records.iter().map(f);
        let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
        let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        let edv = [max(&mut series(|r| r.v_lv)), max(&mut series(|r| r.v_rv))];
        let esv = [min(&mut series(|r| r.v_lv)), min(&mut series(|r| r.v_rv))];
        let p_peak = [max(&mut series(|r| r.p_lv)), max(&mut series(|r| r.p_rv))];
        Ok(Self {
            edv,
            esv,
            ef: [ejection_fraction(edv[0], esv[0]), ejection_fraction(edv[1], esv[1])],
            sv: [edv[0] - esv[0], edv[1] - esv[1]],
            p_peak,
            lfs: None,
            wt: None,
            activation_time: None,
        })
    }

    /// Adds LFS and WT from end-diastolic and end-systolic shape measures.
    pub fn with_shape(mut self, ed: ShapeMeasure, es: ShapeMeasure) -> Self {
        self.lfs = Some(fractional_shortening(ed.length, es.length));
        self.wt = Some(wall_thickening(ed.thickness, es.thickness));
        self
    }

    pub fn with_activation(mut self, ep: &EpState) -> Self {
        self.activation_time = activation_span(ep).map(|(a, b)| (b - a) * 1e3);
        self
    }

    /// Key/value pairs in report order, units in the key names.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, name) in ["lv", "rv"].iter().enumerate() {
            out.push((format!("edv_{name}_mL"), self.edv[k]));
            out.push((format!("esv_{name}_mL"), self.esv[k]));
            out.push((format!("ef_{name}_percent"), self.ef[k]));
            out.push((format!("sv_{name}_mL"), self.sv[k]));
            out.push((format!("p_peak_{name}_mmHg"), self.p_peak[k]));
        }
        let opt = [
            ("lfs_percent", self.lfs),
            ("wt_percent", self.wt),
            ("activation_time_ms", self.activation_time),
        ];
        out.extend(opt.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        out
    }
}

pub fn fractional_shortening(l0: f64, l: f64) -> f64 {
    (l0 - l) / l0 * 100.0
}

pub fn wall_thickening(t0: f64, t: f64) -> f64 {
    (t - t0) / t0 * 100.0
}

/// Apico-basal length and mid-ventricular wall thickness of the LV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMeasure {
    pub length: f64,
    pub thickness: f64,
}

/// Landmarks on the reference mesh used to measure LV shape.
///
/// The length runs from the LV endocardial apex to the centroid of the
/// LV endocardial base ring. The thickness is the mean distance between
/// free-wall endocardial nodes of the mid-ventricular slice (apico-basal
/// coordinate closest to one half) and their nearest epicardial nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WallGauge {
    apex: usize,
    base_ring: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl WallGauge {
    pub fn new(mesh: &Mesh, psi: &[f64]) -> Result<Self> {
        if psi.len() != mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_nodes(),
                got: psi.len(),
            });
        }
        let endo = mesh.tagged_nodes(BoundaryTag::EndoLv);
        let epi = mesh.tagged_nodes(BoundaryTag::Epi);
        if endo.is_empty() || epi.is_empty() {
            return Err(Error::MissingData("mesh has no LV endocardium or epicardium".into()));
        }
        let base = mesh.node_mask(BoundaryTag::Base);
        let x = &mesh.nodes;
        let apex = *endo
            .iter()
            .min_by(|&&a, &&b| mesh.axial(&x[a]).total_cmp(&mesh.axial(&x[b])))
            .expect("nonempty");
        let base_ring: Vec<usize> = endo.iter().copied().filter(|&i| base[i]).collect();
        if base_ring.is_empty() {
            return Err(Error::MissingData("LV endocardium does not reach the base".into()));
        }

        let centroid = endo.iter().map(|&i| x[i]).sum::<Vector3<f64>>() / endo.len() as f64;
        let free_wall: Vec<usize> = endo
            .iter()
            .copied()
            .filter(|&i| mesh.lateral.dot(&(x[i] - centroid)) < 0.0 && !base[i])
            .collect();
        let candidates = if free_wall.is_empty() { endo.clone() } else { free_wall };
        let level = candidates
            .iter()
            .map(|&i| psi[i])
            .min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()))
            .expect("nonempty");
        let pairs = candidates
            .iter()
            .copied()
            .filter(|&i| (psi[i] - level).abs() < 1e-6 + 0.02)
            .map(|i| {
                let j = *epi
                    .iter()
                    .min_by(|&&a, &&b| (x[a] - x[i]).norm().total_cmp(&(x[b] - x[i]).norm()))
                    .expect("nonempty");
                (i, j)
            })
            .collect();
        Ok(Self { apex, base_ring, pairs })
    }

    /// Shape at displacement `d` (interleaved xyz).
    pub fn measure(&self, mesh: &Mesh, d: &[f64]) -> Result<ShapeMeasure> {
        if d.len() != 3 * mesh.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: 3 * mesh.num_nodes(),
                got: d.len(),
            });
        }
        let pos = |i: usize| mesh.nodes[i] + Vector3::new(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
        let ring = self.base_ring.iter().map(|&i| pos(i)).sum::<Vector3<f64>>() / self.base_ring.len() as f64;
        let length = (ring - pos(self.apex)).norm();
        let thickness =
            self.pairs.iter().map(|&(i, j)| (pos(j) - pos(i)).norm()).sum::<f64>() / self.pairs.len() as f64;
        Ok(ShapeMeasure { length, thickness })
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibers::compute_distance_fields;
    use crate::geometry::{build_geometry, GeometrySpec};

    fn record(v_lv: f64, v_rv: f64, p_lv: f64) -> StepRecord {
        StepRecord {
            t: 0.0,
            p_lv,
            p_rv: p_lv / 4.0,
            v_lv,
            v_rv,
            newton_iterations: 0,
            volume_residual: 0.0,
            max_momentum_error: 0.0,
            ta_max: 0.0,
            p_la: 0.0,
            p_ar_sys: 0.0,
            p_ra: 0.0,
            p_ar_pul: 0.0,
        }
    }

    #[test]
    fn ejection_fraction_from_hand_values() {
        let recs = [record(137.0, 140.0, 8.0), record(90.0, 100.0, 120.0), record(48.0, 70.0, 20.0)];
        let b = Biomarkers::from_records(&recs).unwrap();
        assert_eq!(b.edv, [137.0, 140.0]);
        assert_eq!(b.esv, [48.0, 70.0]);
        assert_eq!(b.sv, [89.0, 70.0]);
        assert!((b.ef[0] - 64.963_503_649_635).abs() < 1e-9);
        assert_eq!(b.ef[1], 50.0);
        assert_eq!(b.p_peak, [120.0, 30.0]);
        assert!(b.edv[0] >= b.esv[0]);
    }

    #[test]
    fn one_sample_is_not_a_beat() {
        assert!(Biomarkers::from_records(&[record(1.0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn identical_shapes_give_zero() {
        let m = ShapeMeasure { length: 0.08, thickness: 0.01 };
        let b = Biomarkers::from_records(&[record(2.0, 2.0, 1.0), record(1.0, 1.0, 2.0)]).unwrap().with_shape(m, m);
        assert_eq!(b.lfs, Some(0.0));
        assert_eq!(b.wt, Some(0.0));
        assert_eq!(fractional_shortening(0.1, 0.09), 10.000000000000009);
        assert!((wall_thickening(0.01, 0.013) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn gauge_on_biventricle() {
        let mesh = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
        let fields = compute_distance_fields(&mesh).unwrap();
        let g = WallGauge::new(&mesh, &fields.psi).unwrap();
        assert!(g.num_pairs() > 0);
        let n = mesh.num_nodes();
        let rest = g.measure(&mesh, &vec![0.0; 3 * n]).unwrap();
        assert!(rest.length > 0.0 && rest.thickness > 0.0);
        // A uniform scaling by 0.9 shortens both by 10 %.
        let d: Vec<f64> = mesh.nodes.iter().flat_map(|x| (-0.1 * x).iter().copied().collect::<Vec<_>>()).collect();
        let s = g.measure(&mesh, &d).unwrap();
        assert!((fractional_shortening(rest.length, s.length) - 10.0).abs() < 1e-9);
        assert!((wall_thickening(rest.thickness, s.thickness) + 10.0).abs() < 1e-9);
    }
}
