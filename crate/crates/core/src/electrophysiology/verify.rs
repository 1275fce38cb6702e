//! Reference runs on a thin slab with fibers along x.

use nalgebra::Vector3;

use super::{EpParams, Monodomain, Stimulus, StimulusProtocol};
use crate::error::{Error, Result};
use crate::fibers::{AngleSet, FiberField, FiberRule};
use crate::geometry::{build_geometry, GeometrySpec, Mesh};

/// Uniform frame f0 = x, s0 = y, n0 = z.
pub fn axial_fibers(mesh: &Mesh) -> FiberField {
    let n = mesh.num_nodes();
    FiberField {
        f0: vec![Vector3::x(); n],
        s0: vec![Vector3::y(); n],
        n0: vec![Vector3::z(); n],
        rule: FiberRule::DRbm,
        angles: AngleSet::zero(),
        fallback_nodes: Vec::new(),
    }
}

/// Plane-wave conduction velocity (m/s) along the fibers of a slab of
/// length `length` with `cells` elements. Timed between the nodes nearest
/// to 1/4 and 3/4 of the length, so the stimulus transient is excluded.
pub fn slab_conduction_velocity(params: &EpParams, length: f64, cells: usize) -> Result<f64> {
    let thin = 0.5e-3;
    let mesh = build_geometry(&GeometrySpec::slab([length, thin, thin], [cells, 1, 1]))?;
    let fibers = axial_fibers(&mesh);
    let params = EpParams {
        fast_layer: false,
        ..params.clone()
    };
    let protocol = StimulusProtocol {
        stimuli: vec![Stimulus {
            center: [0.0; 3],
            radius: (length / 20.0).max(1.5 * length / cells as f64),
            start: 0.0,
            duration: params.pacing.duration,
            amplitude: params.pacing.amplitude,
        }],
        period: 0.0,
    };
    let mask = vec![false; mesh.num_nodes()];
    let ep = Monodomain::new(&mesh, &fibers, &mask, params, protocol)?;
    let probe = |x: f64| {
        (0..mesh.num_nodes())
            .min_by(|&a, &b| {
                let da = (mesh.nodes[a] - Vector3::new(x, 0.0, 0.0)).norm();
                let db = (mesh.nodes[b] - Vector3::new(x, 0.0, 0.0)).norm();
                da.total_cmp(&db)
            })
            .expect("nonempty mesh")
    };
    let (a, b) = (probe(0.25 * length), probe(0.75 * length));
    let mut state = ep.rest_state();
    let t_max = 1.0;
    while state.activation[b].is_none() {
        if state.t > t_max {
            return Err(Error::MissingData(format!("no propagation across the slab within {t_max} s")));
        }
        ep.step(&mut state)?;
    }
    let (ta, tb) = (state.activation[a].unwrap_or(0.0), state.activation[b].unwrap_or(0.0));
    Ok((mesh.nodes[b].x - mesh.nodes[a].x) / (tb - ta))
}

/// Largest nodal change of u over `steps` steps started at rest with no
/// stimulus.
pub fn resting_drift(mesh: &Mesh, params: &EpParams, steps: usize) -> Result<f64> {
    let fibers = axial_fibers(mesh);
    let mask = vec![false; mesh.num_nodes()];
    let ep = Monodomain::new(mesh, &fibers, &mask, params.clone(), StimulusProtocol::default())?;
    let mut state = ep.rest_state();
    let u0 = state.u.clone();
    for _ in 0..steps {
        ep.step(&mut state)?;
    }
    Ok(state
        .u
        .iter()
        .zip(&u0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
