//! End-to-end run: fibers, single-cell pre-run, reference recovery, ED
//! inflation, optional 3D-0D-3D limit-cycle acceleration, then the
//! recorded heartbeats. Every expensive stage is checkpointed in the
//! output directory and reused on resume when the configuration hash
//! matches.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::circulation::{CircState, Circulation};
use crate::coupling::sis::{Sis, SimState, StepRecord};
use crate::coupling::CoupledMechanics;
use crate::electrophysiology::{default_protocol, EpState, Monodomain, StimulusProtocol};
use crate::error::{Error, Result};
use crate::fibers::{fast_layer_mask, generate_fibers, DistanceFields, FiberField};
use crate::geometry::{build_geometry, interpolate_vectors_to_fine, uniform_refine, Mesh};
use crate::mechanics::MechanicsProblem;
use crate::postio::checkpoint;
use crate::postio::stress::{AxialStresses, Trace};
use crate::postio::vtk::{self, Field};
use crate::postio::{write_report, Biomarkers, CsvLog, RunConfig, WallGauge};
use crate::preflow::{
    cavity_volumes_ml, inflate_to_ed, limit_cycle_accelerate, recover_reference, single_cell_prerun, CellPrerun,
    ElastanceEmulator, Inflated,
};

/// Meshes and fibers of a configuration, before any solve.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: RunConfig,
    /// Loaded (imaged) geometry on the mechanics mesh.
    pub coarse: Mesh,
    pub coarse_fibers: FiberField,
    pub coarse_fields: DistanceFields,
    /// Once-refined electrophysiology mesh.
    pub fine: Mesh,
    pub fine_fibers: FiberField,
    pub fine_fields: DistanceFields,
    pub fast_mask: Vec<bool>,
}

impl Model {
    pub fn build(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let coarse = build_geometry(&config.geometry)?;
        let fine = uniform_refine(&coarse);
        let (coarse_fibers, coarse_fields) = generate_fibers(&coarse, config.fibers.rule, &config.fibers.angles)?;
        let (fine_fibers, fine_fields) = generate_fibers(&fine, config.fibers.rule, &config.fibers.angles)?;
        let fast_mask = fast_layer_mask(&fine_fields, config.electrophysiology.fast_threshold)?;
        Ok(Self {
            config,
            coarse,
            coarse_fibers,
            coarse_fields,
            fine,
            fine_fibers,
            fine_fields,
            fast_mask,
        })
    }

    /// Mechanics on the loaded geometry.
    pub fn loaded_problem(&self) -> Result<MechanicsProblem> {
        MechanicsProblem::new(
            self.coarse.clone(),
            self.coarse_fibers.at_quadrature(&self.coarse),
            &self.coarse_fields.xi_hat,
            self.config.mechanics.material,
            self.config.mechanics.base_bc,
        )
    }

    /// Staggered driver on the given reference configuration.
    pub fn sis(&self, reference: MechanicsProblem) -> Result<Sis> {
        let c = &self.config;
        let fine_nodes = interpolate_vectors_to_fine(&self.coarse, &self.fine, &reference.mesh().nodes)?;
        let fine_ref = self.fine.with_nodes(fine_nodes)?;
        let protocol = StimulusProtocol {
            period: c.circulation.t_hb,
            ..default_protocol(&fine_ref, &c.electrophysiology.pacing)
        };
        let ep = Monodomain::new(&fine_ref, &self.fine_fibers, &self.fast_mask, c.electrophysiology.clone(), protocol)?;
        let mut mech = CoupledMechanics::new(reference)?;
        mech.options = c.coupling.saddle;
        Sis::new(
            c.coupling.sis,
            ep,
            c.activation,
            mech,
            Circulation::new(c.circulation)?,
            self.fine_fibers.f0.clone(),
            self.fine_fields.xi_hat.clone(),
        )
    }

    /// Initial coupled state at end diastole.
    pub fn initial_state(&self, sis: &Sis, cell: &CellPrerun, inflated: &Inflated) -> Result<SimState> {
        let ep = EpState::uniform(self.fine.num_nodes(), cell.u, &cell.w);
        sis.initial_state(0.0, inflated.d.clone(), inflated.p, CircState::default(), ep, cell.force)
    }
}

/// Recovered stress-free node positions and the mismatch history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStage {
    pub nodes: Vec<[f64; 3]>,
    pub history: Vec<f64>,
}

impl ReferenceStage {
    pub fn problem(&self, loaded: &MechanicsProblem) -> Result<MechanicsProblem> {
        loaded.with_nodes(self.nodes.iter().map(|p| Vector3::from(*p)).collect())
    }
}

/// Result of the coupled acceleration stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCycleStage {
    pub state: SimState,
    pub emulated_beats: usize,
    pub records: Vec<StepRecord>,
}

/// Everything produced by the recorded heartbeats.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<StepRecord>,
    /// Biomarkers of the last recorded beat.
    pub biomarkers: Biomarkers,
    /// Fiber, sheet and normal stress traces per step.
    pub stress: Vec<[Trace; 3]>,
    pub final_state: SimState,
    pub wall_seconds: f64,
}

/// Mid-run checkpoint of the recorded beats.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BeatsCheckpoint {
    state: SimState,
    records: Vec<StepRecord>,
    stress: Vec<[[f64; 3]; 3]>,
    beat_start_d: Vec<f64>,
    es: Option<(f64, Vec<f64>)>,
}

fn trace_array(t: &[Trace; 3]) -> [[f64; 3]; 3] {
    t.map(|x| [x.min, x.mean, x.max])
}

fn trace_from(a: &[[f64; 3]; 3]) -> [Trace; 3] {
    a.map(|x| Trace {
        min: x[0],
        mean: x[1],
        max: x[2],
    })
}

/// The staged workflow bound to an output directory.
#[derive(Debug)]
pub struct Pipeline {
    pub model: Model,
    hash: String,
    dir: PathBuf,
    resume: bool,
}

impl Pipeline {
    /// Builds the model and prepares `config.output.dir`. With `resume`,
    /// stage checkpoints written under the same configuration are reused.
    pub fn new(config: RunConfig, resume: bool) -> Result<Self> {
        let hash = config.hash();
        let dir = config.output.dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let text = config.to_toml_string()?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
        let model = Model::build(config)?;
        Ok(Self {
            model,
            hash,
            dir,
            resume,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn stage_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.ckpt"))
    }

    fn cached<T: Serialize + DeserializeOwned>(&self, name: &str, compute: impl FnOnce() -> Result<T>) -> Result<T> {
        let path = self.stage_path(name);
        if self.resume && path.exists() {
            match checkpoint::load(&path, name, Some(&self.hash)) {
                Ok(v) => {
                    info!("stage {name}: reusing {}", path.display());
                    return Ok(v);
                }
                Err(e) => info!("stage {name}: checkpoint not reusable ({e}), recomputing"),
            }
        }
        let t = Instant::now();
        let v = compute()?;
        checkpoint::save(&path, name, &self.hash, &v)?;
        info!("stage {name}: done in {:.1} s", t.elapsed().as_secs_f64());
        Ok(v)
    }

    /// Writes fiber and mesh files for the mechanics mesh.
    pub fn write_geometry(&self) -> Result<()> {
        let m = &self.model;
        vtk::write_volume(
            &self.dir.join("fibers.vtk"),
            &m.coarse,
            &self.hash,
            &fiber_fields(&m.coarse_fibers, &m.coarse_fields),
            &[],
        )?;
        vtk::write_surface(&self.dir.join("surface.vtk"), &m.coarse, &self.hash)
    }

    pub fn prerun(&self) -> Result<CellPrerun> {
        let c = &self.model.config;
        self.cached("prerun", || {
            let opts = crate::preflow::PrerunOptions {
                period: c.circulation.t_hb,
                ..c.preflow.prerun
            };
            single_cell_prerun(&c.electrophysiology.cell, &c.activation, &opts)
        })
    }

    pub fn recover(&self, loaded: &MechanicsProblem) -> Result<ReferenceStage> {
        let c = &self.model.config;
        self.cached("reference", || {
            let r = recover_reference(loaded, &c.preflow.residual, &c.preflow.recovery)?;
            Ok(ReferenceStage {
                nodes: r.problem.mesh().nodes.iter().map(|p| [p.x, p.y, p.z]).collect(),
                history: r.history,
            })
        })
    }

    pub fn inflate(&self, reference: &MechanicsProblem) -> Result<Inflated> {
        let c = &self.model.config;
        self.cached("inflation", || inflate_to_ed(reference, c.preflow.ed_volumes, &c.preflow.inflation))
    }

    /// Runs the stages up to and including ED inflation and returns the
    /// coupled driver with its initial state.
    pub fn prepare(&self) -> Result<(Sis, SimState)> {
        self.write_geometry()?;
        let cell = self.prerun()?;
        let loaded = self.model.loaded_problem()?;
        let reference = self.recover(&loaded)?.problem(&loaded)?;
        let inflated = self.inflate(&reference)?;
        let sis = self.model.sis(reference)?;
        let state = self.model.initial_state(&sis, &cell, &inflated)?;
        Ok((sis, state))
    }

    /// Coupled beats followed by an all-0D run with elastance emulators
    /// fitted to them. Only the circulation state is replaced.
    pub fn vcycle(&self, sis: &mut Sis, state: SimState) -> Result<SimState> {
        let c = &self.model.config;
        let beats = c.preflow.emulator_beats;
        if beats == 0 {
            return Ok(state);
        }
        let stage = self.cached("vcycle", || {
            let mut state = state.clone();
            let mut records = Vec::new();
            for _ in 0..beats {
                records.extend(run_beat(sis, &mut state)?);
            }
            let period = c.circulation.t_hb;
            let v0 = cavity_volumes_ml(&sis.mech.problem, &sis.mech.frame, &vec![0.0; sis.mech.problem.num_dofs()])?;
            let last: Vec<&StepRecord> = records.iter().filter(|r| r.t > state.t - period - 1e-9).collect();
            let fit = |k: usize| {
                let samples: Vec<(f64, f64, f64)> = last
                    .iter()
                    .map(|r| if k == 0 { (r.t, r.p_lv, r.v_lv) } else { (r.t, r.p_rv, r.v_rv) })
                    .collect();
                // The offset must stay below every recorded volume, or E(t)
                // changes sign during ejection.
                let esv = samples.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
                ElastanceEmulator::fit(&samples, v0[k].min(0.5 * esv), period, c.preflow.emulator_bins)
            };
            let coupled = sis.mech.problem.ventricles();
            let em: Vec<Option<ElastanceEmulator>> =
                (0..2).map(|k| coupled.contains(&k).then(|| fit(k)).transpose()).collect::<Result<_>>()?;
            let acc = limit_cycle_accelerate(
                &sis.circulation,
                [em[0].as_ref(), em[1].as_ref()],
                state.circ,
                state.t,
                &c.preflow.acceleration,
            )?;
            info!("limit cycle reached after {} emulated beats", acc.beats);
            let mut circ = acc.state;
            let v = sis.mech.volumes(&state.d)?;
            if coupled.contains(&0) {
                circ.v_lv = v[0] * 1e6;
            }
            if coupled.contains(&1) {
                circ.v_rv = v[1] * 1e6;
            }
            state.circ = circ;
            Ok(VCycleStage {
                state,
                emulated_beats: acc.beats,
                records,
            })
        })?;
        Ok(stage.state)
    }

    /// Full workflow: preparation, acceleration and the recorded beats
    /// with CSV, VTK, checkpoint and report output.
    pub fn run(&self) -> Result<RunSummary> {
        let (mut sis, state) = self.prepare()?;
        let state = self.vcycle(&mut sis, state)?;
        self.record_beats(&mut sis, state)
    }

    /// Runs `output.beats` heartbeats from `state`, writing outputs.
    pub fn record_beats(&self, sis: &mut Sis, state: SimState) -> Result<RunSummary> {
        let started = Instant::now();
        let c = &self.model.config;
        let out = &c.output;
        let period = c.circulation.t_hb;
        let steps_per_beat = (period / c.coupling.sis.dt).round() as u64;
        let ckpt_path = self.stage_path("beats");
        let mut ck = BeatsCheckpoint {
            beat_start_d: state.d.clone(),
            state,
            records: Vec::new(),
            stress: Vec::new(),
            es: None,
        };
        if self.resume && ckpt_path.exists() {
            if let Ok(saved) = checkpoint::load::<BeatsCheckpoint>(&ckpt_path, "beats", Some(&self.hash)) {
                info!("resuming recorded beats at step {}", saved.records.len());
                ck = saved;
                ck.state.ep.restart_history();
            }
        }
        let total = steps_per_beat * out.beats as u64;

        let mut log = CsvLog::steps(&self.dir.join("steps.csv"), &self.hash)?;
        let mut stress_log = CsvLog::create(&self.dir.join("stress.csv"), &STRESS_HEADER, &self.hash)?;
        for (r, s) in ck.records.iter().zip(&ck.stress) {
            log.push(&r.row())?;
            stress_log.push(&stress_row(r.t, s))?;
        }
        let snap_dir = self.dir.join("snapshots");
        if out.snapshot_every > 0 {
            std::fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
        }

        while (ck.records.len() as u64) < total {
            let k = ck.records.len() as u64;
            if k % steps_per_beat == 0 {
                ck.state.ep.reset_activation();
                ck.beat_start_d = ck.state.d.clone();
                ck.es = None;
            }
            let rec = sis.step(&mut ck.state)?;
            let ta = sis.coarse_tension(&ck.state.force)?;
            let stresses = AxialStresses::compute(&sis.mech.problem, &ck.state.d, &ta)?;
            let traces = stresses.traces();
            log.push(&rec.row())?;
            stress_log.push(&stress_row(rec.t, &trace_array(&traces)))?;
            if ck.es.as_ref().is_none_or(|(v, _)| rec.v_lv < *v) {
                ck.es = Some((rec.v_lv, ck.state.d.clone()));
            }
            ck.records.push(rec);
            ck.stress.push(trace_array(&traces));
            let n = ck.records.len();
            if out.snapshot_every > 0 && n % out.snapshot_every == 0 {
                self.snapshot(sis, &ck.state, &stresses, &snap_dir.join(format!("step_{n:06}.vtk")))?;
            }
            if out.checkpoint_every > 0 && n % out.checkpoint_every == 0 {
                log.flush()?;
                stress_log.flush()?;
                checkpoint::save(&ckpt_path, "beats", &self.hash, &ck)?;
            }
        }
        log.flush()?;
        stress_log.flush()?;
        checkpoint::save(&ckpt_path, "beats", &self.hash, &ck)?;

        let last_beat = &ck.records[ck.records.len().saturating_sub(steps_per_beat as usize)..];
        let mut biomarkers = Biomarkers::from_records(last_beat)?.with_activation(&ck.state.ep);
        if let Some((_, d_es)) = &ck.es {
            let mesh = sis.mech.problem.mesh();
            if let Ok(gauge) = WallGauge::new(mesh, &self.model.coarse_fields.psi) {
                biomarkers = biomarkers.with_shape(gauge.measure(mesh, &ck.beat_start_d)?, gauge.measure(mesh, d_es)?);
            }
        }
        let mut entries = biomarkers.entries();
        let max_res = ck.records.iter().map(|r| r.volume_residual).fold(0.0, f64::max);
        let mean_it = ck.records.iter().map(|r| r.newton_iterations as f64).sum::<f64>() / ck.records.len().max(1) as f64;
        entries.push(("max_volume_residual_mL".into(), max_res));
        entries.push(("mean_newton_iterations".into(), mean_it));
        entries.push(("beats".into(), out.beats as f64));
        write_report(&self.dir.join("report.txt"), &self.hash, &entries)?;

        Ok(RunSummary {
            stress: ck.stress.iter().map(trace_from).collect(),
            records: ck.records,
            biomarkers,
            final_state: ck.state,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn snapshot(&self, sis: &Sis, state: &SimState, stresses: &AxialStresses, path: &Path) -> Result<()> {
        let m = &self.model;
        let problem = &sis.mech.problem;
        let mut points = vec![Field::displacement(&state.d)];
        points.extend(fiber_fields(&m.coarse_fibers, &m.coarse_fields).into_iter().take(3));
        let u = crate::geometry::restrict_to_coarse(&m.coarse, &m.fine, &state.ep.u)?;
        let act = crate::geometry::restrict_to_coarse(&m.coarse, &m.fine, &state.ep.activation_map_ms())?;
        points.push(Field::scalars("u", u));
        points.push(Field::scalars("activation_ms", act));
        let j: Vec<f64> = problem
            .stresses(&state.d, &sis.coarse_tension(&state.force)?)?
            .iter()
            .map(|q| q.iter().map(|(f, _)| f.determinant()).sum::<f64>() / 8.0)
            .collect();
        let cells = vec![
            Field::scalars("J", j),
            Field::scalars("sigma_ff", AxialStresses::element_means(&stresses.ff)),
            Field::scalars("sigma_ss", AxialStresses::element_means(&stresses.ss)),
            Field::scalars("sigma_nn", AxialStresses::element_means(&stresses.nn)),
        ];
        let reference = problem.mesh();
        vtk::write_volume(path, reference, &self.hash, &points, &cells)
    }
}

const STRESS_HEADER: [&str; 10] = [
    "t_ms",
    "sigma_ff_min_kPa",
    "sigma_ff_mean_kPa",
    "sigma_ff_max_kPa",
    "sigma_ss_min_kPa",
    "sigma_ss_mean_kPa",
    "sigma_ss_max_kPa",
    "sigma_nn_min_kPa",
    "sigma_nn_mean_kPa",
    "sigma_nn_max_kPa",
];

fn stress_row(t: f64, s: &[[f64; 3]; 3]) -> Vec<f64> {
    std::iter::once(t * 1e3).chain(s.iter().flatten().map(|v| v * 1e-3)).collect()
}

/// FIBERS, SHEETS and NORMALS vectors followed by the distance fields.
pub fn fiber_fields(fibers: &FiberField, fields: &DistanceFields) -> Vec<Field> {
    vec![
        Field::vectors("FIBERS", fibers.f0.clone()),
        Field::vectors("SHEETS", fibers.s0.clone()),
        Field::vectors("NORMALS", fibers.n0.clone()),
        Field::scalars("phi", fields.phi.clone()),
        Field::scalars("psi", fields.psi.clone()),
        Field::scalars("xi", fields.xi.clone()),
    ]
}

/// Advances one heartbeat and returns its step records.
pub fn run_beat(sis: &mut Sis, state: &mut SimState) -> Result<Vec<StepRecord>> {
    let steps = (sis.circulation.params.t_hb / sis.params.dt).round() as usize;
    state.ep.reset_activation();
    (0..steps).map(|_| sis.step(state)).collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometrySpec;
    use crate::postio::{read_csv, read_report};
    use crate::preflow::CellPrerun;

    fn tiny_config(dir: &std::path::Path) -> RunConfig {
        let mut c = RunConfig::desk();
        c.geometry = GeometrySpec::tiny_biventricle();
        c.output.dir = dir.to_path_buf();
        c.output.beats = 1;
        c.output.snapshot_every = 200;
        c.output.checkpoint_every = 400;
        c
    }

    #[test]
    fn tiny_pipeline_writes_outputs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let hash = config.hash();

        let first = Pipeline::new(config.clone(), false).unwrap().run().unwrap();
        let ef = first.biomarkers.ef;
        assert!(ef.iter().all(|e| e.is_finite() && *e > 0.0 && *e < 100.0), "{ef:?}");
        let res = first.records.iter().map(|r| r.volume_residual).fold(0.0, f64::max);
        assert!(res < 1e-3, "volume residual {res}");

        let steps = read_csv(&dir.path().join("steps.csv")).unwrap();
        assert_eq!(steps.config_hash.as_deref(), Some(hash.as_str()));
        assert_eq!(steps.rows.len(), first.records.len());
        let report = read_report(&dir.path().join("report.txt")).unwrap();
        assert!(report.contains(&("config_hash".to_string(), hash.clone())));

        let snaps: Vec<_> = std::fs::read_dir(dir.path().join("snapshots")).unwrap().collect();
        assert!(!snaps.is_empty());
        let snap = vtk::read(&snaps[0].as_ref().unwrap().path()).unwrap();
        assert!(snap.title.contains(&hash));
        assert!(snap.point_field("activation_ms").is_some());

        for stage in ["prerun", "reference", "inflation", "vcycle", "beats"] {
            assert!(dir.path().join(format!("{stage}.ckpt")).exists(), "{stage} checkpoint missing");
        }

        let resumed = Pipeline::new(config, true).unwrap().run().unwrap();
        assert_eq!(resumed.biomarkers.ef, ef);
        assert_eq!(resumed.records.len(), first.records.len());
    }

    #[test]
    fn resume_recomputes_stages_from_another_config() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        Pipeline::new(config.clone(), false).unwrap().prepare().unwrap();
        let prerun = dir.path().join("prerun.ckpt");
        assert!(checkpoint::load::<CellPrerun>(&prerun, "prerun", Some(&config.hash())).is_ok());

        let mut other = config.clone();
        other.circulation.t_hb = 0.9;
        Pipeline::new(other.clone(), true).unwrap().prepare().unwrap();
        assert!(checkpoint::load::<CellPrerun>(&prerun, "prerun", Some(&other.hash())).is_ok());
        assert!(checkpoint::load::<CellPrerun>(&prerun, "prerun", Some(&config.hash())).is_err());
    }
}
