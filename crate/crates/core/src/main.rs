use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use cardioem_core::circulation::{CircMode, CircState, Circulation};
use cardioem_core::electrophysiology::{activation_span, default_protocol, EpState, Monodomain, StimulusProtocol};
use cardioem_core::fibers::{AngleSet, FiberRule};
use cardioem_core::pipeline::{fiber_fields, Pipeline};
use cardioem_core::postio::vtk::{self, Field};
use cardioem_core::postio::{read_csv, write_report, Biomarkers, CsvLog, RunConfig};
use cardioem_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cardioem", version, about = "Biventricular electromechanics with a closed-loop circulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting parameter set: `full` or `desk`.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            c = c.overlay_file(path)?;
        }
        if let Some(out) = &self.out {
            c.output.dir = out.clone();
        }
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rule-based fibers on the mechanics mesh, written as VTK.
    Fibers {
        #[command(flatten)]
        common: Common,
        /// `d-rbm` or `r-rbm`.
        #[arg(long)]
        rule: Option<String>,
        /// TOML file with the rotation angles in degrees.
        #[arg(long)]
        angles: Option<PathBuf>,
    },
    /// Monodomain electrophysiology on the undeformed geometry.
    Ep {
        #[command(flatten)]
        common: Common,
        /// Keep the geometry fixed (the only supported mode).
        #[arg(long, default_value_t = true)]
        standalone: bool,
        /// Simulated time (ms).
        #[arg(long, default_value_t = 400.0)]
        duration: f64,
        /// Potential snapshot interval (ms); 0 disables snapshots.
        #[arg(long, default_value_t = 20.0)]
        snapshot_ms: f64,
    },
    /// Standalone closed-loop 0D circulation.
    Circulation {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        beats: usize,
        /// TOML file with circulation parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Time step (ms).
        #[arg(long, default_value_t = 0.5)]
        dt: f64,
    },
    /// Reference recovery and end-diastolic inflation.
    MechanicsInflate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// The full staged pipeline and recorded heartbeats.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
        /// Number of recorded beats (overrides the configuration).
        #[arg(long)]
        beats: Option<usize>,
    },
    /// Biomarkers from an existing step log.
    Postprocess {
        /// Directory holding steps.csv.
        #[arg(long)]
        dir: PathBuf,
        /// Heartbeat period (ms) used to select the last beat.
        #[arg(long, default_value_t = 800.0)]
        period: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fibers { common, rule, angles } => {
            let mut c = common.load()?;
            if let Some(rule) = rule {
                c = c.overlay(&format!("[fibers]\nrule = \"{rule}\"\n"))?;
            }
            if let Some(path) = angles {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                let a: AngleSet = toml::from_str(&text).map_err(|e| Error::Config {
                    line: None,
                    message: format!("{}: {}", path.display(), e.message()),
                })?;
                a.validate()?;
                c.fibers.angles = a;
            }
            fibers(&c)
        }
        Command::Ep {
            common,
            standalone,
            duration,
            snapshot_ms,
        } => {
            if !standalone {
                return Err(Error::InvalidParameter("coupled EP runs go through `simulate`".into()));
            }
            ep_standalone(&common.load()?, duration * 1e-3, snapshot_ms * 1e-3)
        }
        Command::Circulation {
            common,
            beats,
            params,
            dt,
        } => {
            let mut c = common.load()?;
            if let Some(path) = params {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config {
                    line: None,
                    message: format!("{}: {}", path.display(), e.message()),
                })?;
                let wrapped = toml::to_string(&toml::Table::from_iter([("circulation".to_string(), toml::Value::Table(table))]))
                    .map_err(|e| Error::Config { line: None, message: e.to_string() })?;
                c = c.overlay(&wrapped)?;
            }
            circulation(&c, beats, dt * 1e-3)
        }
        Command::MechanicsInflate { common, resume } => {
            let p = Pipeline::new(common.load()?, resume)?;
            p.write_geometry()?;
            let loaded = p.model.loaded_problem()?;
            let stage = p.recover(&loaded)?;
            info!("reference recovered, mismatch history {:?}", stage.history);
            let reference = stage.problem(&loaded)?;
            let inflated = p.inflate(&reference)?;
            let mesh = reference.mesh();
            vtk::write_volume(&p.dir().join("reference.vtk"), mesh, p.config_hash(), &[Field::displacement(&inflated.d)], &[])?;
            write_report(
                &p.dir().join("inflation.txt"),
                p.config_hash(),
                &[
                    ("p_ed_lv_Pa".into(), inflated.p[0]),
                    ("p_ed_rv_Pa".into(), inflated.p[1]),
                    ("v_ed_lv_mL".into(), inflated.volumes[0]),
                    ("v_ed_rv_mL".into(), inflated.volumes[1]),
                    ("recovery_iterations".into(), stage.history.len() as f64),
                ],
            )?;
            println!(
                "ED pressures {:.1} / {:.1} Pa, volumes {:.2} / {:.2} mL",
                inflated.p[0], inflated.p[1], inflated.volumes[0], inflated.volumes[1]
            );
            Ok(())
        }
        Command::Simulate { common, resume, beats } => {
            let mut c = common.load()?;
            if let Some(b) = beats {
                c.output.beats = b;
            }
            let p = Pipeline::new(c, resume)?;
            let s = p.run()?;
            let b = &s.biomarkers;
            println!(
                "EF LV {:.1} % RV {:.1} %, EDV {:.1} / {:.1} mL, peak p {:.1} / {:.1} mmHg ({:.0} s)",
                b.ef[0], b.ef[1], b.edv[0], b.edv[1], b.p_peak[0], b.p_peak[1], s.wall_seconds
            );
            println!("outputs in {}", p.dir().display());
            Ok(())
        }
        Command::Postprocess { dir, period } => postprocess(&dir, period * 1e-3),
    }
}

fn fibers(c: &RunConfig) -> Result<()> {
    let dir = &c.output.dir;
    create_dir(dir)?;
    let mesh = cardioem_core::geometry::build_geometry(&c.geometry)?;
    let (f, fields) = cardioem_core::fibers::generate_fibers(&mesh, c.fibers.rule, &c.fibers.angles)?;
    let hash = c.hash();
    vtk::write_volume(&dir.join("fibers.vtk"), &mesh, &hash, &fiber_fields(&f, &fields), &[])?;
    vtk::write_surface(&dir.join("surface.vtk"), &mesh, &hash)?;
    let rule = match c.fibers.rule {
        FiberRule::DRbm => "d-rbm",
        FiberRule::RRbm => "r-rbm",
    };
    println!(
        "{rule} fibers on {} nodes ({} apex fallbacks) written to {}",
        mesh.num_nodes(),
        f.fallback_nodes.len(),
        dir.display()
    );
    Ok(())
}

fn ep_standalone(c: &RunConfig, duration: f64, snapshot: f64) -> Result<()> {
    let dir = &c.output.dir;
    create_dir(dir)?;
    let hash = c.hash();
    let model = cardioem_core::pipeline::Model::build(c.clone())?;
    let protocol = StimulusProtocol {
        period: c.circulation.t_hb,
        ..default_protocol(&model.fine, &c.electrophysiology.pacing)
    };
    let ep = Monodomain::new(&model.fine, &model.fine_fibers, &model.fast_mask, c.electrophysiology.clone(), protocol)?;
    let mut state: EpState = ep.rest_state();
    let tau = c.electrophysiology.tau;
    let steps = (duration / tau).round() as usize;
    let every = if snapshot > 0.0 { (snapshot / tau).round().max(1.0) as usize } else { 0 };
    let cell = &c.electrophysiology.cell;
    for n in 1..=steps {
        ep.step(&mut state)?;
        if every > 0 && n % every == 0 {
            let path = dir.join(format!("ep_{:06}.vtk", n));
            vtk::write_volume(&path, &model.fine, &hash, &[Field::scalars("u_mV", state.u_mv(cell))], &[])?;
        }
    }
    vtk::write_volume(
        &dir.join("activation.vtk"),
        &model.fine,
        &hash,
        &[Field::scalars("activation_ms", state.activation_map_ms())],
        &[],
    )?;
    match activation_span(&state) {
        Some((a, b)) => println!("total activation time {:.1} ms", (b - a) * 1e3),
        None => println!("no node activated"),
    }
    Ok(())
}

fn circulation(c: &RunConfig, beats: usize, dt: f64) -> Result<()> {
    let dir = &c.output.dir;
    create_dir(dir)?;
    let circ = Circulation::new(c.circulation)?;
    let mut header: Vec<&str> = vec!["t_ms"];
    header.extend(CircState::NAMES);
    header.extend(["p_LA", "p_LV", "p_RA", "p_RV"]);
    let mut log = CsvLog::create(&dir.join("circulation.csv"), &header, &c.hash())?;
    let samples = circ.run(CircState::default(), beats, dt)?;
    for (t, s) in &samples {
        let o = circ.outputs(*t, s, CircMode::Standalone);
        let mut row = vec![t * 1e3];
        row.extend(s.to_array());
        row.extend([o.p_la, o.p_lv, o.p_ra, o.p_rv]);
        log.push(&row)?;
    }
    log.flush()?;
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        println!(
            "{} samples, total volume {:.4} -> {:.4} mL",
            samples.len(),
            first.1.total_volume(&c.circulation),
            last.1.total_volume(&c.circulation)
        );
    }
    Ok(())
}

fn postprocess(dir: &Path, period: f64) -> Result<()> {
    let table = read_csv(&dir.join("steps.csv"))?;
    let records = table.step_records()?;
    let t_end = records.last().map_or(0.0, |r| r.t);
    let last: Vec<_> = records.into_iter().filter(|r| r.t > t_end - period + 1e-9).collect();
    let b = Biomarkers::from_records(&last)?;
    let hash = table.config_hash.unwrap_or_default();
    write_report(&dir.join("postprocess.txt"), &hash, &b.entries())?;
    for (k, v) in b.entries() {
        println!("{k} = {v:.3}");
    }
    Ok(())
}
