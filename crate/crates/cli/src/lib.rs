//! `carom` command-line front end.

mod error;
pub mod serve;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use carom_core::calib::file::{format_heightfield, load_calibration, CalibrationFile, MapFile, PointsFile};
use carom_core::calib::{calibrate, Calibration};
use carom_core::config::PipelineConfig;
use carom_core::io::{read_json, read_jsonl, write_json, write_jsonl};
use carom_core::scene::{Scene, SceneService};
use carom_core::shape::{
    build_prior, histogram_to_voxels, mesh_from_voxels, reconstruct_shapes, synthetic_models, CameraStream,
    ModelVector, ShapePrior, ShapeRecord,
};
use carom_core::synth::{evaluate, generate, Scenario, TruthRecord};
use carom_core::track::{write_csv, DetectionRecord, StateRecord, Tracker};
use carom_core::TypeDimensionPrior;
use clap::{Parser, Subcommand, ValueEnum};

pub use error::{CliError, EXIT_FAILED, EXIT_FILE, EXIT_SCHEMA, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "carom", version, about = "Traffic-camera vehicle localization, tracking and scene replay")]
pub struct Cli {
    /// Pipeline configuration (JSON); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Benchmark,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Camera calibration from labelled image/map correspondences.
    Calibrate {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Track vehicles in one camera's detection stream.
    Track {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Seconds per frame.
        #[arg(long)]
        frame_dt: Option<f64>,
        /// Dimension ranges per vehicle type (JSON); defaults to the bundled table.
        #[arg(long)]
        dims: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build a shape prior from model histograms, or from synthetic models.
    Prior {
        /// JSON-lines model vectors; synthetic models when absent.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reconstruct one shape per track from one or more cameras.
    Shape {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        detections: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        calibs: Vec<PathBuf>,
        /// Shape prior; built from synthetic models when absent.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Write one OBJ mesh per track here.
        #[arg(long)]
        mesh_dir: Option<PathBuf>,
    },
    /// Assemble a scene file from tracks, shapes and a calibration.
    Scene {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        shapes: Option<PathBuf>,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        backdrop: Option<PathBuf>,
        #[arg(long)]
        frame_dt: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Serve a scene over HTTP.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write a scene's track records.
    Export {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ExportFormat,
        /// Standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate detections and ground truth for a synthetic scenario.
    Synth {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the scenario camera's exact calibration.
        #[arg(long)]
        calib_out: Option<PathBuf>,
        /// Write the effective scenario.
        #[arg(long)]
        scenario_out: Option<PathBuf>,
    },
    /// Score tracker output against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the effective configuration.
    Config {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

type Result<T> = std::result::Result<T, CliError>;

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|e| CliError::io(path, e))
}

fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(path).map_err(|e| CliError::io(path, e))
}

fn write_json_file<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value).map_err(|e| CliError::io(path, e))
}

fn write_jsonl_file<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_jsonl(path, items).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}

fn load_calib(path: &Path) -> Result<Calibration> {
    load_calibration(path).map_err(|e| CliError::calib(path, e))
}

fn load_prior(path: Option<&Path>, cfg: &PipelineConfig) -> Result<ShapePrior<f64>> {
    match path {
        Some(p) => read_json_file(p),
        None => synthetic_prior(cfg),
    }
}

fn synthetic_prior(cfg: &PipelineConfig) -> Result<ShapePrior<f64>> {
    let n = cfg.shape.bins;
    let models = synthetic_models(cfg.seed, cfg.prior.models, n, n);
    Ok(build_prior(models, n, n, cfg.shape.components)?)
}

pub fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

/// Runs one subcommand; human-readable output goes to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    let mut cfg = effective_config(&cli)?;
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cli.command {
        Command::Calibrate { points, map, output } => {
            let pts: PointsFile = read_json_file(&points)?;
            let mf: MapFile = read_json_file(&map)?;
            let pairs = pts.pairs().map_err(|e| CliError::calib(&points, e))?;
            let size = (pts.image_size[0], pts.image_size[1]);
            let mut cal = calibrate(size, &pairs, &mf.frame, cfg.calib.max_rms_px).map_err(|e| CliError::calib(&points, e))?;
            let base = map.parent().unwrap_or(Path::new("."));
            let heightfield = match &mf.heightfield {
                Some(h) => {
                    let path = absolute(&base.join(h))?;
                    let surface = carom_core::calib::file::read_heightfield(&path).map_err(|e| CliError::calib(&path, e))?;
                    let rms = cal.reprojection_rms;
                    cal = Calibration::with_heightfield(cal.camera, cal.map, &surface).map_err(|e| CliError::calib(&path, e))?;
                    cal.reprojection_rms = rms;
                    Some(path)
                }
                None => None,
            };
            let backdrop = mf.backdrop.as_ref().map(|b| absolute(&base.join(b))).transpose()?;
            let file = CalibrationFile::from_calibration(&cal, heightfield, backdrop);
            carom_core::calib::file::write_calibration(&output, &file).map_err(|e| CliError::calib(&output, e))?;
            say(out, format!("reprojection RMS {:.4} px over {} points", cal.reprojection_rms, pairs.len()));
        }
        Command::Track {
            calib,
            detections,
            frame_dt,
            dims,
            output,
            csv,
        } => {
            if let Some(dt) = frame_dt {
                cfg.track.frame_dt = dt;
                cfg.validate()?;
            }
            let cal = load_calib(&calib)?;
            let prior = match dims {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                    TypeDimensionPrior::from_json(&text).map_err(|e| CliError::Schema {
                        path: p.clone(),
                        message: e.to_string(),
                    })?
                }
                None => TypeDimensionPrior::builtin(),
            };
            let dets: Vec<DetectionRecord> = read_jsonl_file(&detections)?;
            let mut tracker = Tracker::new(cal, cfg.geom.clone(), cfg.track.clone(), prior);
            let records = tracker.run(&dets)?;
            write_jsonl_file(&output, &records)?;
            if let Some(p) = csv {
                write_csv_file(&p, &records)?;
            }
            say(
                out,
                format!("{} records, {} tracks", records.len(), tracker.tracks().len()),
            );
        }
        Command::Prior { models, output } => {
            let n = cfg.shape.bins;
            let prior = match models {
                Some(p) => {
                    let m: Vec<ModelVector<f64>> = read_jsonl_file(&p)?;
                    build_prior(m, n, n, cfg.shape.components)?
                }
                None => synthetic_prior(&cfg)?,
            };
            write_json_file(&output, &prior)?;
            say(out, format!("{} models, {} components", prior.models.len(), prior.components));
        }
        Command::Shape {
            tracks,
            detections,
            calibs,
            prior,
            output,
            mesh_dir,
        } => {
            if detections.len() != calibs.len() {
                return Err(CliError::Usage(format!(
                    "{} detection files but {} calibrations",
                    detections.len(),
                    calibs.len()
                )));
            }
            let records: Vec<StateRecord> = read_jsonl_file(&tracks)?;
            let cals = calibs.iter().map(|c| load_calib(c)).collect::<Result<Vec<_>>>()?;
            let dets = detections
                .iter()
                .map(|d| read_jsonl_file::<DetectionRecord>(d))
                .collect::<Result<Vec<_>>>()?;
            let streams: Vec<CameraStream> = cals
                .iter()
                .zip(&dets)
                .map(|(calibration, detections)| CameraStream { calibration, detections })
                .collect();
            let prior = load_prior(prior.as_deref(), &cfg)?;
            let shapes = reconstruct_shapes(&records, &streams, &prior, &cfg.shape)?;
            write_json_file(&output, &shapes)?;
            if let Some(dir) = mesh_dir {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                for s in &shapes {
                    write_mesh(&dir, s, &prior, cfg.shape.voxel_size)?;
                }
            }
            let fitted = shapes.iter().filter(|s| s.views >= cfg.shape.min_views).count();
            say(out, format!("{} shapes, {} from views", shapes.len(), fitted));
        }
        Command::Scene {
            tracks,
            shapes,
            calib,
            prior,
            backdrop,
            frame_dt,
            output,
        } => {
            let calib = absolute(&calib)?;
            let dt = frame_dt.unwrap_or(cfg.track.frame_dt);
            let mut scene =
                Scene::from_files(&tracks, shapes.as_deref(), &calib, dt).map_err(|e| CliError::scene(&tracks, e))?;
            scene.prior = prior.map(|p| absolute(&p)).transpose()?;
            if let Some(b) = backdrop {
                scene.backdrop = Some(absolute(&b)?);
            }
            scene.save(&output).map_err(|e| CliError::scene(&output, e))?;
            say(
                out,
                format!("{} tracks, {:.2} s", scene.tracks.len(), scene.duration()),
            );
        }
        Command::Serve { scene, bind } => {
            let s = Scene::load(&scene).map_err(|e| CliError::scene(&scene, e))?;
            let prior = match &s.prior {
                Some(p) => {
                    let p = scene.parent().unwrap_or(Path::new(".")).join(p);
                    Some(read_json_file::<ShapePrior<f64>>(&p)?)
                }
                None => None,
            };
            let svc = Arc::new(SceneService::new(s, prior));
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .map_err(|e| CliError::Usage(format!("cannot bind {bind}: {e}")))?;
                let addr = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
                say(out, format!("listening on http://{addr}"));
                let _ = out.flush();
                axum::serve(listener, serve::router(svc))
                    .await
                    .map_err(|e| CliError::Failed(e.to_string()))
            })?;
        }
        Command::Export { scene, format, output } => {
            let s = Scene::load(&scene).map_err(|e| CliError::scene(&scene, e))?;
            let records: Vec<StateRecord> = s.tracks.values().flatten().cloned().collect();
            let mut buf = Vec::new();
            let res = match format {
                ExportFormat::Csv => write_csv(&mut buf, &records),
                ExportFormat::Jsonl => carom_core::io::to_jsonl(&mut buf, &records),
            };
            res.map_err(|e| CliError::Failed(e.to_string()))?;
            match output {
                Some(p) => std::fs::write(&p, &buf).map_err(|e| CliError::io(&p, e))?,
                None => match out.write_all(&buf) {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(CliError::Failed(e.to_string())),
                    _ => {}
                },
            }
        }
        Command::Synth {
            scenario,
            preset,
            output,
            truth,
            calib_out,
            scenario_out,
        } => {
            let mut sc = match (scenario, preset) {
                (Some(p), _) => read_json_file::<Scenario>(&p)?,
                (None, Some(Preset::Benchmark)) => Scenario::benchmark(cfg.seed),
                (None, None) => return Err(CliError::Usage("need --scenario or --preset".into())),
            };
            if let Some(seed) = cli.seed {
                sc.seed = seed;
            }
            let gen = generate(&sc)?;
            write_jsonl_file(&output, &gen.detections)?;
            write_jsonl_file(&truth, &gen.truth)?;
            if let Some(p) = calib_out {
                write_scenario_calibration(&p, &sc)?;
            }
            if let Some(p) = scenario_out {
                write_json_file(&p, &sc)?;
            }
            say(
                out,
                format!(
                    "{} frames, {} detections, {} truth records",
                    sc.frames,
                    gen.detections.len(),
                    gen.truth.len()
                ),
            );
        }
        Command::Eval { pred, truth, output } => {
            let p: Vec<StateRecord> = read_jsonl_file(&pred)?;
            let t: Vec<TruthRecord> = read_jsonl_file(&truth)?;
            let report = evaluate(&p, &t, &cfg.eval)?;
            write_json_file(&output, &report)?;
            let _ = write!(out, "{}", report.table());
        }
        Command::Config { output } => {
            let text = cfg.to_json();
            match output {
                Some(p) => write_text(&p, &text)?,
                None => {
                    let _ = write!(out, "{text}");
                }
            }
        }
    }
    Ok(())
}

fn write_csv_file(path: &Path, records: &[StateRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, records).map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

fn write_mesh(dir: &Path, s: &ShapeRecord, prior: &ShapePrior<f64>, dz: f64) -> Result<()> {
    let hist = s.shape.histogram(prior, s.dims)?;
    let grid = histogram_to_voxels(&hist, dz)?;
    let mesh = mesh_from_voxels(&grid)?;
    write_text(&dir.join(format!("track_{}.obj", s.track_id)), &mesh.to_obj())
}

/// Calibration file for the scenario camera; a heightfield ground is written
/// beside it.
fn write_scenario_calibration(path: &Path, sc: &Scenario) -> Result<()> {
    let cal = sc.calibration()?;
    let heightfield = match sc.heightfield()? {
        Some(hf) => {
            let hp = path.with_extension("height.txt");
            write_text(&hp, &format_heightfield(&hf))?;
            Some(PathBuf::from(hp.file_name().expect("file name")))
        }
        None => None,
    };
    let file = CalibrationFile::from_calibration(&cal, heightfield, None);
    carom_core::calib::file::write_calibration(path, &file).map_err(|e| CliError::calib(path, e))
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
