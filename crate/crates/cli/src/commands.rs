use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use penmentor::config::{ConfigError, ExperimentConfig};
use penmentor::corpus::{builtin_character_set, load_character_set, CharacterSet};
use penmentor::experiment::{build_roster, run_assignment, run_experiment, Assignment};
use penmentor::gmm::{fit_gmm_with, EmOptions, GmmModel, StyleDataset};
use penmentor::gmrgp::{generate_training_waypoints, GenerateOptions};
use penmentor::report::emit_report;
use penmentor::scalar::Mat2;
use penmentor::seed::derive_seed;
use penmentor::trajectory::WaypointSeq;
use penmentor::viapoint::{extract_character_via_points, ViaPointOptions};
use serde::Serialize;
use tracing::info;

use crate::{ConfigArg, ExperimentArgs, FitStyleArgs, GenerateArgs, ServeArgs, SessionArgs};

pub const TEACHING_FORMAT: &str = "penmentor-teaching";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, inputs or configuration.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    match &arg.config {
        Some(path) => {
            info!(path = %path.display(), "loading config");
            Ok(ExperimentConfig::load(path)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_characters(explicit: Option<&Path>, cfg: &ExperimentConfig) -> Result<CharacterSet<f64>> {
    match explicit.or(cfg.characters.as_deref()) {
        Some(path) => load_character_set(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display()))),
        None => Ok(builtin_character_set()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
            }
            fs::write(path, text).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
            info!(path = %path.display(), "wrote");
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.write_all(b"\n"))
                .map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

/// A stroke file, re-validated since deserialization skips the checks.
fn read_stroke(path: &Path) -> Result<WaypointSeq<f64>> {
    let invalid = |m: String| CliError::Invalid(format!("{}: {m}", path.display()));
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let raw: WaypointSeq<f64> = serde_path_to_error::deserialize(de).map_err(|e| invalid(e.to_string()))?;
    WaypointSeq::new(raw.timestamps().to_vec(), raw.points().to_vec()).map_err(|e| invalid(e.to_string()))
}

pub fn fit_style(args: &FitStyleArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let writings = args.inputs.iter().map(|p| read_stroke(p)).collect::<Result<Vec<_>>>()?;
    let data = StyleDataset::from_writings(writings.iter());
    info!(writings = writings.len(), samples = data.len(), z = args.z, "fitting style model");
    let opts = EmOptions {
        max_iterations: cfg.style.max_iterations,
        relative_tolerance: cfg.style.relative_tolerance,
        cov_floor: cfg.style.cov_floor,
        ..EmOptions::default()
    };
    let fit = fit_gmm_with(&data, args.z as usize, args.seed, &opts).map_err(|e| CliError::Invalid(e.to_string()))?;
    info!(
        iterations = fit.iterations,
        converged = fit.converged,
        components = fit.model.components(),
        "fit done"
    );
    write_output(args.out.as_ref(), &fit.model.to_json())
}

#[derive(Serialize)]
struct TeachingFile {
    format: &'static str,
    version: u32,
    character: String,
    seed: u64,
    metadata: TeachingMetadata,
    strokes: Vec<TeachingStroke>,
}

#[derive(Serialize)]
struct TeachingMetadata {
    h: usize,
    interior_via_points: usize,
    via_points: Vec<ViaPointRow>,
}

#[derive(Serialize)]
struct ViaPointRow {
    stroke: usize,
    index: usize,
    t: f64,
    x: f64,
    y: f64,
    interior: bool,
}

#[derive(Serialize)]
struct TeachingStroke {
    timestamps: Vec<f64>,
    points: Vec<[f64; 2]>,
    /// Posterior standard deviation per axis.
    band: Vec<[f64; 2]>,
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    if args.h == 0 {
        return Err(CliError::Invalid("--h must be at least 1".into()));
    }
    let cfg = load_config(&args.config)?;
    let characters = load_characters(args.characters.as_deref(), &cfg)?;
    let character = characters
        .get(&args.character)
        .ok_or_else(|| CliError::Invalid(format!("unknown character {:?}", args.character)))?;
    let models = args
        .style_models
        .iter()
        .map(|p| GmmModel::from_json(&read(p)?).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    let strokes = character.stroke_count();
    if models.len() != 1 && models.len() != strokes {
        return Err(CliError::Invalid(format!(
            "{} style models given; {} has {strokes} strokes (pass one model or one per stroke)",
            models.len(),
            character.id
        )));
    }
    let reference = character
        .reference_waypoints(cfg.n, cfg.stroke_duration, cfg.workspace())
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let opts = ViaPointOptions {
        mode: cfg.style.curvature,
        radius: None,
    };
    let via = extract_character_via_points(&reference, args.h, &opts).map_err(|e| CliError::Invalid(e.to_string()))?;
    let gen = GenerateOptions {
        length_scales: None,
        learner_noise: Mat2::identity() * cfg.style.learner_noise,
        via_noise: cfg.style.via_noise,
        cov_floor: cfg.style.cov_floor,
        sample: cfg.style.sample_teaching,
    };
    info!(character = %character.id, strokes, h = args.h, "generating");

    let mut rows = Vec::new();
    let mut out = Vec::with_capacity(strokes);
    for (j, (r, v)) in reference.iter().zip(&via).enumerate() {
        let model = &models[j.min(models.len() - 1)];
        let mut stroke_gen = gen.clone();
        if let Some(l) = cfg.style.length_scale {
            stroke_gen.length_scales = Some(vec![l; model.components()]);
        }
        let seed = derive_seed(args.seed, &[b"generate", &(j as u64).to_le_bytes()]);
        let empty = StyleDataset::new(Vec::new(), 0);
        let (waypoints, posterior) = generate_training_waypoints(model, v, &empty, r.timestamps(), seed, &stroke_gen)
            .map_err(|e| CliError::Runtime(format!("stroke {j}: {e}")))?;
        let last = v.entries.len() - 1;
        rows.extend(v.entries.iter().enumerate().map(|(i, e)| ViaPointRow {
            stroke: j,
            index: e.source_index,
            t: e.t,
            x: e.point.x,
            y: e.point.y,
            interior: i != 0 && i != last,
        }));
        out.push(TeachingStroke {
            timestamps: waypoints.timestamps().to_vec(),
            points: waypoints.points().iter().map(|p| [p.x, p.y]).collect(),
            band: posterior
                .covariances
                .iter()
                .map(|c| [c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt()])
                .collect(),
        });
    }
    let file = TeachingFile {
        format: TEACHING_FORMAT,
        version: 1,
        character: character.id.clone(),
        seed: args.seed,
        metadata: TeachingMetadata {
            h: args.h,
            interior_via_points: rows.iter().filter(|r| r.interior).count(),
            via_points: rows,
        },
        strokes: out,
    };
    write_output(args.out.as_ref(), &serde_json::to_string_pretty(&file).expect("teaching file serializes"))
}

pub fn session(args: &SessionArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let characters = load_characters(None, &cfg)?;
    if characters.get(&args.character).is_none() {
        return Err(CliError::Invalid(format!("unknown character {:?}", args.character)));
    }
    let roster = build_roster(&cfg, args.seed);
    let profile = roster.iter().find(|p| p.id == args.learner).ok_or_else(|| {
        let ids: Vec<&str> = roster.iter().map(|p| p.id.as_str()).collect();
        CliError::Invalid(format!("unknown learner {:?}; roster has {}", args.learner, ids.join(", ")))
    })?;
    let assignment = Assignment {
        master_seed: args.seed,
        learner: profile.id.clone(),
        character: args.character.clone(),
        method: args.method,
    };
    info!(learner = %profile.id, character = %args.character, method = %args.method, "running session");
    let summary = run_assignment(&assignment, profile, &characters, &cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_output(
        args.out.as_ref(),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let characters = load_characters(None, &cfg)?;
    info!(
        seeds = cfg.seeds.len(),
        learners = 3 * cfg.roster.per_level,
        characters = characters.len(),
        parallel = ?args.parallel,
        "running experiment"
    );
    let start = Instant::now();
    let report = run_experiment(&cfg, args.parallel.map(|n| n as usize)).map_err(|e| CliError::Runtime(e.to_string()))?;
    info!(sessions = report.sessions.len(), seconds = start.elapsed().as_secs_f64(), "experiment done");
    let files = emit_report(&report, &args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    for f in files {
        info!(path = %f.display(), "wrote");
    }
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let characters = load_characters(args.characters.as_deref(), &cfg)?;
    let service = match &args.events {
        Some(path) => {
            let s = penmentor_service::Service::open(cfg, characters, path)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            info!(path = %path.display(), sessions = s.session_ids().len(), "event log replayed");
            s
        }
        None => penmentor_service::Service::new(cfg, characters),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Runtime(format!("binding {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("listening on {local}");
        let _ = std::io::stdout().flush();
        info!(%local, "serving");
        penmentor_service::serve(listener, Arc::new(service), shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        info!("stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    info!("shutdown requested");
}
