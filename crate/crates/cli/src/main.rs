//! `seamforge` command line: every pipeline stage as a subcommand over files on disk,
//! plus `pipeline` for the whole chain.
//!
//! Exit codes: 0 success, 1 bad input (files, config, arguments), 2 internal failure.
//! Errors go to stderr as one JSON object. `SEAMFORGE_THREADS` sets the worker count.

mod outliers;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seamforge::eval::threshold_sweep;
use seamforge::geometry::PointCloud;
use seamforge::pcio::{
    atomic_write, format_significant, read_path_csv, read_ply, read_session, write_path_csv, write_ply, write_session,
};
use seamforge::pipeline::{
    denoise, detect, evaluate, plan_path, reconstruct, run, with_normals, PipelineConfig, Truth,
};
use seamforge::seam::SeamScores;
use seamforge::synth::{default_hand_eye, default_script, scan_session, Workpiece, WorkpieceKind, SCAN_DENSITY};
use seamforge::Error;
use serde_json::json;

const THREADS_ENV: &str = "SEAMFORGE_THREADS";

#[derive(Parser)]
#[command(name = "seamforge", version, about = "Scan reconstruction, seam detection and welding path planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON pipeline config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a synthetic workpiece with its bundled pose script into a session directory.
    Synth {
        #[arg(long)]
        kind: String,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Surface samples per m².
        #[arg(long, default_value_t = SCAN_DENSITY)]
        density: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Register and merge a session into one model.
    Reconstruct {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-frame registration report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Bilateral filtering, optionally after statistical outlier removal.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop points whose mean distance to their k nearest neighbors exceeds mean + 2 std.
        #[arg(long)]
        remove_outliers: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Edge detection; writes the edge points and per-point scores.
    Seam {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-point intensity, ratio and edge flag (CSV).
        #[arg(long)]
        debug: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Torch path from edge points and the model they were detected on.
    Path {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// F1 of edge points and pose RMSE of a path against a ground truth.
    Eval {
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Analytic truth of a synthetic workpiece.
        #[arg(long, conflicts_with = "truth_path")]
        workpiece: Option<String>,
        /// Truth path CSV; its positions double as seam points.
        #[arg(long)]
        truth_path: Option<PathBuf>,
        /// Cloud to score for a threshold sweep over t = 10, 20, ..., 100.
        #[arg(long, requires = "sweep_tsv")]
        sweep_cloud: Option<PathBuf>,
        #[arg(long)]
        sweep_tsv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Writes the default config, or the bundled one of a synthetic workpiece.
    Config {
        #[arg(long)]
        workpiece: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages on a session; writes every intermediate plus report and timings.
    Pipeline {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Lib(e) if e.is_input_error() => 1,
            CliError::Lib(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        if self.code() == 1 {
            "input"
        } else {
            "internal"
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Input(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = configure_threads().and_then(|_| execute(cli.command));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.message() }));
            ExitCode::from(e.code())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV}={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn load_config(arg: &ConfigArg) -> CliResult<Option<PipelineConfig>> {
    let Some(path) = &arg.config else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Some(PipelineConfig::from_json(&text)?))
}

fn config_or_default(arg: &ConfigArg) -> CliResult<PipelineConfig> {
    Ok(load_config(arg)?.unwrap_or_default())
}

fn parse_kind(s: &str) -> CliResult<WorkpieceKind> {
    Ok(s.parse::<WorkpieceKind>()?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    Ok(atomic_write(path, text.as_bytes())?)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth { kind, seed, density, out, config } => {
            let cfg = config_or_default(&config)?;
            let kind = parse_kind(&kind)?;
            let seed = seed.unwrap_or(cfg.seed);
            let w = Workpiece::new(kind);
            let session = scan_session(&w, &default_script(kind, seed), density, seed, &default_hand_eye())?;
            write_session(&session, &out)?;
        }
        Command::Reconstruct { session, out, report, config } => {
            let session = read_session(&session)?;
            let cfg = session_config(&config, &session)?;
            let rec = reconstruct(&session, &cfg)?;
            write_ply(&rec.model, &out)?;
            if let Some(report) = report {
                write_json(&report, &json!({ "frames": rec.frames, "model_points": rec.model.len() }))?;
            }
        }
        Command::Denoise { input, out, remove_outliers, config } => {
            let cfg = config_or_default(&config)?;
            let mut cloud = read_ply(&input)?;
            if remove_outliers {
                cloud = outliers::remove_statistical(&cloud, outliers::NEIGHBORS, outliers::STD_RATIO)?;
            }
            write_ply(&denoise(&cloud, &cfg)?, &out)?;
        }
        Command::Seam { input, out, debug, config } => {
            let cfg = config_or_default(&config)?;
            let cloud = normals_present(read_ply(&input)?, &cfg)?;
            let det = detect(&cloud, &cfg)?;
            write_ply(&cloud.select(&det.edges), &out)?;
            if let Some(debug) = debug {
                atomic_write(&debug, seam_debug_csv(&cloud, &det.scores).as_bytes())?;
            }
        }
        Command::Path { edges, model, out, config } => {
            let cfg = config_or_default(&config)?;
            let model = normals_present(read_ply(&model)?, &cfg)?;
            let planned = plan_path(&read_ply(&edges)?, &model, &cfg)?;
            write_path_csv(&planned.poses, &out)?;
        }
        Command::Eval { path, edges, workpiece, truth_path, sweep_cloud, sweep_tsv, out, config } => {
            let cfg = config_or_default(&config)?;
            let truth = match (workpiece, truth_path) {
                (Some(k), None) => Truth::for_workpiece(parse_kind(&k)?, &cfg)?,
                (None, Some(p)) => Truth::from_path(read_path_csv(&p)?),
                _ => return Err(CliError::Input("eval needs --workpiece or --truth-path".into())),
            };
            if path.is_none() && edges.is_none() && sweep_cloud.is_none() {
                return Err(CliError::Input("eval needs --path, --edges or --sweep-cloud".into()));
            }
            let edge_cloud = edges.as_deref().map(read_ply).transpose()?;
            let poses = path.as_deref().map(read_path_csv).transpose()?;
            let report = evaluate(edge_cloud.as_ref().map(|c| c.points()), poses.as_deref(), &truth, &cfg)?;
            let mut value = json!({ "seam": report.seam, "path": report.path });
            if let (Some(cloud), Some(tsv)) = (sweep_cloud, sweep_tsv) {
                let cloud = normals_present(read_ply(&cloud)?, &cfg)?;
                let det = detect(&cloud, &cfg)?;
                let ts: Vec<f64> = (1..=10).map(|k| 10.0 * k as f64).collect();
                let sweep = threshold_sweep(
                    cloud.points(),
                    &det.scores,
                    cfg.seam.roi.as_ref(),
                    &truth.seam_points,
                    &ts,
                    cfg.cell_size(),
                )?;
                atomic_write(&tsv, sweep.to_tsv().as_bytes())?;
                value["sweep"] = serde_json::to_value(&sweep).map_err(|e| CliError::Input(e.to_string()))?;
            }
            write_json(&out, &value)?;
        }
        Command::Config { workpiece, out } => {
            let cfg = match workpiece {
                Some(k) => PipelineConfig::for_workpiece(parse_kind(&k)?),
                None => PipelineConfig::default(),
            };
            atomic_write(&out, format!("{}\n", cfg.to_json()).as_bytes())?;
        }
        Command::Pipeline { session, out, config } => {
            let session = read_session(&session)?;
            let cfg = session_config(&config, &session)?;
            let result = run(&session, &cfg)?;
            ensure_dir(&out)?;
            write_ply(&result.model, &out.join("model.ply"))?;
            write_ply(&result.denoised, &out.join("denoised.ply"))?;
            write_ply(&result.edges, &out.join("edges.ply"))?;
            atomic_write(
                &out.join("seam_debug.csv"),
                seam_debug_csv(&result.denoised, &result.detection.scores).as_bytes(),
            )?;
            write_path_csv(&result.path.poses, &out.join("path.csv"))?;
            write_json(&out.join("report.json"), &result.report)?;
            write_json(&out.join("timings.json"), &result.timings)?;
        }
    }
    Ok(())
}

/// Explicit config, else the bundled settings of the workpiece named in the session, else defaults.
fn session_config(arg: &ConfigArg, session: &seamforge::pcio::ScanSession) -> CliResult<PipelineConfig> {
    if let Some(cfg) = load_config(arg)? {
        return Ok(cfg);
    }
    match session.metadata.get("workpiece").and_then(|v| v.as_str()) {
        Some(name) => Ok(PipelineConfig::for_workpiece(parse_kind(name)?)),
        None => Ok(PipelineConfig::default()),
    }
}

fn normals_present(cloud: PointCloud, cfg: &PipelineConfig) -> CliResult<PointCloud> {
    if cloud.has_normals() {
        Ok(cloud)
    } else {
        Ok(with_normals(&cloud, cfg)?)
    }
}

fn seam_debug_csv(cloud: &PointCloud, scores: &SeamScores) -> String {
    let mut s = String::from("index,x,y,z,intensity,ratio,edge\n");
    for (i, (p, e)) in cloud.points().iter().zip(&scores.scores).enumerate() {
        let ratio = if e.ratio.is_finite() { format_significant(e.ratio, 9) } else { "inf".into() };
        s.push_str(&format!(
            "{i},{},{},{},{},{ratio},{}\n",
            format_significant(p.x, 9),
            format_significant(p.y, 9),
            format_significant(p.z, 9),
            format_significant(e.intensity, 9),
            u8::from(e.is_edge)
        ));
    }
    s
}
