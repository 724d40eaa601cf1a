//! Command-line front end for the superquadric mapping toolkit.
//!
//! Four subcommands cover the full workflow:
//! - `run` simulates a scenario, feeds it through the mapping pipeline, and
//!   writes the map, per-landmark meshes, evaluation reports, and a run log.
//! - `fit` fits one superquadric to a point file and prints it as JSON.
//! - `eval` scores an exported map against ground-truth objects.
//! - `gen-scene` writes a scenario JSON file starting from a preset.
//!
//! Scenario and pipeline fields accept dotted override flags mirroring their
//! JSON paths, e.g. `--noise.point-sigma 0`, `--trajectory.n-frames 50`, or
//! `--pipeline.refit-interval 3`. Exit codes: 0 success, 1 usage error,
//! 2 data error, 3 numerical failure.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde_json::Value;

use sqmap_core::mapper::{
    eval_to_csv, eval_to_json, evaluate, map_from_json, map_to_json, EvalReport, FrameReport,
    PipelineConfig,
};
use sqmap_core::pose::{centroid, estimate_yaw_pca};
use sqmap_core::shape_fit::{fit_landmark, FitConfig, FitError};
use sqmap_core::sim::{
    benchmark_scenario, run_scenario, Scenario, SimError, TruthFile, SCENARIO_FORMAT_VERSION,
};
use sqmap_core::{write_ply, ObjectPose, Superquadric, IOU_MIN_SAMPLES};

/// Version stamp on the JSON printed by `fit`.
const FIT_FORMAT_VERSION: u32 = 1;

/// Mesh resolution for exported PLY surfaces.
const MESH_ETA: usize = 33;
const MESH_OMEGA: usize = 64;

/// A command failure, classified by the process exit code it maps to.
#[derive(Debug)]
enum CliError {
    /// Bad invocation: unknown or malformed flags. Exit 1.
    Usage(String),
    /// Bad input data: unreadable files or schema violations. Exit 2.
    Data(String),
    /// The computation itself broke down numerically. Exit 3.
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(
    name = "sqmap",
    version,
    about = "Superquadric object mapping: simulate scenes, fit bodies, evaluate maps",
    after_help = "Scenario and pipeline fields accept dotted overrides mirroring their JSON \
                  paths: `--noise.point-sigma 0`, `--trajectory.n-frames 50`, and \
                  `--pipeline.refit-interval 3` apply to run/gen-scene; `--fit.grid-steps 14` \
                  applies to fit. Values parse as JSON where possible, else as strings."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, run the mapping pipeline, and write artifacts.
    Run(RunArgs),
    /// Fit a single superquadric to a point file and print it as JSON.
    Fit(FitArgs),
    /// Score a map JSON against ground-truth objects by volumetric IoU.
    Eval(EvalArgs),
    /// Write a scenario JSON file starting from a named preset.
    GenScene(GenSceneArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file; defaults to the built-in five-object benchmark.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory for the map, meshes, evaluation, and log.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo samples per IoU evaluation.
    #[arg(long, default_value_t = 100_000)]
    eval_samples: usize,
    /// Seed for the IoU sampler.
    #[arg(long, default_value_t = 7)]
    eval_seed: u64,
    /// Also print per-frame progress lines to stdout.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Input points: whitespace/CSV XYZ rows or an ASCII PLY file.
    #[arg(long)]
    input: PathBuf,
    /// Object yaw in radians.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    yaw: f64,
    /// Estimate the yaw from the cloud's principal direction instead.
    #[arg(long, conflicts_with = "yaw")]
    auto_yaw: bool,
    /// Object center as "x,y,z"; defaults to the cloud centroid.
    #[arg(long, value_name = "X,Y,Z", allow_hyphen_values = true)]
    center: Option<String>,
    /// Also write the fitted surface as an ASCII PLY mesh.
    #[arg(long, value_name = "FILE")]
    mesh: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Map JSON produced by `run` (or compatible).
    #[arg(long)]
    map: PathBuf,
    /// Ground-truth JSON as written by `run`/`gen-scene`.
    #[arg(long)]
    truth: PathBuf,
    /// Monte-Carlo samples per IoU evaluation.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Seed for the IoU sampler.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct GenSceneArgs {
    /// Output scenario JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Starting point for the scenario (available: benchmark).
    #[arg(long, default_value = "benchmark")]
    preset: String,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the ground-truth bodies as JSON.
    #[arg(long, value_name = "FILE")]
    truth_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let (plain, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(plain) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and succeed; real parse
            // errors go to stderr and exit as usage failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args, &overrides),
        Command::Fit(args) => cmd_fit(args, &overrides),
        Command::Eval(args) => cmd_eval(args, &overrides),
        Command::GenScene(args) => cmd_gen_scene(args, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// Dotted override flags

/// One `--a.b.c value` override, with path segments normalized to JSON keys.
#[derive(Debug, Clone, PartialEq)]
struct Override {
    /// The flag path as typed, for error messages.
    raw: String,
    /// Dot-split segments with dashes mapped to underscores.
    segments: Vec<String>,
    /// Raw value text; parsed as JSON if possible, else taken as a string.
    value: String,
}

/// Pulls dotted-path flags (`--a.b 3` or `--a.b=3`) out of the raw argument
/// list before clap sees it. Everything else passes through untouched.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>), CliError> {
    let mut plain = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .map(|body| body.split('=').next().unwrap_or(body).contains('.'))
            .unwrap_or(false);
        if !dotted {
            plain.push(arg);
            continue;
        }
        let body = &arg[2..];
        let (path, value) = match body.split_once('=') {
            Some((p, v)) => (p.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{body} expects a value")))?;
                (body.to_string(), v)
            }
        };
        let segments: Vec<String> = path.split('.').map(|s| s.replace('-', "_")).collect();
        if segments.iter().any(String::is_empty) {
            return Err(CliError::Usage(format!("malformed override flag --{path}")));
        }
        overrides.push(Override { raw: path, segments, value });
    }
    Ok((plain, overrides))
}

/// Rejects overrides whose top segment is not recognized by `command`.
fn reject_unknown_overrides(
    overrides: &[Override],
    allowed: &[&str],
    command: &str,
) -> Result<(), CliError> {
    for ov in overrides {
        if !allowed.contains(&ov.segments[0].as_str()) {
            let hint = if allowed.is_empty() {
                String::from("takes no overrides")
            } else {
                format!("supports prefixes: {}", allowed.join(", "))
            };
            return Err(CliError::Usage(format!(
                "--{} does not apply to `{command}` ({hint})",
                ov.raw
            )));
        }
    }
    Ok(())
}

/// Applies every override whose first segment equals `top` to `doc`.
/// `strip_top` drops that segment before walking (used when the document
/// root already is the `top` object).
fn apply_matching(
    doc: &mut Value,
    overrides: &[Override],
    top: &str,
    strip_top: bool,
) -> Result<(), CliError> {
    for ov in overrides.iter().filter(|o| o.segments[0] == top) {
        let segments = if strip_top { &ov.segments[1..] } else { &ov.segments[..] };
        set_path(doc, segments, &ov.value)
            .map_err(|()| CliError::Usage(format!("unknown setting --{}", ov.raw)))?;
    }
    Ok(())
}

/// Walks `doc` along `segments` and replaces the existing leaf. Overrides
/// change values, never the shape of the document, so object keys must
/// already exist and array segments must be in-range indices.
fn set_path(doc: &mut Value, segments: &[String], raw_value: &str) -> Result<(), ()> {
    let (last, body) = segments.split_last().ok_or(())?;
    let mut cur = doc;
    for seg in body {
        cur = step_into(cur, seg).ok_or(())?;
    }
    let slot = step_into(cur, last).ok_or(())?;
    *slot = parse_override_value(raw_value);
    Ok(())
}

fn step_into<'a>(cur: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match cur {
        Value::Object(map) => map.get_mut(seg),
        Value::Array(arr) => seg.parse::<usize>().ok().and_then(|ix| arr.get_mut(ix)),
        _ => None,
    }
}

/// Values are JSON when they parse as JSON (numbers, booleans, arrays,
/// null), and plain strings otherwise, so `--trajectory.kind orbit` works
/// without quoting.
fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies scene/noise/trajectory overrides and the optional `--seed` flag
/// to a scenario document, then re-validates the result.
fn finish_scenario(
    mut doc: Value,
    overrides: &[Override],
    seed: Option<u64>,
    source: &str,
) -> Result<Scenario, CliError> {
    for top in ["scene", "noise", "trajectory"] {
        apply_matching(&mut doc, overrides, top, false)?;
    }
    let mut scenario: Scenario = serde_json::from_value(doc)
        .map_err(|e| CliError::Data(format!("invalid scenario ({source}): {e}")))?;
    if let Some(seed) = seed {
        scenario.scene.seed = seed;
    }
    scenario
        .validate()
        .map_err(|e| CliError::Data(format!("invalid scenario ({source}): {e}")))?;
    Ok(scenario)
}

/// Builds the pipeline configuration from defaults plus `--pipeline.*` flags.
fn pipeline_config(overrides: &[Override]) -> Result<PipelineConfig, CliError> {
    let mut doc = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    apply_matching(&mut doc, overrides, "pipeline", true)?;
    let cfg: PipelineConfig = serde_json::from_value(doc)
        .map_err(|e| CliError::Data(format!("invalid pipeline config: {e}")))?;
    cfg.validate().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// run

fn cmd_run(args: RunArgs, overrides: &[Override]) -> Result<(), CliError> {
    reject_unknown_overrides(overrides, &["scene", "noise", "trajectory", "pipeline"], "run")?;
    if args.eval_samples < IOU_MIN_SAMPLES {
        return Err(CliError::Usage(format!(
            "--eval-samples must be at least {IOU_MIN_SAMPLES}"
        )));
    }
    let (doc, source) = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Data(format!("cannot read scenario {}: {e}", path.display()))
            })?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("bad scenario {}: {e}", path.display())))?;
            (doc, path.display().to_string())
        }
        None => (
            serde_json::to_value(benchmark_scenario()).expect("scenario serializes"),
            String::from("built-in benchmark"),
        ),
    };
    let scenario = finish_scenario(doc, overrides, args.seed, &source)?;
    let cfg = pipeline_config(overrides)?;

    fs::create_dir_all(&args.out).map_err(|e| {
        CliError::Data(format!("cannot create output directory {}: {e}", args.out.display()))
    })?;

    let started = Instant::now();
    let outcome = run_scenario(&scenario, &cfg, args.eval_samples, args.eval_seed).map_err(
        |e| match &e {
            SimError::Map(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        },
    )?;
    let total_s = started.elapsed().as_secs_f64();

    if args.verbose {
        for report in &outcome.frame_reports {
            println!("{}", frame_line(report));
        }
    }

    let scenario_json = serde_json::to_string_pretty(&scenario).expect("scenario serializes");
    write_text(&args.out.join("scenario.json"), &scenario_json)?;
    let truth = TruthFile::from_scene(&scenario.scene);
    let truth_json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    write_text(&args.out.join("truth.json"), &truth_json)?;
    write_text(&args.out.join("map.json"), &map_to_json(&outcome.map))?;
    write_text(&args.out.join("eval.csv"), &eval_to_csv(&outcome.eval))?;
    write_text(&args.out.join("eval.json"), &eval_to_json(&outcome.eval))?;

    let mut meshes = 0usize;
    for lm in outcome.map.landmarks() {
        if let Some(model) = &lm.model {
            write_mesh(&args.out.join(format!("landmark_{}.ply", lm.id)), model)?;
            meshes += 1;
        }
    }

    let reports = &outcome.frame_reports;
    let front_mean = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.front_stage_ms).sum::<f64>() / reports.len() as f64
    };
    let front_max = reports.iter().map(|r| r.front_stage_ms).fold(0.0, f64::max);

    let mut log = String::new();
    log.push_str(&format!("scenario: {source}\n"));
    log.push_str(&format!(
        "objects={} frames={} scene_seed={} eval_samples={} eval_seed={}\n",
        scenario.scene.objects.len(),
        scenario.trajectory.n_frames,
        scenario.scene.seed,
        args.eval_samples,
        args.eval_seed
    ));
    for report in reports {
        log.push_str(&frame_line(report));
        log.push('\n');
    }
    log.push_str(&format!(
        "landmarks={} mean_iou={:.4} front_ms_mean={front_mean:.2} \
         front_ms_max={front_max:.2} total_s={total_s:.2}\n",
        outcome.map.len(),
        outcome.eval.mean_iou
    ));
    write_text(&args.out.join("run.log"), &log)?;

    println!("landmarks: {}", outcome.map.len());
    println!("mean iou3d: {:.4}", outcome.eval.mean_iou);
    println!(
        "front stage: mean {front_mean:.2} ms, max {front_max:.2} ms over {} frames",
        reports.len()
    );
    println!(
        "artifacts in {}: scenario.json, truth.json, map.json, eval.csv, eval.json, \
         run.log, {meshes} landmark meshes",
        args.out.display()
    );
    Ok(())
}

/// One log line per processed frame.
fn frame_line(r: &FrameReport) -> String {
    format!(
        "frame {}: associated={} created={} merged={} skipped={} removed_reprojection={} \
         removed_scoring={} refit_failures={} front_ms={:.3}",
        r.frame_id,
        r.associations.len(),
        r.created.len(),
        r.merged.len(),
        r.skipped_observations,
        r.removed_by_reprojection,
        r.removed_by_scoring,
        r.refit_failures,
        r.front_stage_ms
    )
}

// ---------------------------------------------------------------------------
// fit

fn cmd_fit(args: FitArgs, overrides: &[Override]) -> Result<(), CliError> {
    reject_unknown_overrides(overrides, &["fit"], "fit")?;
    let mut doc = serde_json::to_value(FitConfig::default()).expect("config serializes");
    apply_matching(&mut doc, overrides, "fit", true)?;
    let cfg: FitConfig = serde_json::from_value(doc)
        .map_err(|e| CliError::Data(format!("invalid fit config: {e}")))?;
    cfg.validate().map_err(|e| CliError::Data(e.to_string()))?;

    let points = read_points(&args.input)?;
    if points.is_empty() {
        return Err(CliError::Data(format!("{} contains no points", args.input.display())));
    }

    let center = match &args.center {
        Some(text) => parse_center(text)?,
        None => centroid(&points).map_err(|e| CliError::Data(e.to_string()))?,
    };
    let yaw = if args.auto_yaw {
        estimate_yaw_pca(&points).map_err(|e| CliError::Data(e.to_string()))?.yaw
    } else {
        args.yaw
    };
    let pose = ObjectPose::new(yaw, center).map_err(|e| CliError::Data(e.to_string()))?;

    let fitted = fit_landmark(&points, &pose, &cfg).map_err(|e| match e {
        FitError::TooFewPoints { .. } => CliError::Data(format!("too few points: {e}")),
        FitError::NonFiniteCost => CliError::Numeric(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;

    if let Some(mesh) = &args.mesh {
        write_mesh(mesh, &fitted)?;
        eprintln!("mesh written to {}", mesh.display());
    }

    let out = serde_json::json!({
        "format_version": FIT_FORMAT_VERSION,
        "superquadric": fitted,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("fit result serializes"));
    Ok(())
}

/// Parses `"x,y,z"` into a vector.
fn parse_center(text: &str) -> Result<Vector3<f64>, CliError> {
    let bad = || CliError::Usage(format!("--center expects \"x,y,z\", got \"{text}\""));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut coords = [0.0f64; 3];
    for (slot, part) in coords.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| bad())?;
    }
    Ok(Vector3::new(coords[0], coords[1], coords[2]))
}

/// Loads points from an ASCII PLY (detected by its `ply` magic line) or a
/// whitespace/comma separated XYZ table.
fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    if text.lines().next().map(str::trim) == Some("ply") {
        read_ply_points(&text, path)
    } else {
        read_xyz_points(&text, path)
    }
}

/// Parses XYZ rows separated by whitespace or commas. Blank lines and
/// `#` comments are skipped; a single non-numeric first row is tolerated as
/// a column header. Extra trailing columns are ignored.
fn read_xyz_points(text: &str, path: &Path) -> Result<Vec<Vector3<f64>>, CliError> {
    let mut points = Vec::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let coords: Option<Vec<f64>> = if fields.len() >= 3 {
            fields[..3].iter().map(|t| t.parse().ok()).collect()
        } else {
            None
        };
        match coords {
            Some(v) if v.iter().all(|c| c.is_finite()) => {
                points.push(Vector3::new(v[0], v[1], v[2]));
            }
            None if ix == 0 => {} // header row
            _ => {
                return Err(CliError::Data(format!(
                    "{} line {}: expected an XYZ row, got \"{line}\"",
                    path.display(),
                    ix + 1
                )));
            }
        }
    }
    Ok(points)
}

/// Minimal ASCII PLY reader: extracts x/y/z from the vertex element and
/// skips everything else (faces, extra properties, comments).
fn read_ply_points(text: &str, path: &Path) -> Result<Vec<Vector3<f64>>, CliError> {
    let data_err = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(data_err("not a PLY file".into()));
    }

    let mut elements: Vec<(String, usize)> = Vec::new();
    let mut vertex_props: Vec<String> = Vec::new();
    let mut ascii = false;
    let mut header_done = false;
    for raw in lines.by_ref() {
        let line = raw.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => ascii = tok.next() == Some("ascii"),
            Some("element") => {
                let name = tok.next();
                let count = tok.next().and_then(|c| c.parse::<usize>().ok());
                match (name, count) {
                    (Some(name), Some(count)) => elements.push((name.to_string(), count)),
                    _ => return Err(data_err(format!("malformed element line \"{line}\""))),
                }
            }
            Some("property") => {
                if elements.last().map(|(n, _)| n.as_str()) == Some("vertex") {
                    let name = tok
                        .last()
                        .ok_or_else(|| data_err(format!("malformed property line \"{line}\"")))?;
                    vertex_props.push(name.to_string());
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {} // comments, obj_info, blank lines
        }
    }
    if !header_done {
        return Err(data_err("missing end_header".into()));
    }
    if !ascii {
        return Err(data_err("only ASCII PLY is supported".into()));
    }
    let prop = |axis: &str| vertex_props.iter().position(|p| p == axis);
    let (Some(xi), Some(yi), Some(zi)) = (prop("x"), prop("y"), prop("z")) else {
        return Err(data_err("vertex element lacks x/y/z properties".into()));
    };

    let mut points = Vec::new();
    for (name, count) in &elements {
        if name != "vertex" {
            // Not our element; skip its rows wholesale.
            for _ in 0..*count {
                lines.next();
            }
            continue;
        }
        points.reserve(*count);
        for row in 0..*count {
            let line = lines
                .next()
                .ok_or_else(|| data_err(format!("vertex data ends early at row {row}")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let coord = |ix: usize| -> Result<f64, CliError> {
                fields
                    .get(ix)
                    .and_then(|t| t.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| data_err(format!("bad vertex row {row}: \"{line}\"")))
            };
            points.push(Vector3::new(coord(xi)?, coord(yi)?, coord(zi)?));
        }
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: EvalArgs, overrides: &[Override]) -> Result<(), CliError> {
    reject_unknown_overrides(overrides, &[], "eval")?;
    if args.samples < IOU_MIN_SAMPLES {
        return Err(CliError::Usage(format!("--samples must be at least {IOU_MIN_SAMPLES}")));
    }
    let map_text = fs::read_to_string(&args.map)
        .map_err(|e| CliError::Data(format!("cannot read map {}: {e}", args.map.display())))?;
    let map = map_from_json(&map_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.map.display())))?;

    let truth_text = fs::read_to_string(&args.truth)
        .map_err(|e| CliError::Data(format!("cannot read truth {}: {e}", args.truth.display())))?;
    let truth: TruthFile = serde_json::from_str(&truth_text)
        .map_err(|e| CliError::Data(format!("bad truth file {}: {e}", args.truth.display())))?;
    if truth.format_version != SCENARIO_FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported format_version {}, expected {SCENARIO_FORMAT_VERSION}",
            args.truth.display(),
            truth.format_version
        )));
    }

    let truths: Vec<Superquadric> = truth.objects.iter().map(|o| o.body).collect();
    let report = evaluate(&map, &truths, args.samples, args.seed);
    print!("{}", eval_table(&report));
    Ok(())
}

/// Renders an evaluation as the table `eval` prints.
fn eval_table(report: &EvalReport) -> String {
    let mut out = String::from("object_id truth_id iou3d\n");
    for m in &report.matches {
        out.push_str(&format!("{:<9} {:<8} {:.4}\n", m.landmark_id, m.truth_index, m.iou));
    }
    if !report.unmatched_landmarks.is_empty() {
        let ids: Vec<String> = report.unmatched_landmarks.iter().map(u64::to_string).collect();
        out.push_str(&format!("unmatched landmarks: {}\n", ids.join(", ")));
    }
    if !report.unmatched_truths.is_empty() {
        let ids: Vec<String> = report.unmatched_truths.iter().map(usize::to_string).collect();
        out.push_str(&format!("unmatched truths: {}\n", ids.join(", ")));
    }
    out.push_str(&format!(
        "mean_iou {:.4} over {} truth objects ({} landmarks)\n",
        report.mean_iou, report.truth_count, report.landmark_count
    ));
    out
}

// ---------------------------------------------------------------------------
// gen-scene

fn cmd_gen_scene(args: GenSceneArgs, overrides: &[Override]) -> Result<(), CliError> {
    reject_unknown_overrides(overrides, &["scene", "noise", "trajectory"], "gen-scene")?;
    let base = match args.preset.as_str() {
        "benchmark" => benchmark_scenario(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset \"{other}\" (available: benchmark)"
            )));
        }
    };
    let doc = serde_json::to_value(&base).expect("scenario serializes");
    let scenario = finish_scenario(doc, overrides, args.seed, &format!("preset {}", args.preset))?;

    let scenario_json = serde_json::to_string_pretty(&scenario).expect("scenario serializes");
    write_text(&args.out, &scenario_json)?;
    println!("scenario written to {}", args.out.display());
    if let Some(truth_out) = &args.truth_out {
        let truth = TruthFile::from_scene(&scenario.scene);
        let truth_json = serde_json::to_string_pretty(&truth).expect("truth serializes");
        write_text(truth_out, &truth_json)?;
        println!("ground truth written to {}", truth_out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared file helpers

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_mesh(path: &Path, body: &Superquadric) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    write_ply(body, MESH_ETA, MESH_OMEGA, &mut out)
        .and_then(|()| out.flush())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
