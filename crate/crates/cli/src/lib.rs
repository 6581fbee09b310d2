//! The `macroreg` command-line tool.
//!
//! Each subcommand reads its inputs from explicit paths, writes its outputs
//! to explicit paths and reports to the given writer, either as text or, with
//! `--json`, as a single JSON object.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use macroreg::eval::{evaluate, match_accuracy, EvalReport};
use macroreg::io::{self as formats, FormatError};
use macroreg::matching::{Correspondence, DEFAULT_MAX_HAMMING};
use macroreg::pipeline::{localize, LocalizeConfig, ReferenceIndex};
use macroreg::reconstruction::{
    join_segments, merge_duplicate_features, reconstruct_feature, DepthMap, DEFAULT_ANGLE_THRESHOLD_DEG,
    DEFAULT_GAP_THRESHOLD_PX, DEFAULT_MERGE_RADIUS,
};
use macroreg::registration::RansacConfig;
use macroreg::scenegen::{
    default_intrinsics, facing_camera_pose, generate_observed, generate_reference, random_transform,
    render_depth_scene, Layout, SceneSpec, DEFAULT_IMAGE_SIZE, DEFAULT_VIEW_DISTANCE,
};
use macroreg::{FeatureSet, Point3, Vector3};

#[derive(Debug, Parser)]
#[command(name = "macroreg", version, about = "Localize against a building model by matching doors and windows")]
pub struct Cli {
    /// Print a machine-readable JSON report instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a reference index (lookup tables and descriptors) from a model.
    Preprocess(PreprocessArgs),
    /// Register an observed feature set against a reference index.
    Localize(LocalizeArgs),
    /// Generate a synthetic reference/observed pair with its hidden transform.
    Generate(GenerateArgs),
    /// Reconstruct 3D features from detections, segments and a depth map.
    Reconstruct(ReconstructArgs),
    /// Score an estimated transform against the truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Reference feature file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Observed feature file.
    #[arg(long)]
    pub observed: PathBuf,
    /// Where to write the observed-to-reference transform.
    #[arg(long)]
    pub out: PathBuf,
    /// Probability of drawing at least one all-inlier sample.
    #[arg(long, default_value_t = 0.99)]
    pub p: f64,
    /// Expected inlier ratio among matches.
    #[arg(long, default_value_t = 0.5)]
    pub omega: f64,
    /// Inlier distance in meters.
    #[arg(long, default_value_t = 0.3)]
    pub inlier_threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest Hamming distance accepted as a match.
    #[arg(long, default_value_t = DEFAULT_MAX_HAMMING)]
    pub max_hamming: u32,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "corridor")]
    pub layout: Layout,
    #[arg(long, default_value_t = 20)]
    pub doors: usize,
    #[arg(long, default_value_t = 10)]
    pub windows: usize,
    /// Scene size in meters.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [40.0, 6.0, 3.0])]
    pub extent: Vec<f64>,
    /// Standard deviation of observation noise in meters.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    pub spurious: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Keep the observed set in the reference frame instead of a random one.
    #[arg(long)]
    pub identity: bool,
    /// Also render a depth fixture for every reference feature.
    #[arg(long)]
    pub depth_fixtures: bool,
    /// Split rendered edges into pieces separated by small gaps.
    #[arg(long, requires = "depth_fixtures")]
    pub split_edges: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    /// Binary depth map.
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Camera-to-world transform file.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Same-kind features closer than this (meters) are merged.
    #[arg(long, default_value_t = DEFAULT_MERGE_RADIUS)]
    pub merge_radius: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    /// Goal point in the observed frame.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
    pub goal: Option<Vec<f64>>,
    /// Trajectory length in meters, for the goal error as a percentage.
    #[arg(long)]
    pub trajectory_length: Option<f64>,
    /// JSON report from `localize --json`; scores its matches assuming true
    /// observed features carry their reference id.
    #[arg(long)]
    pub matches: Option<PathBuf>,
}

/// A failed command, tagged with the stage that failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    fn new(stage: &'static str, message: impl fmt::Display) -> Self {
        Self { stage, message: message.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult = Result<(), CliError>;

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn parse<T>(path: &Path, parser: impl FnOnce(&str) -> Result<T, FormatError>) -> Result<T, CliError> {
    parser(&read_text(path)?).map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))
}

fn report(out: &mut dyn Write, json: bool, value: serde_json::Value, text: String) -> CliResult {
    let result = if json { writeln!(out, "{value}") } else { write!(out, "{text}") };
    result.map_err(|e| CliError::new("io", e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Preprocess(args) => preprocess(&args, cli.json, out),
        Command::Localize(args) => localize_cmd(&args, cli.json, out),
        Command::Generate(args) => generate(&args, cli.json, out),
        Command::Reconstruct(args) => reconstruct(&args, cli.json, out),
        Command::Eval(args) => eval(&args, cli.json, out),
    }
}

pub fn preprocess(args: &PreprocessArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let model = parse(&args.model, formats::parse_features)?;
    let model = formats::canonical_features(&model).map_err(|e| CliError::new("parse", e))?;
    let index = ReferenceIndex::build(model).map_err(|e| CliError::new(e.stage(), e))?;
    write_file(&args.out, formats::write_index(&index))?;
    let skipped: Vec<_> = index.skipped().iter().map(|(id, e)| json!({"id": id, "reason": e.to_string()})).collect();
    let value = json!({
        "features": index.reference().len(),
        "descriptors": index.descriptors().len(),
        "distance_bins": index.distance_table().bin_count(),
        "angle_bins": index.angle_table().bin_count(),
        "skipped": skipped,
        "out": args.out,
    });
    let text = format!(
        "features: {}\ndescriptors: {}\ndistance bins: {}\nangle bins: {}\nskipped: {}\nwrote {}\n",
        index.reference().len(),
        index.descriptors().len(),
        index.distance_table().bin_count(),
        index.angle_table().bin_count(),
        skipped.len(),
        args.out.display()
    );
    report(out, json, value, text)
}

/// Diagnostics printed by `localize --json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeReport {
    pub observed: usize,
    pub descriptors: usize,
    pub matches: Vec<MatchRecord>,
    pub inliers: usize,
    pub rmse: f64,
    pub hypotheses: usize,
    pub refined: bool,
    pub wall_time_ms: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub observed_id: u64,
    pub reference_id: u64,
    pub hamming: u32,
}

impl From<&Correspondence> for MatchRecord {
    fn from(c: &Correspondence) -> Self {
        Self { observed_id: c.observed_id, reference_id: c.reference_id, hamming: c.hamming }
    }
}

pub fn localize_cmd(args: &LocalizeArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let index = parse(&args.index, formats::parse_index)?;
    let observed = parse(&args.observed, formats::parse_features)?;
    let cfg = LocalizeConfig {
        ransac: RansacConfig {
            success_probability: args.p,
            inlier_ratio: args.omega,
            inlier_threshold: args.inlier_threshold,
            rng_seed: args.seed,
            ..RansacConfig::default()
        },
        max_hamming: args.max_hamming,
    };
    let start = Instant::now();
    let loc = localize(&index, &observed, &cfg).map_err(|e| CliError::new(e.stage(), e))?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let reg = &loc.registration;
    write_file(&args.out, formats::write_transform(&reg.transform))?;
    let rep = LocalizeReport {
        observed: observed.len(),
        descriptors: loc.observed_descriptors.descriptors.len(),
        matches: loc.matches.iter().map(MatchRecord::from).collect(),
        inliers: reg.inliers.len(),
        rmse: reg.rmse,
        hypotheses: reg.hypotheses_used,
        refined: reg.refined,
        wall_time_ms: elapsed,
        out: args.out.clone(),
    };
    let text = format!(
        "observed features: {}\ndescriptors: {}\nmatches: {}\ninliers: {}\nrmse: {:.6} m\nhypotheses: {}\nrefined: {}\nwall time: {:.3} ms\nwrote {}\n",
        rep.observed,
        rep.descriptors,
        rep.matches.len(),
        rep.inliers,
        rep.rmse,
        rep.hypotheses,
        if rep.refined { "yes" } else { "no" },
        rep.wall_time_ms,
        args.out.display()
    );
    let value = serde_json::to_value(&rep).map_err(|e| CliError::new("io", e))?;
    report(out, json, value, text)
}

fn scene_spec(args: &GenerateArgs) -> Result<SceneSpec, CliError> {
    let [x, y, z] = args.extent[..] else {
        return Err(CliError::new("generate", "extent needs three values"));
    };
    Ok(SceneSpec {
        layout: args.layout,
        door_count: args.doors,
        window_count: args.windows,
        extent: Vector3::new(x, y, z),
        noise_sigma: args.noise,
        dropout_rate: args.dropout,
        spurious_rate: args.spurious,
        transform: if args.identity { macroreg::RigidTransform::identity() } else { random_transform(args.seed) },
        rng_seed: args.seed,
    })
}

pub fn generate(args: &GenerateArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let spec = scene_spec(args)?;
    let reference = generate_reference(&spec).map_err(|e| CliError::new("generate", e))?;
    let (observed, truth) = generate_observed(&reference, &spec).map_err(|e| CliError::new("generate", e))?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::new("io", format!("{}: {e}", args.out_dir.display())))?;
    write_file(&args.out_dir.join("reference.features"), formats::write_features(&reference))?;
    write_file(&args.out_dir.join("observed.features"), formats::write_features(&observed))?;
    write_file(&args.out_dir.join("truth.transform"), formats::write_transform(&truth))?;
    let fixtures = if args.depth_fixtures { write_fixtures(&reference, args)? } else { 0 };
    let value = json!({
        "reference": reference.len(),
        "observed": observed.len(),
        "fixtures": fixtures,
        "out_dir": args.out_dir,
    });
    let text = format!(
        "reference features: {}\nobserved features: {}\ndepth fixtures: {}\nwrote {}\n",
        reference.len(),
        observed.len(),
        fixtures,
        args.out_dir.display()
    );
    report(out, json, value, text)
}

/// One directory per reference feature, holding everything `reconstruct`
/// needs plus the feature itself as `truth.features`.
fn write_fixtures(reference: &FeatureSet, args: &GenerateArgs) -> Result<usize, CliError> {
    let k = default_intrinsics();
    let mut count = 0;
    for feature in reference.iter() {
        let fail = |e: macroreg::scenegen::SceneError| CliError::new("generate", format!("feature {}: {e}", feature.id));
        let pose = facing_camera_pose(feature, DEFAULT_VIEW_DISTANCE).map_err(fail)?;
        let (depth, bbox, segments) =
            render_depth_scene(feature, &k, &pose, DEFAULT_IMAGE_SIZE, args.split_edges).map_err(fail)?;
        let dir = args.out_dir.join("fixtures").join(format!("feature-{}", feature.id));
        fs::create_dir_all(&dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("depth.bin"), depth.encode())?;
        write_file(&dir.join("detections.json"), formats::write_detections(&[bbox]))?;
        write_file(&dir.join("segments.json"), formats::write_segments(&segments))?;
        write_file(&dir.join("intrinsics.json"), formats::write_intrinsics(&k))?;
        write_file(&dir.join("pose.transform"), formats::write_transform(&pose))?;
        let truth = FeatureSet::new(vec![feature.clone()]).map_err(|e| CliError::new("generate", e))?;
        write_file(&dir.join("truth.features"), formats::write_features(&truth))?;
        count += 1;
    }
    Ok(count)
}

pub fn reconstruct(args: &ReconstructArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let detections = parse(&args.detections, formats::parse_detections)?;
    let segments = parse(&args.segments, formats::parse_segments)?;
    let bytes = fs::read(&args.depth).map_err(|e| CliError::new("io", format!("{}: {e}", args.depth.display())))?;
    let depth = DepthMap::decode(&bytes).map_err(|e| CliError::new("parse", format!("{}: {e}", args.depth.display())))?;
    let k = parse(&args.intrinsics, formats::parse_intrinsics)?;
    let pose = parse(&args.pose, formats::parse_transform)?;

    let joined = join_segments(&segments, DEFAULT_ANGLE_THRESHOLD_DEG, DEFAULT_GAP_THRESHOLD_PX);
    let mut features = Vec::new();
    let mut failures = Vec::new();
    for (i, bbox) in detections.iter().enumerate() {
        match reconstruct_feature(i as u64, bbox, &joined, &depth, &k, &pose) {
            Ok(f) => features.push(f),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let merged = merge_duplicate_features(&features, args.merge_radius);
    let set = FeatureSet::new(merged).map_err(|e| CliError::new("reconstruct", e))?;
    write_file(&args.out, formats::write_features(&set))?;

    let value = json!({
        "detections": detections.len(),
        "segments": segments.len(),
        "joined_segments": joined.len(),
        "reconstructed": features.len(),
        "features": set.len(),
        "failures": failures.iter().map(|(i, e)| json!({"detection": i, "reason": e})).collect::<Vec<_>>(),
        "out": args.out,
    });
    let mut text = format!(
        "detections: {}\nsegments: {} ({} after joining)\nreconstructed: {}\nfeatures after merging: {}\n",
        detections.len(),
        segments.len(),
        joined.len(),
        features.len(),
        set.len()
    );
    for (i, e) in &failures {
        text.push_str(&format!("detection {i} skipped: {e}\n"));
    }
    text.push_str(&format!("wrote {}\n", args.out.display()));
    report(out, json, value, text)
}

pub fn eval(args: &EvalArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let truth = parse(&args.truth, formats::parse_transform)?;
    let estimate = parse(&args.estimate, formats::parse_transform)?;
    let goal = match args.goal.as_deref() {
        None => None,
        Some(&[x, y, z]) => Some(Point3::new(x, y, z)),
        Some(_) => return Err(CliError::new("eval", "goal needs three coordinates")),
    };
    let mut rep: EvalReport =
        evaluate(&truth, &estimate, goal.as_ref(), args.trajectory_length).map_err(|e| CliError::new("eval", e))?;
    if let Some(path) = &args.matches {
        let localized: LocalizeReport = serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))?;
        let matches: Vec<Correspondence> = localized
            .matches
            .iter()
            .map(|m| Correspondence { observed_id: m.observed_id, reference_id: m.reference_id, hamming: m.hamming })
            .collect();
        rep.match_accuracy = match_accuracy(&matches);
    }
    let mut text = format!(
        "rotation error: {:.6} deg\ntranslation error: {:.6} m\n",
        rep.rotation_error_deg, rep.translation_error
    );
    if let Some(g) = rep.goal_error {
        text.push_str(&format!("goal error: {g:.6} m\n"));
    }
    if let Some(p) = rep.trajectory_pct {
        text.push_str(&format!("goal error: {p:.3} % of trajectory\n"));
    }
    if let Some(a) = rep.match_accuracy {
        text.push_str(&format!("match accuracy: {a:.4}\n"));
    }
    let value = serde_json::to_value(rep).map_err(|e| CliError::new("io", e))?;
    report(out, json, value, text)
}
