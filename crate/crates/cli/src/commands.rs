use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use bevlane::anchors::{
    anchor_recall, build_descriptor, cluster_anchors, DEFAULT_DESCRIPTOR_ROWS, DEFAULT_RESTARTS,
};
use bevlane::datagen::{frame_seed, generate_dataset, FrameRecord, Jitter, SceneSpec};
use bevlane::fitting::{CurveModel, FitConfig};
use bevlane::io::{
    read_dataset, read_predictions, to_json_document, write_dataset, write_predictions,
    PredictionRecord,
};
use bevlane::losses::{IoUConfig, LossConfig};
use bevlane::metrics::EvalConfig;
use bevlane::pipeline::{evaluate, fit_frames, project_predictions, FitMode};
use bevlane::render::{render_svg, View};
use bevlane::{Error, Execution};

use crate::config::{merge, path, required, ConfigFile};
use crate::CliError;

const ANCHOR_RECALL_THRESHOLD: f64 = 30.0;
const MIXED: [&str; 5] = ["flat", "slope", "sine", "noise", "curve"];

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
fn write_atomic(out: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(out, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(out, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(out, e))?;
    tmp.persist(out).map_err(|e| CliError::io(out, e.error))?;
    Ok(())
}

fn open(p: &Path) -> Result<BufReader<File>, CliError> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| CliError::io(p, e))
}

fn with_path(p: &Path, e: Error) -> CliError {
    match e {
        Error::Io(m) => CliError::io(p, m),
        Error::Schema {
            line,
            path,
            message,
        } => CliError::Core(Error::Schema {
            line,
            path,
            message: format!("{message} (in {})", p.display()),
        }),
        other => CliError::Core(other),
    }
}

fn load_dataset(p: &Path) -> Result<Vec<FrameRecord>, CliError> {
    read_dataset(open(p)?).map_err(|e| with_path(p, e))
}

fn load_predictions(p: &Path, frames: &[FrameRecord]) -> Result<Vec<PredictionRecord>, CliError> {
    read_predictions(open(p)?, Some(frames)).map_err(|e| with_path(p, e))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenerateArgs {
    /// Scene file (JSON or TOML with a `scenes` list) or comma-separated
    /// presets: flat, slope, sine, bump, noise, curve, mixed.
    #[arg(long)]
    spec: Option<String>,
    /// Total number of frames, split evenly across scene families.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; scene family `s` uses a seed derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-frame road variation: none or moderate.
    #[arg(long)]
    jitter: Option<String>,
}

impl GenerateArgs {
    pub fn merged(self, file: &ConfigFile) -> Result<Self, CliError> {
        Ok(merge!(self, file.section::<Self>("generate")?; spec, frames, out, seed, jitter))
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SceneEntry {
    Preset(String),
    Scene(Box<SceneSpec>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    scenes: Vec<SceneEntry>,
    #[serde(default)]
    jitter: Option<Jitter>,
}

fn preset(name: &str) -> Result<Vec<SceneSpec>, CliError> {
    if name == "mixed" {
        return Ok(MIXED
            .iter()
            .map(|n| SceneSpec::preset(n).expect("known preset"))
            .collect());
    }
    SceneSpec::preset(name)
        .map(|s| vec![s])
        .ok_or_else(|| CliError::Usage(format!("no scene file or preset named {name:?}")))
}

fn load_specs(spec: &str) -> Result<(Vec<SceneSpec>, Option<Jitter>), CliError> {
    let p = Path::new(spec);
    if !p.is_file() {
        let mut out = Vec::new();
        for name in spec.split(',').map(str::trim) {
            out.extend(preset(name)?);
        }
        return Ok((out, None));
    }
    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    let parsed: SpecFile = if p.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
    };
    let mut out = Vec::new();
    for entry in parsed.scenes {
        match entry {
            SceneEntry::Preset(name) => out.extend(preset(&name)?),
            SceneEntry::Scene(s) => out.push(*s),
        }
    }
    Ok((out, parsed.jitter))
}

pub fn generate(a: GenerateArgs, exec: Execution) -> Result<(), CliError> {
    let spec = required(a.spec, "spec")?;
    let frames = required(a.frames, "frames")?;
    let out = path(a.out, "out")?;
    let (mut specs, file_jitter) = load_specs(&spec)?;
    if specs.is_empty() {
        return Err(CliError::Usage("the scene list is empty".into()));
    }
    if frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let jitter = match a.jitter.as_deref() {
        None => file_jitter.unwrap_or_default(),
        Some("none") => Jitter::default(),
        Some("moderate") => Jitter::moderate(),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "--jitter must be none or moderate, got {other:?}"
            )))
        }
    };
    if let Some(seed) = a.seed {
        for (s, spec) in specs.iter_mut().enumerate() {
            spec.seed = frame_seed(seed, s as u64);
        }
    }
    let per_spec = frames.div_ceil(specs.len());
    let mut data = generate_dataset(&specs, per_spec, &jitter, exec)?;
    data.truncate(frames);
    let mut buf = Vec::new();
    write_dataset(&mut buf, &data)?;
    write_atomic(&out, &buf)?;
    eprintln!("wrote {} frames to {}", data.len(), out.display());
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// 2d, 3d or perspective-baseline.
    #[arg(long)]
    mode: Option<String>,
    /// Curve order: 2, 3, 4 or bezier.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// BEV lane half-width, meters.
    #[arg(long)]
    e_bev: Option<f64>,
    /// Image lane half-width, pixels.
    #[arg(long)]
    e_per: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Camera height assumed by the flat-ground warm start, meters.
    #[arg(long)]
    camera_height: Option<f64>,
    /// Accepted for reproducible invocations; fitting draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional JSON file with the final loss terms of every fitted lane.
    #[arg(long)]
    summary: Option<PathBuf>,
}

impl FitArgs {
    pub fn merged(self, file: &ConfigFile) -> Result<Self, CliError> {
        Ok(merge!(self, file.section::<Self>("fit")?;
            dataset, mode, order, out, alpha, beta, e_bev, e_per, max_iters, step_size, camera_height, seed, summary))
    }
}

pub fn fit(a: FitArgs, exec: Execution) -> Result<(), CliError> {
    let dataset = path(a.dataset, "dataset")?;
    let out = path(a.out, "out")?;
    let mode: FitMode = parse(&required(a.mode, "mode")?, "--mode")?;
    let curve: CurveModel = match a.order {
        Some(o) => parse(&o, "--order")?,
        None => CurveModel::default(),
    };
    let mut fit = FitConfig {
        curve,
        ..FitConfig::default()
    };
    if let Some(i) = a.max_iters {
        fit.max_iters = i;
    }
    if let Some(s) = a.step_size {
        fit.step_size = s;
    }
    if let Some(h) = a.camera_height {
        fit.camera_height = h;
    }
    let mut loss = LossConfig::default();
    if let Some(x) = a.alpha {
        loss.weights.alpha = x;
    }
    if let Some(x) = a.beta {
        loss.weights.beta = x;
    }
    loss.weights = bevlane::LossWeights::new(loss.weights.alpha, loss.weights.beta)?;
    if let Some(e) = a.e_bev {
        loss.bev = IoUConfig::new(e, loss.bev.sample_count)?;
    }
    if let Some(e) = a.e_per {
        loss.perspective = IoUConfig::new(e, loss.perspective.sample_count)?;
    }
    let frames = load_dataset(&dataset)?;
    let outcome = fit_frames(&frames, mode, &fit, &loss, exec)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &outcome.predictions)?;
    write_atomic(&out, &buf)?;
    if let Some(p) = a.summary {
        let doc = to_json_document("fit-summary", &outcome.summaries)?;
        write_atomic(&p, doc.as_bytes())?;
    }
    for s in &outcome.skipped {
        eprintln!("skipped frame {} lane {}: {}", s.frame_id, s.lane, s.reason);
    }
    let fitted: usize = outcome
        .predictions
        .iter()
        .map(|p| p.lanes_3d.len() + p.lanes_2d.len())
        .sum();
    eprintln!(
        "fitted {fitted} lanes, skipped {}, wrote {}",
        outcome.skipped.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rasterised lane width, pixels.
    #[arg(long)]
    lane_width: Option<f64>,
    /// IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    thresholds: Option<Vec<f64>>,
}

impl EvalArgs {
    pub fn merged(self, file: &ConfigFile) -> Result<Self, CliError> {
        Ok(merge!(self, file.section::<Self>("eval")?; dataset, pred, out, lane_width, thresholds))
    }
}

pub fn eval(a: EvalArgs, exec: Execution) -> Result<(), CliError> {
    let dataset = path(a.dataset, "dataset")?;
    let pred = path(a.pred, "pred")?;
    let out = path(a.out, "out")?;
    let mut cfg = EvalConfig::default();
    if let Some(w) = a.lane_width {
        cfg.lane_width = w;
    }
    if let Some(t) = a.thresholds {
        cfg.iou_thresholds = t;
    }
    cfg.validate()?;
    let frames = load_dataset(&dataset)?;
    let preds = load_predictions(&pred, &frames)?;
    let report = evaluate(&frames, &preds, &cfg, &LossConfig::default(), exec)?;
    let doc = to_json_document("eval-report", &report)?;
    write_atomic(&out, doc.as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnchorsArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of anchors.
    #[arg(short = 'k', long = "k")]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Descriptor rows per lane.
    #[arg(long)]
    rows: Option<usize>,
}

impl AnchorsArgs {
    pub fn merged(self, file: &ConfigFile) -> Result<Self, CliError> {
        Ok(merge!(self, file.section::<Self>("anchors")?; dataset, k, out, restarts, seed, rows))
    }
}

pub fn anchors(a: AnchorsArgs, exec: Execution) -> Result<(), CliError> {
    let dataset = path(a.dataset, "dataset")?;
    let k = required(a.k, "k")?;
    let out = path(a.out, "out")?;
    let m = a.rows.unwrap_or(DEFAULT_DESCRIPTOR_ROWS);
    let frames = load_dataset(&dataset)?;
    let Some(image) = frames.first().map(|f| f.image) else {
        return Err(CliError::Usage("the dataset has no frames".into()));
    };
    if frames.iter().any(|f| f.image != image) {
        return Err(CliError::Usage(
            "anchors need every frame to share one image size".into(),
        ));
    }
    let lanes: Vec<_> = frames
        .iter()
        .flat_map(|f| f.lanes_2d.iter().cloned())
        .collect();
    let mut descriptors = Vec::with_capacity(lanes.len());
    for lane in &lanes {
        match build_descriptor(lane, image, m) {
            Ok(d) => descriptors.push(d),
            Err(Error::DegenerateLane(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let set = cluster_anchors(
        &descriptors,
        image,
        k,
        a.seed.unwrap_or(0),
        a.restarts.unwrap_or(DEFAULT_RESTARTS),
        exec,
    )?;
    let recall = anchor_recall(&set, &lanes, ANCHOR_RECALL_THRESHOLD)?;
    let doc = to_json_document("anchors", &set)?;
    write_atomic(&out, doc.as_bytes())?;
    eprintln!(
        "{} anchors from {} lanes, inertia {:.3}, recall@{ANCHOR_RECALL_THRESHOLD}px {recall:.4}",
        set.k(),
        descriptors.len(),
        set.inertia
    );
    Ok(())
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProjectArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ProjectArgs {
    pub fn merged(self, file: &ConfigFile) -> Result<Self, CliError> {
        Ok(merge!(self, file.section::<Self>("project")?; dataset, pred, out))
    }
}

pub fn project(a: ProjectArgs) -> Result<(), CliError> {
    let dataset = path(a.dataset, "dataset")?;
    let pred = path(a.pred, "pred")?;
    let out = path(a.out, "out")?;
    let frames = load_dataset(&dataset)?;
    let preds = load_predictions(&pred, &frames)?;
    let projected = project_predictions(&frames, &preds)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &projected)?;
    write_atomic(&out, &buf)
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RenderArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Frame id to draw.
    #[arg(long)]
    frame: Option<String>,
    /// perspective, bev or profile.
    #[arg(long)]
    view: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RenderArgs {
    pub fn merged(self, file: &ConfigFile) -> Result<Self, CliError> {
        Ok(merge!(self, file.section::<Self>("render")?; dataset, pred, frame, view, out))
    }
}

pub fn render(a: RenderArgs) -> Result<(), CliError> {
    let dataset = path(a.dataset, "dataset")?;
    let id = required(a.frame, "frame")?;
    let view: View = parse(&a.view.unwrap_or_else(|| "perspective".into()), "--view")?;
    let out = path(a.out, "out")?;
    let frames = load_dataset(&dataset)?;
    let frame = frames.iter().find(|f| f.id == id).ok_or_else(|| {
        CliError::Usage(format!("no frame with id {id:?} in {}", dataset.display()))
    })?;
    let pred = match a.pred {
        Some(p) => {
            let mut merged: Option<PredictionRecord> = None;
            for r in load_predictions(&p, &frames)?
                .into_iter()
                .filter(|r| r.frame_id == id)
            {
                match &mut merged {
                    None => merged = Some(r),
                    Some(m) => {
                        m.lanes_3d.extend(r.lanes_3d);
                        m.lanes_2d.extend(r.lanes_2d);
                    }
                }
            }
            merged
        }
        None => None,
    };
    let svg = render_svg(frame, pred.as_ref(), view);
    write_atomic(&out, svg.as_bytes())
}
