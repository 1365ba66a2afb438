//! OTB-style evaluation: sequence loading, overlap and center-error
//! metrics, one-pass benchmark runs, reports, plots and the ablation table.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frame::Frame;
use crate::siamese::SiameseModel;
use crate::tracker::{AblationSwitches, FrameDiagnostics, TargetState, Tracker, TrackerConfig};
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Overlap thresholds `0.00, 0.05, …, 1.00`.
pub const SUCCESS_STEPS: usize = 21;
/// Center-error thresholds `0, 1, …, 50` pixels.
pub const PRECISION_STEPS: usize = 51;

#[derive(Clone, Debug)]
pub enum FrameSource {
    Files(Vec<PathBuf>),
    Memory(Arc<Vec<Frame>>),
}

/// Ordered frames with one ground-truth box each.
#[derive(Clone, Debug)]
pub struct TrackSequence {
    pub name: String,
    pub frames: FrameSource,
    pub ground_truth: Vec<TargetState>,
    pub attributes: Vec<String>,
}

impl TrackSequence {
    pub fn in_memory(name: impl Into<String>, frames: Vec<Frame>, ground_truth: Vec<TargetState>) -> Result<Self> {
        let seq = Self {
            name: name.into(),
            frames: FrameSource::Memory(Arc::new(frames)),
            ground_truth,
            attributes: Vec::new(),
        };
        seq.check()?;
        Ok(seq)
    }

    fn check(&self) -> Result<()> {
        let n = match &self.frames {
            FrameSource::Files(f) => f.len(),
            FrameSource::Memory(f) => f.len(),
        };
        if n != self.ground_truth.len() {
            return Err(Error::Data(format!(
                "{}: {n} frames but {} annotations",
                self.name,
                self.ground_truth.len()
            )));
        }
        if n == 0 {
            return Err(Error::Data(format!("{}: no frames", self.name)));
        }
        if let Some(i) = self.ground_truth.iter().position(|b| b.check().is_err()) {
            return Err(Error::Data(format!("{}: box {} has no area", self.name, i + 1)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Cow<'_, Frame>> {
        match &self.frames {
            FrameSource::Files(paths) => {
                let p = paths
                    .get(index)
                    .ok_or_else(|| Error::argument(format!("frame {index} out of range")))?;
                Ok(Cow::Owned(Frame::open(p)?))
            }
            FrameSource::Memory(frames) => frames
                .get(index)
                .map(Cow::Borrowed)
                .ok_or_else(|| Error::argument(format!("frame {index} out of range"))),
        }
    }
}

/// Parses `x,y,w,h` lines (comma, tab or space separated; blank lines
/// ignored).
pub fn parse_ground_truth(text: &str) -> Result<Vec<TargetState>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let vals: Vec<f64> = fields.iter().filter_map(|f| f.parse().ok()).collect();
        if fields.len() != 4 || vals.len() != 4 {
            return Err(Error::Data(format!(
                "line {}: expected four numbers x,y,w,h, got {line:?}",
                i + 1
            )));
        }
        let b = TargetState::from_top_left(vals[0], vals[1], vals[2], vals[3]);
        if b.check().is_err() {
            return Err(Error::Data(format!("line {}: box {line:?} has no area", i + 1)));
        }
        boxes.push(b);
    }
    Ok(boxes)
}

/// Loads `<path>/img/*.{jpg,png}` and `<path>/groundtruth_rect.txt`.
pub fn load_sequence(path: &Path) -> Result<TrackSequence> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let img_dir = path.join("img");
    let mut frames: Vec<PathBuf> = fs::read_dir(&img_dir)
        .map_err(|e| Error::io(&img_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        })
        .collect();
    frames.sort();
    let gt_path = path.join("groundtruth_rect.txt");
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let ground_truth =
        parse_ground_truth(&text).map_err(|e| Error::Data(format!("{}: {e}", gt_path.display())))?;
    let seq = TrackSequence {
        name,
        frames: FrameSource::Files(frames),
        ground_truth,
        attributes: Vec::new(),
    };
    seq.check()?;
    Ok(seq)
}

/// Subdirectories of `root` sorted by name, each loaded or failed.
pub fn load_dataset(root: &Path) -> Result<Vec<(String, Result<TrackSequence>)>> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs
        .into_iter()
        .map(|d| {
            let name = d.file_name().expect("directory entry").to_string_lossy().into_owned();
            (name, load_sequence(&d))
        })
        .collect())
}

pub fn iou(a: &TargetState, b: &TargetState) -> f64 {
    let [ax, ay, aw, ah] = a.to_top_left();
    let [bx, by, bw, bh] = b.to_top_left();
    let iw = ((ax + aw).min(bx + bw) - ax.max(bx)).max(0.0);
    let ih = ((ay + ah).min(by + bh) - ay.max(by)).max(0.0);
    let inter = iw * ih;
    let union = aw * ah + bw * bh - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn center_error(a: &TargetState, b: &TargetState) -> f64 {
    (a.center_x - b.center_x).hypot(a.center_y - b.center_y)
}

fn check_lengths(pred: &[TargetState], gt: &[TargetState]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::argument(format!(
            "{} predictions for {} ground-truth boxes",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

pub fn success_threshold(i: usize) -> f64 {
    i as f64 / (SUCCESS_STEPS - 1) as f64
}

/// Fraction of frames with overlap strictly above each threshold, and the
/// mean of those fractions.
pub fn success_metrics(pred: &[TargetState], gt: &[TargetState]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let overlaps: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let n = overlaps.len() as f64;
    let curve: Vec<f64> = (0..SUCCESS_STEPS)
        .map(|i| {
            let t = success_threshold(i);
            overlaps.iter().filter(|o| **o > t).count() as f64 / n
        })
        .collect();
    let auc = curve.iter().sum::<f64>() / SUCCESS_STEPS as f64;
    Ok((curve, auc))
}

/// Fraction of frames with center error within each pixel threshold, and
/// the value at 20 pixels.
pub fn precision_metrics(pred: &[TargetState], gt: &[TargetState]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();
    let n = errors.len() as f64;
    let curve: Vec<f64> = (0..PRECISION_STEPS)
        .map(|d| errors.iter().filter(|e| **e <= d as f64).count() as f64 / n)
        .collect();
    let p20 = curve[20];
    Ok((curve, p20))
}

/// Anything that can produce one box per frame for a sequence.
pub trait SequenceTracker: Sync {
    fn name(&self) -> String;

    /// Boxes for every frame (the first is the initialization box) plus
    /// per-frame diagnostics for frames after the first.
    fn run(&self, sequence: &TrackSequence) -> Result<(Vec<TargetState>, Vec<FrameDiagnostics>)>;
}

/// Replays the ground truth.
pub struct OracleTracker;

impl SequenceTracker for OracleTracker {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn run(&self, sequence: &TrackSequence) -> Result<(Vec<TargetState>, Vec<FrameDiagnostics>)> {
        Ok((sequence.ground_truth.clone(), Vec::new()))
    }
}

/// The Siamese tracker over a fixed model.
pub struct ModelTracker {
    pub model: SiameseModel<f32>,
    pub config: TrackerConfig,
}

impl ModelTracker {
    pub fn new(model: SiameseModel<f32>, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, config })
    }
}

impl SequenceTracker for ModelTracker {
    fn name(&self) -> String {
        "siampf".into()
    }

    fn run(&self, sequence: &TrackSequence) -> Result<(Vec<TargetState>, Vec<FrameDiagnostics>)> {
        let first = sequence.frame(0)?;
        let mut tracker = Tracker::init(&self.model, &first, sequence.ground_truth[0], self.config.clone())?;
        let mut boxes = vec![sequence.ground_truth[0]];
        let mut diags = Vec::with_capacity(sequence.len());
        for i in 1..sequence.len() {
            let (b, d) = tracker.track_frame(sequence.frame(i)?.as_ref())?;
            boxes.push(b);
            diags.push(d);
        }
        Ok((boxes, diags))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub name: String,
    pub frames: usize,
    /// `[x, y, w, h]` per frame, top-left convention.
    pub predicted: Vec<[f64; 4]>,
    pub success_curve: Vec<f64>,
    pub success_auc: f64,
    pub precision_curve: Vec<f64>,
    pub precision_at_20: f64,
    pub mean_iou: f64,
    pub gate_evaluations: usize,
    pub gate_failures: usize,
}

impl EvalResult {
    pub fn from_boxes(name: &str, pred: &[TargetState], gt: &[TargetState], diags: &[FrameDiagnostics]) -> Result<Self> {
        let (success_curve, success_auc) = success_metrics(pred, gt)?;
        let (precision_curve, precision_at_20) = precision_metrics(pred, gt)?;
        let mean_iou = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).sum::<f64>() / pred.len() as f64;
        Ok(Self {
            name: name.to_string(),
            frames: pred.len(),
            predicted: pred.iter().map(TargetState::to_top_left).collect(),
            success_curve,
            success_auc,
            precision_curve,
            precision_at_20,
            mean_iou,
            gate_evaluations: diags.iter().filter(|d| d.gate.is_some()).count(),
            gate_failures: diags.iter().filter(|d| d.gate == Some(false)).count(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceFailure {
    pub name: String,
    pub error: String,
}

/// Wall-clock facts kept apart from the reproducible numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub unix_time: u64,
    pub seconds: f64,
    pub frames_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub tracker: String,
    pub switches: Option<AblationSwitches>,
    pub sequences: Vec<EvalResult>,
    pub failures: Vec<SequenceFailure>,
    pub mean_auc: f64,
    pub mean_precision_at_20: f64,
    pub mean_iou: f64,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub gate_evaluations: usize,
    pub gate_failures: usize,
    pub run_info: Option<RunInfo>,
}

impl BenchmarkReport {
    /// Averages per-sequence results (already ordered by name).
    pub fn aggregate(
        tracker: &str,
        switches: Option<AblationSwitches>,
        sequences: Vec<EvalResult>,
        failures: Vec<SequenceFailure>,
    ) -> Self {
        let n = sequences.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EvalResult) -> f64| sequences.iter().map(f).sum::<f64>() / n;
        let mean_curve = |steps: usize, f: &dyn Fn(&EvalResult) -> &Vec<f64>| -> Vec<f64> {
            (0..steps)
                .map(|i| sequences.iter().map(|s| f(s)[i]).sum::<f64>() / n)
                .collect()
        };
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tracker: tracker.to_string(),
            switches,
            mean_auc: mean(&|s| s.success_auc),
            mean_precision_at_20: mean(&|s| s.precision_at_20),
            mean_iou: mean(&|s| s.mean_iou),
            success_curve: mean_curve(SUCCESS_STEPS, &|s| &s.success_curve),
            precision_curve: mean_curve(PRECISION_STEPS, &|s| &s.precision_curve),
            gate_evaluations: sequences.iter().map(|s| s.gate_evaluations).sum(),
            gate_failures: sequences.iter().map(|s| s.gate_failures).sum(),
            sequences,
            failures,
            run_info: None,
        }
    }

    /// JSON without the wall-clock section, for reproducibility checks.
    pub fn reproducible_json(&self) -> String {
        let mut copy = self.clone();
        copy.run_info = None;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkOptions {
    /// Where to write `report.json`, box CSVs, diagnostics and plots.
    pub output_dir: Option<PathBuf>,
    pub write_plots: bool,
    pub switches: Option<AblationSwitches>,
}

/// One-pass evaluation of `tracker` over already loaded sequences.
pub fn run_benchmark_on(
    tracker: &dyn SequenceTracker,
    sequences: &[(String, Result<TrackSequence>)],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let start = Instant::now();
    let outcomes: Vec<(String, Result<(EvalResult, Vec<FrameDiagnostics>)>)> = sequences
        .par_iter()
        .map(|(name, seq)| {
            let result = match seq {
                Ok(seq) => tracker.run(seq).and_then(|(boxes, diags)| {
                    EvalResult::from_boxes(name, &boxes, &seq.ground_truth, &diags).map(|r| (r, diags))
                }),
                Err(e) => Err(Error::Data(e.to_string())),
            };
            (name.clone(), result)
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut frames = 0usize;
    if let Some(dir) = &opts.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (name, outcome) in outcomes {
        match outcome {
            Ok((r, diags)) => {
                frames += r.frames;
                if let Some(dir) = &opts.output_dir {
                    write_boxes_csv(&dir.join(format!("{name}_boxes.csv")), &r.predicted)?;
                    if !diags.is_empty() {
                        write_diagnostics(&dir.join(format!("{name}_diagnostics.jsonl")), &diags)?;
                    }
                }
                results.push(r);
            }
            Err(e) => failures.push(SequenceFailure {
                name,
                error: e.to_string(),
            }),
        }
    }
    let mut report = BenchmarkReport::aggregate(&tracker.name(), opts.switches, results, failures);
    let seconds = start.elapsed().as_secs_f64();
    report.run_info = Some(RunInfo {
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seconds,
        frames_per_second: if seconds > 0.0 { frames as f64 / seconds } else { 0.0 },
    });
    if let Some(dir) = &opts.output_dir {
        write_json(&dir.join("report.json"), &report)?;
        if opts.write_plots {
            plot_curves(&dir.join("success.png"), &report, CurveKind::Success)?;
            plot_curves(&dir.join("precision.png"), &report, CurveKind::Precision)?;
        }
    }
    Ok(report)
}

/// Loads every sequence under `dataset_root` and evaluates `tracker`.
pub fn run_benchmark(
    tracker: &dyn SequenceTracker,
    dataset_root: &Path,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let sequences = load_dataset(dataset_root)?;
    run_benchmark_on(tracker, &sequences, opts)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_boxes_csv(path: &Path, boxes: &[[f64; 4]]) -> Result<()> {
    let mut out = String::from("frame_index,x,y,w,h\n");
    for (i, [x, y, w, h]) in boxes.iter().enumerate() {
        let _ = writeln!(out, "{i},{x},{y},{w},{h}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_boxes_csv(path: &Path) -> Result<Vec<TargetState>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let v: Vec<f64> = line.split(',').filter_map(|f| f.trim().parse().ok()).collect();
        if v.len() != 5 {
            return Err(Error::Data(format!("{}: line {}: malformed row", path.display(), i + 1)));
        }
        boxes.push(TargetState::from_top_left(v[1], v[2], v[3], v[4]));
    }
    Ok(boxes)
}

pub fn write_diagnostics(path: &Path, diags: &[FrameDiagnostics]) -> Result<()> {
    let mut out = String::new();
    for d in diags {
        out.push_str(&serde_json::to_string(d).expect("serializable"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Recomputes the report numbers from the box CSVs in `dir`.
pub fn reaggregate(dir: &Path, sequences: &[TrackSequence], tracker: &str) -> Result<BenchmarkReport> {
    let mut results = Vec::new();
    for seq in sequences {
        let pred = read_boxes_csv(&dir.join(format!("{}_boxes.csv", seq.name)))?;
        let diags = read_diagnostics(&dir.join(format!("{}_diagnostics.jsonl", seq.name)))?;
        results.push(EvalResult::from_boxes(&seq.name, &pred, &seq.ground_truth, &diags)?);
    }
    Ok(BenchmarkReport::aggregate(tracker, None, results, Vec::new()))
}

fn read_diagnostics(path: &Path) -> Result<Vec<FrameDiagnostics>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Success,
    Precision,
}

/// Draws per-sequence curves in gray and the mean curve in blue on a unit
/// grid. The x axis spans the metric's threshold range, y spans `[0, 1]`.
pub fn plot_curves(path: &Path, report: &BenchmarkReport, kind: CurveKind) -> Result<()> {
    use image::{Rgb, RgbImage};
    const W: u32 = 640;
    const H: u32 = 480;
    const M: f64 = 40.0;
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let (pw, ph) = (W as f64 - 2.0 * M, H as f64 - 2.0 * M);
    let to_px = |fx: f64, fy: f64| (M + fx * pw, H as f64 - M - fy * ph);
    let line = |img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>| {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (a.0 + (b.0 - a.0) * t).round();
            let y = (a.1 + (b.1 - a.1) * t).round();
            if x >= 0.0 && y >= 0.0 && (x as u32) < W && (y as u32) < H {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    };
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let grid = Rgb([225, 225, 225]);
        line(&mut img, to_px(f, 0.0), to_px(f, 1.0), grid);
        line(&mut img, to_px(0.0, f), to_px(1.0, f), grid);
    }
    let axis = Rgb([0, 0, 0]);
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 0.0), axis);
    line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), axis);
    let curve_of = |r: &EvalResult| match kind {
        CurveKind::Success => r.success_curve.clone(),
        CurveKind::Precision => r.precision_curve.clone(),
    };
    let mean = match kind {
        CurveKind::Success => report.success_curve.clone(),
        CurveKind::Precision => report.precision_curve.clone(),
    };
    let draw = |img: &mut RgbImage, curve: &[f64], color: Rgb<u8>| {
        let n = curve.len().max(2) - 1;
        for i in 1..curve.len() {
            let a = to_px((i - 1) as f64 / n as f64, curve[i - 1]);
            let b = to_px(i as f64 / n as f64, curve[i]);
            line(img, a, b, color);
        }
    };
    for r in &report.sequences {
        draw(&mut img, &curve_of(r), Rgb([170, 170, 170]));
    }
    draw(&mut img, &mean, Rgb([20, 60, 200]));
    img.save(path)?;
    Ok(())
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub switches: AblationSwitches,
    pub lambda: f64,
    pub mean_auc: f64,
    pub mean_precision_at_20: f64,
    pub mean_iou: f64,
    pub gate_evaluations: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub rows: Vec<AblationRow>,
}

/// The five cumulative configurations: nothing enabled, then frozen
/// pretrained backbone, side branch, channel attention and APCEP added in
/// turn.
pub fn ablation_rows() -> Vec<AblationSwitches> {
    let off = AblationSwitches {
        pretrained_backbone: false,
        side_branch: false,
        attention: false,
        apcep: false,
    };
    let mut rows = vec![off];
    let mut cur = off;
    for step in 0..4 {
        match step {
            0 => cur.pretrained_backbone = true,
            1 => cur.side_branch = true,
            2 => cur.attention = true,
            _ => cur.apcep = true,
        }
        rows.push(cur);
    }
    rows
}

/// Runs the benchmark once per ablation row. Rows without the pretrained
/// backbone redraw the first `frozen_convs` backbone convolutions from
/// `seed`.
pub fn run_ablation(
    model: &SiameseModel<f32>,
    base: &TrackerConfig,
    frozen_convs: usize,
    seed: u64,
    sequences: &[(String, Result<TrackSequence>)],
    output_dir: Option<&Path>,
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (i, switches) in ablation_rows().into_iter().enumerate() {
        let mut m = model.clone();
        if !switches.pretrained_backbone {
            m.reinitialize_backbone(frozen_convs, seed);
        }
        let config = TrackerConfig {
            switches,
            ..base.clone()
        };
        let lambda = config.effective_lambda();
        let tracker = ModelTracker::new(m, config)?;
        let opts = BenchmarkOptions {
            output_dir: output_dir.map(|d| d.join(format!("row{i}"))),
            write_plots: false,
            switches: Some(switches),
        };
        let report = run_benchmark_on(&tracker, sequences, &opts)?;
        rows.push(AblationRow {
            switches,
            lambda,
            mean_auc: report.mean_auc,
            mean_precision_at_20: report.mean_precision_at_20,
            mean_iou: report.mean_iou,
            gate_evaluations: report.gate_evaluations,
            failures: report.failures.len(),
        });
    }
    let report = AblationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
    };
    if let Some(dir) = output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("ablation.json"), &report)?;
        let md = ablation_markdown(&report);
        let p = dir.join("ablation.md");
        fs::write(&p, md).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

pub fn ablation_markdown(report: &AblationReport) -> String {
    let mark = |b: bool| if b { "✓" } else { " " };
    let mut s = String::from(
        "| Frozen pretrained backbone | Side branch | Channel attention | APCEP | AUC | P@20 | mean IoU |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} |",
            mark(r.switches.pretrained_backbone),
            mark(r.switches.side_branch),
            mark(r.switches.attention),
            mark(r.switches.apcep),
            r.mean_auc,
            r.mean_precision_at_20,
            r.mean_iou
        );
    }
    s
}
