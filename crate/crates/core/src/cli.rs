//! The `siampf` command line: a flat, dotted configuration schema layered
//! as defaults < JSON file < `SIAMPF_<KEY>` environment variables < flags,
//! and the `train`, `track`, `eval` and `ablate` subcommands.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::evalbench::{
    load_dataset, load_sequence, run_ablation, run_benchmark_on, write_boxes_csv, write_diagnostics,
    BenchmarkOptions, ModelTracker, OracleTracker, SequenceTracker,
};
use crate::netmodel::Init;
use crate::siamese::{ModelConfig, SiameseModel};
use crate::tracker::{TargetState, Tracker, TrackerConfig};
use crate::training::{train, Checkpoint, TrainConfig};
use crate::{Error, Result};

/// Paths used by the subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root in the OTB layout.
    pub root: String,
    pub output_dir: String,
    /// VGG16 weight file; empty means random initialization.
    pub pretrained_weights: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: "data".into(),
            output_dir: "out".into(),
            pretrained_weights: String::new(),
        }
    }
}

/// Every setting a subcommand may read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub tracker: TrackerConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for r in [self.train.validate(), self.model.validate(), self.tracker.validate()] {
            if let Err(Error::Config(mut e)) = r {
                errs.append(&mut e);
            } else if let Err(e) = r {
                errs.push(e.to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.data.output_dir)
    }
}

/// Public keys that stand for one or more internal settings.
const ALIASES: &[(&str, &[&str])] = &[
    ("seed", &["train.seed"]),
    ("lambda", &["train.lambda", "tracker.lambda"]),
    ("confidence.ratio", &["tracker.gate.ratio"]),
    ("confidence.window", &["tracker.gate.window"]),
    ("confidence.warmup", &["tracker.gate.warmup"]),
    ("ablation.pretrained_backbone", &["tracker.switches.pretrained_backbone"]),
    ("ablation.side_branch", &["tracker.switches.side_branch"]),
    ("ablation.attention", &["tracker.switches.attention"]),
    ("ablation.apcep", &["tracker.switches.apcep"]),
];

const DESCRIPTIONS: &[(&str, &str)] = &[
    ("seed", "root seed for every random stream"),
    ("lambda", "fusion weight of the backbone response"),
    ("train.epochs", "training epochs"),
    ("train.batch_size", "pairs per SGD step"),
    ("train.steps_per_epoch", "SGD steps per epoch"),
    ("train.lr_schedule", "[[first_epoch, rate], ...] learning-rate plateaus"),
    ("train.momentum", "SGD momentum"),
    ("train.weight_decay", "L2 weight decay"),
    ("train.frozen_backbone_convs", "leading backbone convolutions kept fixed"),
    ("train.max_gap", "largest frame gap within a training pair"),
    ("train.max_translation", "instance crop shift in patch pixels"),
    ("train.max_scale_jitter", "relative instance crop scale jitter"),
    ("train.context", "context margin of training crops"),
    ("train.label_radius", "positive label radius in pixels"),
    ("model.width_divisor", "channel divisor (16 for the desk-scale model)"),
    ("model.attention_reduction", "channel attention reduction ratio"),
    ("model.response_scale", "multiplier on raw correlations"),
    ("tracker.num_scales", "search scales per frame (odd)"),
    ("tracker.scale_step", "ratio between neighbouring scales"),
    ("tracker.scale_penalty", "score multiplier for non-middle scales"),
    ("tracker.scale_damping", "weight of the new scale"),
    ("tracker.window_influence", "cosine window blend weight"),
    ("tracker.response_upsample", "side of the upsampled response"),
    ("tracker.context", "context margin of tracking crops"),
    ("tracker.min_scale", "smallest search scale relative to frame 1"),
    ("tracker.max_scale", "largest search scale relative to frame 1"),
    ("tracker.gate_strategy", "half-move or freeze-all on low confidence"),
    ("confidence.ratio", "gate threshold as a fraction of the running mean"),
    ("confidence.window", "confidence history length"),
    ("confidence.warmup", "frames accepted before gating starts"),
    ("ablation.pretrained_backbone", "keep the frozen backbone weights"),
    ("ablation.side_branch", "use the side branch (off sets lambda to 1)"),
    ("ablation.attention", "apply channel attention"),
    ("ablation.apcep", "apply the confidence gate"),
    ("data.root", "dataset root (<root>/<sequence>/img, groundtruth_rect.txt)"),
    ("data.output_dir", "directory for reports, checkpoints and tracks"),
    ("data.pretrained_weights", "VGG16 weight file, empty for random init"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Text,
    List,
}

impl Kind {
    fn of(v: &Value) -> Self {
        match v {
            Value::Number(n) if n.is_u64() => Kind::Int,
            Value::Number(_) => Kind::Float,
            Value::Bool(_) => Kind::Bool,
            Value::String(_) => Kind::Text,
            _ => Kind::List,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Int => "integer",
            Kind::Float => "real",
            Kind::Bool => "bool",
            Kind::Text => "string",
            Kind::List => "json",
        }
    }

    /// Checks a JSON value against this kind, widening integers to reals.
    fn coerce(self, v: Value) -> std::result::Result<Value, String> {
        match (self, &v) {
            (Kind::Int, Value::Number(n)) if n.is_u64() => Ok(v),
            (Kind::Float, Value::Number(n)) => Ok(Value::from(n.as_f64().expect("number"))),
            (Kind::Bool, Value::Bool(_)) | (Kind::Text, Value::String(_)) => Ok(v),
            (Kind::List, Value::Array(_)) => Ok(v),
            _ => Err(format!("expected {}, got {v}", self.name())),
        }
    }

    /// Parses text from the environment or a flag.
    fn parse(self, s: &str) -> std::result::Result<Value, String> {
        match self {
            Kind::Text => Ok(Value::String(s.to_string())),
            Kind::Int => s
                .trim()
                .parse::<u64>()
                .map(Value::from)
                .map_err(|_| format!("expected integer, got {s:?}")),
            Kind::Float => s
                .trim()
                .parse::<f64>()
                .map(Value::from)
                .map_err(|_| format!("expected real, got {s:?}")),
            Kind::Bool => match s.trim() {
                "true" | "1" | "yes" | "on" => Ok(Value::Bool(true)),
                "false" | "0" | "no" | "off" => Ok(Value::Bool(false)),
                _ => Err(format!("expected bool, got {s:?}")),
            },
            Kind::List => serde_json::from_str(s).map_err(|e| format!("expected JSON: {e}")),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("schema nodes are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

/// One public configuration key.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaKey {
    pub key: String,
    pub kind: &'static str,
    pub default: Value,
    pub description: &'static str,
    targets: Vec<String>,
}

/// All public keys with their defaults, sorted by key.
pub fn schema() -> Vec<SchemaKey> {
    let mut internal = BTreeMap::new();
    flatten("", &serde_json::to_value(RunConfig::default()).expect("serializable"), &mut internal);
    let aliased: Vec<&str> = ALIASES.iter().flat_map(|(_, t)| t.iter().copied()).collect();
    let describe = |k: &str| {
        DESCRIPTIONS
            .iter()
            .find(|(key, _)| *key == k)
            .map(|(_, d)| *d)
            .unwrap_or("")
    };
    let mut keys: Vec<SchemaKey> = ALIASES
        .iter()
        .map(|(k, targets)| {
            let default = internal[targets[0]].clone();
            SchemaKey {
                key: k.to_string(),
                kind: Kind::of(&default).name(),
                default,
                description: describe(k),
                targets: targets.iter().map(|t| t.to_string()).collect(),
            }
        })
        .collect();
    for (k, v) in &internal {
        if !aliased.contains(&k.as_str()) {
            keys.push(SchemaKey {
                key: k.clone(),
                kind: Kind::of(v).name(),
                default: v.clone(),
                description: describe(k),
                targets: vec![k.clone()],
            });
        }
    }
    keys.sort_by(|a, b| a.key.cmp(&b.key));
    keys
}

/// Text block listing every key, its type and default.
pub fn schema_help() -> String {
    let mut s = String::from("Configuration keys (defaults < --config file < SIAMPF_<KEY> env < flags):\n");
    for k in schema() {
        let _ = writeln!(s, "  {:<32} {:<8} default {}  {}", k.key, k.kind, k.default, k.description);
    }
    s
}

/// Environment variable name for a key: `SIAMPF_` + upper case, dots as
/// underscores.
pub fn env_name(key: &str) -> String {
    format!("SIAMPF_{}", key.to_ascii_uppercase().replace('.', "_"))
}

/// Where a value came from, for error messages.
#[derive(Clone, Copy, Debug)]
enum Source {
    File,
    Env,
    Flag,
}

impl Source {
    fn label(self) -> &'static str {
        match self {
            Source::File => "config file",
            Source::Env => "environment",
            Source::Flag => "flag",
        }
    }
}

/// Merges the layers and validates the result. `env` holds
/// `(variable, value)` pairs; `flags` holds `(key, value)` overrides.
pub fn parse_config(file: Option<&Path>, env: &[(String, String)], flags: &[(String, String)]) -> Result<RunConfig> {
    let keys = schema();
    let by_key: BTreeMap<&str, &SchemaKey> = keys.iter().map(|k| (k.key.as_str(), k)).collect();
    let mut values: BTreeMap<String, Value> = keys.iter().map(|k| (k.key.clone(), k.default.clone())).collect();
    let mut errs = Vec::new();

    let mut apply = |key: &str, raw: std::result::Result<Value, String>, src: Source, errs: &mut Vec<String>| {
        let Some(spec) = by_key.get(key) else {
            errs.push(format!("unknown key {key:?} ({})", src.label()));
            return;
        };
        let kind = Kind::of(&spec.default);
        match raw.and_then(|v| kind.coerce(v)) {
            Ok(v) => {
                values.insert(key.to_string(), v);
            }
            Err(e) => errs.push(format!("{key} ({}): {e}", src.label())),
        }
    };

    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(v @ Value::Object(_)) => {
                let mut flat = BTreeMap::new();
                flatten("", &v, &mut flat);
                for (k, v) in flat {
                    apply(&k, Ok(v), Source::File, &mut errs);
                }
            }
            Ok(_) => errs.push(format!("{}: top level must be an object", path.display())),
            Err(e) => errs.push(format!("{}: {e}", path.display())),
        }
    }
    for (var, val) in env {
        if !var.starts_with("SIAMPF_") {
            continue;
        }
        match keys.iter().find(|k| env_name(&k.key) == *var) {
            Some(k) => apply(&k.key, Kind::of(&k.default).parse(val), Source::Env, &mut errs),
            None => errs.push(format!("unknown key in environment variable {var}")),
        }
    }
    for (key, val) in flags {
        let parsed = by_key
            .get(key.as_str())
            .map(|k| Kind::of(&k.default).parse(val))
            .unwrap_or(Ok(Value::Null));
        apply(key, parsed, Source::Flag, &mut errs);
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }

    let mut internal = BTreeMap::new();
    for k in &keys {
        for t in &k.targets {
            internal.insert(t.clone(), values[&k.key].clone());
        }
    }
    let cfg: RunConfig = serde_json::from_value(unflatten(&internal)).map_err(|e| Error::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Parser, Debug)]
#[command(name = "siampf", version, about = "Two-branch Siamese single-object tracker")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// JSON configuration file (nested objects or dotted keys).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shorthand for `--set lambda=X`.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Shorthand for `--set data.output_dir=DIR`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Shorthand for `--set data.root=DIR`.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on the sequences under data.root and write a checkpoint.
    Train {
        /// Checkpoint path (default <output_dir>/checkpoint.safetensors).
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
    },
    /// Track one sequence and write per-frame boxes and diagnostics.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence directory (img/ and groundtruth_rect.txt).
        #[arg(long)]
        sequence: PathBuf,
        /// Initial box `x,y,w,h`; defaults to the first annotation.
        #[arg(long, value_name = "X,Y,W,H")]
        init_box: Option<String>,
        /// CSV of boxes (default <output_dir>/<sequence>_boxes.csv).
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON-lines diagnostics (default <output_dir>/<sequence>_diagnostics.jsonl).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// One-pass evaluation over every sequence under data.root.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the ground-truth replay instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
    },
    /// Evaluate the five cumulative ablation configurations.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl GlobalArgs {
    fn overrides(&self) -> std::result::Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            out.push((k.trim().to_string(), v.to_string()));
        }
        if let Some(s) = self.seed {
            out.push(("seed".into(), s.to_string()));
        }
        if let Some(l) = self.lambda {
            out.push(("lambda".into(), l.to_string()));
        }
        if let Some(o) = &self.out {
            out.push(("data.output_dir".into(), o.display().to_string()));
        }
        if let Some(d) = &self.data {
            out.push(("data.root".into(), d.display().to_string()));
        }
        Ok(out)
    }
}

/// Process exit status of a command.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status. Output goes to `out`, errors to `err`.
pub fn run<I, T>(args: I, env: &[(String, String)], out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_long_help(schema_help()).after_help(schema_help());
    let cli = match command
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let flags = match cli.global.overrides() {
        Ok(f) => f,
        Err(m) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_USAGE;
        }
    };
    let cfg = match parse_config(cli.global.config.as_deref(), env, &flags) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e);
            return exit_code(&e);
        }
    };
    match dispatch(&cli.command, &cfg, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn parse_box(s: &str) -> Result<TargetState> {
    let v: Vec<f64> = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::argument(format!("--init-box {s:?} is not x,y,w,h")))?;
    if v.len() != 4 {
        return Err(Error::argument(format!("--init-box {s:?} is not x,y,w,h")));
    }
    let b = TargetState::from_top_left(v[0], v[1], v[2], v[3]);
    b.check()?;
    Ok(b)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one subcommand with a validated configuration.
pub fn dispatch(command: &Command, cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let out_dir = cfg.output_dir();
    let say = |out: &mut dyn std::io::Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match command {
        Command::Train { checkpoint_out } => {
            let root = PathBuf::from(&cfg.data.root);
            let sequences: Vec<_> = load_dataset(&root)?
                .into_iter()
                .filter_map(|(name, s)| match s {
                    Ok(s) => Some(s),
                    Err(e) => {
                        say(out, format!("skipping {name}: {e}"));
                        None
                    }
                })
                .collect();
            let init = if cfg.data.pretrained_weights.is_empty() {
                Init::Random
            } else {
                Init::Pretrained(PathBuf::from(&cfg.data.pretrained_weights))
            };
            let model = SiameseModel::new(&cfg.model, &init, cfg.seed())?;
            let (ckpt, report) = train(&cfg.train, &sequences, model, &cfg.model, &mut |e| {
                say(out, format!("epoch {:>3}  lr {:.0e}  loss {:.5}", e.epoch, e.lr, e.mean_loss));
            })?;
            ensure_dir(&out_dir)?;
            let path = checkpoint_out
                .clone()
                .unwrap_or_else(|| out_dir.join("checkpoint.safetensors"));
            ckpt.save(&path)?;
            crate::evalbench::write_json(&out_dir.join("train_report.json"), &report)?;
            say(out, format!("checkpoint written to {}", path.display()));
        }
        Command::Track {
            checkpoint,
            sequence,
            init_box,
            output,
            diagnostics,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let seq = load_sequence(sequence)?;
            let first = match init_box {
                Some(s) => parse_box(s)?,
                None => seq.ground_truth[0],
            };
            let model = prepare_model(ckpt.model, cfg);
            let mut tracker = Tracker::init(&model, seq.frame(0)?.as_ref(), first, cfg.tracker.clone())?;
            let mut boxes = vec![first.to_top_left()];
            let mut diags = Vec::new();
            for i in 1..seq.len() {
                let (b, d) = tracker.track_frame(seq.frame(i)?.as_ref())?;
                boxes.push(b.to_top_left());
                diags.push(d);
            }
            ensure_dir(&out_dir)?;
            let csv = output
                .clone()
                .unwrap_or_else(|| out_dir.join(format!("{}_boxes.csv", seq.name)));
            let jsonl = diagnostics
                .clone()
                .unwrap_or_else(|| out_dir.join(format!("{}_diagnostics.jsonl", seq.name)));
            for p in [&csv, &jsonl] {
                if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                    ensure_dir(parent)?;
                }
            }
            write_boxes_csv(&csv, &boxes)?;
            write_diagnostics(&jsonl, &diags)?;
            say(out, format!("tracked {} frames of {}; boxes in {}", boxes.len(), seq.name, csv.display()));
        }
        Command::Eval { checkpoint, oracle } => {
            let sequences = load_dataset(Path::new(&cfg.data.root))?;
            let opts = BenchmarkOptions {
                output_dir: Some(out_dir.clone()),
                write_plots: true,
                switches: (!oracle).then_some(cfg.tracker.switches),
            };
            let tracker: Box<dyn SequenceTracker> = if *oracle {
                Box::new(OracleTracker)
            } else {
                let path = checkpoint.as_ref().expect("required unless --oracle");
                let model = prepare_model(Checkpoint::load(path)?.model, cfg);
                Box::new(ModelTracker::new(model, cfg.tracker.clone())?)
            };
            let report = run_benchmark_on(tracker.as_ref(), &sequences, &opts)?;
            for f in &report.failures {
                say(out, format!("failed {}: {}", f.name, f.error));
            }
            say(
                out,
                format!(
                    "{} sequences  AUC {:.4}  P@20 {:.4}  mean IoU {:.4}  report {}",
                    report.sequences.len(),
                    report.mean_auc,
                    report.mean_precision_at_20,
                    report.mean_iou,
                    out_dir.join("report.json").display()
                ),
            );
        }
        Command::Ablate { checkpoint } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let sequences = load_dataset(Path::new(&cfg.data.root))?;
            let report = run_ablation(
                &ckpt.model,
                &cfg.tracker,
                cfg.train.frozen_backbone_convs,
                cfg.seed(),
                &sequences,
                Some(&out_dir),
            )?;
            let _ = write!(out, "{}", crate::evalbench::ablation_markdown(&report));
        }
    }
    Ok(())
}

/// Applies the pretrained-backbone ablation switch to a loaded model.
fn prepare_model(mut model: SiameseModel<f32>, cfg: &RunConfig) -> SiameseModel<f32> {
    if !cfg.tracker.switches.pretrained_backbone {
        model.reinitialize_backbone(cfg.train.frozen_backbone_convs, cfg.seed());
    }
    model
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with("SIAMPF_")).collect();
    run(std::env::args_os(), &env, &mut std::io::stdout(), &mut std::io::stderr())
}
