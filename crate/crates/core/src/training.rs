//! Training-pair sampling, the SGD loop with a frozen backbone prefix, and
//! checkpoint files.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array4, ArrayD, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evalbench::TrackSequence;
use crate::frame::{context_side, crop_patch, crop_square, EXEMPLAR_SIZE, INSTANCE_SIZE};
use crate::labels_loss::{balance_weights, make_label_map, GridPoint, LabelMap};
use crate::netmodel::weights::{read_tensor_file, write_tensor_file, TensorData, TensorFile};
use crate::netmodel::{ChannelAttention, FeatureMap, Gradients, Network, NetworkSpec, TensorRole};
use crate::siamese::{ModelConfig, ModelSwitches, PairBatch, SiameseModel, StepOptions};
use crate::util::{rng_for, sub_seed};
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_FORMAT: &str = "siampf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches drawn per epoch.
    pub steps_per_epoch: usize,
    /// `(first epoch, learning rate)` plateaus.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    /// Leading backbone convolutions kept fixed.
    pub frozen_backbone_convs: usize,
    pub seed: u64,
    /// Largest frame gap between exemplar and instance.
    pub max_gap: usize,
    /// Largest instance-crop shift in patch pixels, per axis.
    pub max_translation: f64,
    /// Largest relative instance-crop scale change.
    pub max_scale_jitter: f64,
    pub context: f64,
    /// Positive-label radius in input pixels.
    pub label_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            steps_per_epoch: 50,
            lr_schedule: vec![(0, 1e-1), (20, 1e-2), (40, 1e-3)],
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 0.75,
            frozen_backbone_convs: 9,
            seed: 0,
            max_gap: 100,
            max_translation: 32.0,
            max_scale_jitter: 0.05,
            context: 0.5,
            label_radius: 16.0,
        }
    }
}

impl TrainConfig {
    /// Twelve short epochs with the default schedule compressed to match.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 12,
            steps_per_epoch: 25,
            lr_schedule: vec![(0, 1e-1), (6, 1e-2), (10, 1e-3)],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            errs.push("train.epochs, train.batch_size and train.steps_per_epoch must be >= 1".to_string());
        }
        match self.lr_schedule.first() {
            None => errs.push("train.lr_schedule is empty".to_string()),
            Some((e, _)) if *e != 0 => errs.push("train.lr_schedule must start at epoch 0".to_string()),
            _ => {}
        }
        for w in self.lr_schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                errs.push("train.lr_schedule epochs must increase".to_string());
            }
            if w[1].1 >= w[0].1 {
                errs.push("train.lr_schedule rates must decrease".to_string());
            }
        }
        if self.lr_schedule.iter().any(|(e, lr)| *e >= self.epochs || !(*lr > 0.0)) {
            errs.push("train.lr_schedule entries need epoch < epochs and rate > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push(format!("train.momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("train.weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            errs.push(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.max_gap == 0 {
            errs.push("train.max_gap must be >= 1".to_string());
        }
        if !(self.max_translation >= 0.0 && (0.0..0.5).contains(&self.max_scale_jitter)) {
            errs.push("train jitter must be nonnegative (scale jitter < 0.5)".to_string());
        }
        if !(self.label_radius >= 0.0 && self.context >= 0.0) {
            errs.push("train.label_radius and train.context must be >= 0".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Learning rate of the plateau containing `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .rev()
            .find(|(e, _)| *e <= epoch)
            .or(self.lr_schedule.first())
            .map(|(_, lr)| *lr)
            .unwrap_or(0.0)
    }
}

/// Response-map geometry of a backbone: side of the score map for the
/// exemplar/instance patch sizes and the stride of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResponseGeometry {
    pub size: usize,
    pub stride: usize,
}

impl ResponseGeometry {
    pub fn of(spec: &NetworkSpec) -> Result<Self> {
        let z = spec.output_size(EXEMPLAR_SIZE);
        let x = spec.output_size(INSTANCE_SIZE);
        match (z, x) {
            (Some(z), Some(x)) if x >= z => Ok(Self {
                size: x - z + 1,
                stride: spec.total_stride(),
            }),
            _ => Err(Error::shape(format!(
                "{} cannot embed {EXEMPLAR_SIZE}/{INSTANCE_SIZE} patches",
                spec.name
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<F = f32> {
    pub exemplar_patch: FeatureMap<F>,
    pub instance_patch: FeatureMap<F>,
    pub label: LabelMap,
}

/// Draws one pair: two frames of one sequence at most `max_gap` apart, the
/// earlier one as exemplar, the later one cropped with a random shift and
/// scale change that sets the label center.
pub fn sample_pair<F: Scalar>(
    dataset: &[TrackSequence],
    cfg: &TrainConfig,
    geometry: ResponseGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPair<F>> {
    let eligible: Vec<&TrackSequence> = dataset.iter().filter(|s| s.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::Data("no sequence with at least two annotated frames".into()));
    }
    let seq = eligible[rng.random_range(0..eligible.len())];
    let n = seq.len();
    let gap = cfg.max_gap.min(n - 1);
    let first = rng.random_range(0..n - 1);
    let last = rng.random_range(first + 1..=(first + gap).min(n - 1));

    let zf = seq.frame(first)?;
    let zbox = seq.ground_truth[first];
    let exemplar_patch = crop_patch(&zf, &zbox, EXEMPLAR_SIZE, cfg.context)?;

    let xf = seq.frame(last)?;
    let xbox = seq.ground_truth[last];
    let (tx, ty) = if cfg.max_translation > 0.0 {
        (
            rng.random_range(-cfg.max_translation..=cfg.max_translation),
            rng.random_range(-cfg.max_translation..=cfg.max_translation),
        )
    } else {
        (0.0, 0.0)
    };
    let jitter = if cfg.max_scale_jitter > 0.0 {
        1.0 + rng.random_range(-cfg.max_scale_jitter..=cfg.max_scale_jitter)
    } else {
        1.0
    };
    let side = context_side(&xbox, cfg.context) * INSTANCE_SIZE as f64 / EXEMPLAR_SIZE as f64 * jitter;
    let to_frame = side / INSTANCE_SIZE as f64;
    let data = crop_square(
        &xf,
        xbox.center_x + tx * to_frame,
        xbox.center_y + ty * to_frame,
        side,
        INSTANCE_SIZE,
        xf.channel_means(),
    );
    let c = (geometry.size as f64 - 1.0) / 2.0;
    let k = geometry.stride as f64;
    let center = GridPoint::new(
        (c - ty / k).clamp(0.0, geometry.size as f64 - 1.0),
        (c - tx / k).clamp(0.0, geometry.size as f64 - 1.0),
    );
    let label = make_label_map(geometry.size, geometry.stride, cfg.label_radius, center)?;
    Ok(TrainingPair {
        exemplar_patch,
        instance_patch: FeatureMap::new(data)?,
        label,
    })
}

/// The `index`-th pair of `epoch`, independent of how pairs are scheduled.
pub fn sample_indexed_pair<F: Scalar>(
    dataset: &[TrackSequence],
    cfg: &TrainConfig,
    geometry: ResponseGeometry,
    epoch: usize,
    index: usize,
) -> Result<TrainingPair<F>> {
    let mut rng = rng_for(sub_seed(cfg.seed, "pairs"), &format!("{epoch}.{index}"));
    sample_pair(dataset, cfg, geometry, &mut rng)
}

/// Stacks pairs into a training batch with balanced weights.
pub fn collate<F: Scalar>(pairs: &[TrainingPair<F>]) -> PairBatch<F> {
    let z: Vec<_> = pairs.iter().map(|p| p.exemplar_patch.data().view()).collect();
    let x: Vec<_> = pairs.iter().map(|p| p.instance_patch.data().view()).collect();
    let labels: Vec<LabelMap> = pairs.iter().map(|p| p.label.clone()).collect();
    PairBatch {
        exemplars: ndarray::stack(Axis(0), &z).expect("equal patch sizes"),
        instances: ndarray::stack(Axis(0), &x).expect("equal patch sizes"),
        weights: labels.iter().map(balance_weights).collect(),
        labels,
    }
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug, Default)]
pub struct Sgd<F> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Updates every parameter that has a gradient.
    pub fn step(&mut self, model: &mut SiameseModel<F>, grads: &Gradients<F>, lr: f64) {
        let (m, wd, lr) = (F::of(self.momentum), F::of(self.weight_decay), F::of(lr));
        let velocity = &mut self.velocity;
        model.visit_tensors_mut(&mut |name, mut w, role| {
            if role != TensorRole::Parameter {
                return;
            }
            let Some(g) = grads.get(&name) else { return };
            let v = velocity
                .entry(name)
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *v).and(g).and(&w).for_each(|v, g, w| {
                *v = m * *v + *g + wd * *w;
            });
            w.zip_mut_with(v, |w, v| *w -= lr * *v);
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochSummary>,
}

/// Runs `cfg.epochs` epochs of SGD on pairs drawn from `dataset`.
pub fn train_model<F: Scalar>(
    cfg: &TrainConfig,
    dataset: &[TrackSequence],
    model: &mut SiameseModel<F>,
    switches: ModelSwitches,
    progress: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainReport> {
    cfg.validate()?;
    let conv_count = model.backbone.spec().conv_count();
    if cfg.frozen_backbone_convs > conv_count {
        return Err(Error::Config(vec![format!(
            "train.frozen_backbone_convs {} exceeds the backbone's {conv_count} convolutions",
            cfg.frozen_backbone_convs
        )]));
    }
    let geometry = ResponseGeometry::of(model.backbone.spec())?;
    let opts = StepOptions {
        lambda: cfg.lambda,
        frozen_convs: cfg.frozen_backbone_convs,
        switches,
    };
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let pairs = (0..cfg.batch_size)
                .into_par_iter()
                .map(|k| sample_indexed_pair(dataset, cfg, geometry, epoch, step * cfg.batch_size + k))
                .collect::<Result<Vec<TrainingPair<F>>>>()?;
            let out = model.loss_and_grads(&collate(&pairs), &opts)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: out.loss,
                });
            }
            sgd.step(model, &out.grads, lr);
            total += out.loss;
            report.step_losses.push(out.loss);
        }
        let summary = EpochSummary {
            epoch,
            lr,
            mean_loss: total / cfg.steps_per_epoch as f64,
        };
        progress(&summary);
        report.epochs.push(summary);
    }
    Ok(report)
}

/// Repeated SGD steps on one fixed batch; returns the loss before each step.
pub fn fit_batch<F: Scalar>(
    model: &mut SiameseModel<F>,
    batch: &PairBatch<F>,
    opts: &StepOptions,
    sgd: &mut Sgd<F>,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let out = model.loss_and_grads(batch, opts)?;
        if !out.loss.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step,
                loss: out.loss,
            });
        }
        sgd.step(model, &out.grads, lr);
        losses.push(out.loss);
    }
    Ok(losses)
}

/// Trained weights together with the settings that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SiameseModel<f32>,
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = TensorFile::default();
        let meta = &mut file.metadata;
        let backbone = self.model.backbone.spec();
        let branch = self.model.branch.spec();
        meta.insert("format".into(), CHECKPOINT_FORMAT.into());
        meta.insert("format_version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("backbone_spec".into(), serde_json::to_string(backbone).expect("spec"));
        meta.insert("branch_spec".into(), serde_json::to_string(branch).expect("spec"));
        meta.insert("backbone_digest".into(), backbone.digest());
        meta.insert("branch_digest".into(), branch.digest());
        meta.insert("model_config".into(), serde_json::to_string(&self.model_config).expect("config"));
        meta.insert(
            "response_scale".into(),
            serde_json::to_string(&self.model.response_scale()).expect("number"),
        );
        if let Some(tc) = &self.train_config {
            meta.insert("train_config".into(), serde_json::to_string(tc).expect("config"));
        }
        let tensors = &mut file.tensors;
        self.model.visit_tensors(&mut |name, view, _| {
            tensors.insert(name, TensorData::from_array(&view));
        });
        write_tensor_file(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = read_tensor_file(path)?;
        let load_err = |msg: String| Error::Load(format!("{}: {msg}", path.display()));
        let meta = |key: &str| {
            file.metadata
                .get(key)
                .ok_or_else(|| load_err(format!("missing {key}")))
        };
        if meta("format")? != CHECKPOINT_FORMAT {
            return Err(load_err("not a checkpoint file".into()));
        }
        let version = meta("format_version")?;
        if version != &CHECKPOINT_VERSION.to_string() {
            return Err(load_err(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let parse_spec = |key: &str| -> Result<NetworkSpec> {
            let spec: NetworkSpec =
                serde_json::from_str(meta(key)?).map_err(|e| load_err(format!("{key}: {e}")))?;
            spec.validate()?;
            Ok(spec)
        };
        let backbone_spec = parse_spec("backbone_spec")?;
        let branch_spec = parse_spec("branch_spec")?;
        for (spec, key) in [(&backbone_spec, "backbone_digest"), (&branch_spec, "branch_digest")] {
            if &spec.digest() != meta(key)? {
                return Err(load_err(format!("{} spec does not match its digest", spec.name)));
            }
        }
        let model_config: ModelConfig = serde_json::from_str(meta("model_config")?)
            .map_err(|e| load_err(format!("model_config: {e}")))?;
        let response_scale: f64 = serde_json::from_str(meta("response_scale")?)
            .map_err(|e| load_err(format!("response_scale: {e}")))?;
        let train_config = match file.metadata.get("train_config") {
            Some(t) => Some(serde_json::from_str(t).map_err(|e| load_err(format!("train_config: {e}")))?),
            None => None,
        };

        let mut rng = rng_for(0, "checkpoint.placeholder");
        let backbone = Network::random(backbone_spec, &mut rng)?;
        let branch = Network::random(branch_spec, &mut rng)?;
        let attention =
            ChannelAttention::random(branch.spec().output_channels(), model_config.attention_reduction, &mut rng)?;
        let mut model = SiameseModel::from_parts(backbone, branch, attention, response_scale)?;
        let mut problem = None;
        let mut seen = 0usize;
        model.visit_tensors_mut(&mut |name, mut view, _| {
            if problem.is_some() {
                return;
            }
            match file.tensors.get(&name) {
                None => problem = Some(format!("missing tensor {name}")),
                Some(t) if t.shape != view.shape() => {
                    problem = Some(format!(
                        "tensor {name} has shape {:?}, layer expects {:?}",
                        t.shape,
                        view.shape()
                    ))
                }
                Some(t) => {
                    view.assign(&t.to_array::<f32>());
                    seen += 1;
                }
            }
        });
        if let Some(p) = problem {
            return Err(load_err(p));
        }
        if seen != file.tensors.len() {
            return Err(load_err(format!(
                "{} tensors in file, model uses {seen}",
                file.tensors.len()
            )));
        }
        Ok(Self {
            model,
            model_config,
            train_config,
        })
    }

    /// Loads and checks that the stored networks match `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        for (have, want) in [
            (ckpt.model.backbone.spec(), expected.backbone_spec()?),
            (ckpt.model.branch.spec(), expected.branch_spec()?),
        ] {
            if let Some(i) = first_mismatch(have, &want) {
                return Err(Error::Load(format!(
                    "{}: {} layer {} differs from the configured network",
                    path.display(),
                    want.name,
                    want.layer_name(i.min(want.layers.len().saturating_sub(1)))
                )));
            }
        }
        Ok(ckpt)
    }
}

fn first_mismatch(a: &NetworkSpec, b: &NetworkSpec) -> Option<usize> {
    let n = a.layers.len().max(b.layers.len());
    (0..n)
        .find(|&i| a.layers.get(i) != b.layers.get(i))
        .or_else(|| (a.tap_index != b.tap_index || a.name != b.name).then_some(0))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// Trains a fresh copy of `model` and packages the result.
pub fn train(
    cfg: &TrainConfig,
    dataset: &[TrackSequence],
    mut model: SiameseModel<f32>,
    model_config: &ModelConfig,
    progress: &mut dyn FnMut(&EpochSummary),
) -> Result<(Checkpoint, TrainReport)> {
    let report = train_model(cfg, dataset, &mut model, ModelSwitches::default(), progress)?;
    Ok((
        Checkpoint {
            model,
            model_config: model_config.clone(),
            train_config: Some(cfg.clone()),
        },
        report,
    ))
}

/// Stacks single patches into a `(N, 3, S, S)` batch.
pub fn stack_patches<F: Scalar>(patches: &[FeatureMap<F>]) -> Array4<F> {
    let views: Vec<_> = patches.iter().map(|p| p.data().view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal patch sizes")
}
