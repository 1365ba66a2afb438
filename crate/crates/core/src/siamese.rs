//! The assembled two-branch Siamese model: embeddings, scoring heads and the
//! training graph (forward and backward through both branches, attention,
//! fusion and the balanced logistic loss).

use std::collections::BTreeSet;

use ndarray::{arr0, s, Array0, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use crate::correlation::{xcorr_raw, xcorr_raw_backward, ResponseMap};
use crate::labels_loss::{logistic_loss, logistic_loss_grad, LabelMap, WeightMap};
use crate::netmodel::{ChannelAttention, FeatureMap, Gradients, Init, Network, NetworkSpec, TensorRole};
use crate::util::rng_for;
use crate::{Error, Result, Scalar};

/// Per-channel ImageNet statistics on the 0–255 scale.
pub const PIXEL_MEAN: [f64; 3] = [123.675, 116.28, 103.53];
pub const PIXEL_STD: [f64; 3] = [58.395, 57.12, 57.375];

/// Structural model settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Divides every non-RGB channel count (1 = full width).
    pub width_divisor: usize,
    /// Channel reduction inside the attention block.
    pub attention_reduction: usize,
    /// Multiplier applied to raw correlations before the bias.
    pub response_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width_divisor: 1,
            attention_reduction: 4,
            response_scale: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Channel widths divided by 16 and a larger response scale, for
    /// single-core experiments on synthetic data.
    pub fn desk_scale() -> Self {
        Self {
            width_divisor: 16,
            attention_reduction: 4,
            response_scale: 1e-2,
        }
    }

    pub fn backbone_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::vgg_backbone().with_width_divisor(self.width_divisor)
    }

    pub fn branch_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::alexnet_branch().with_width_divisor(self.width_divisor)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.width_divisor == 0 {
            errs.push("model.width_divisor must be >= 1".to_string());
        }
        if self.attention_reduction == 0 {
            errs.push("model.attention_reduction must be >= 1".to_string());
        }
        if !(self.response_scale.is_finite() && self.response_scale > 0.0) {
            errs.push(format!("model.response_scale {} must be > 0", self.response_scale));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Which optional parts of the model take part in a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSwitches {
    pub side_branch: bool,
    pub attention: bool,
}

impl Default for ModelSwitches {
    fn default() -> Self {
        Self {
            side_branch: true,
            attention: true,
        }
    }
}

/// Exemplar embeddings kept fixed for a whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Exemplar<F> {
    /// Backbone features.
    pub v: FeatureMap<F>,
    /// Attention-weighted side-branch features.
    pub a: Option<FeatureMap<F>>,
}

/// Per-branch responses for one search patch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchResponses {
    pub v: ResponseMap,
    pub a: Option<ResponseMap>,
}

/// A batch of training pairs, channel-first on the 0–255 scale.
#[derive(Clone, Debug)]
pub struct PairBatch<F> {
    pub exemplars: Array4<F>,
    pub instances: Array4<F>,
    pub labels: Vec<LabelMap>,
    pub weights: Vec<WeightMap>,
}

impl<F> PairBatch<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub lambda: f64,
    pub frozen_convs: usize,
    pub switches: ModelSwitches,
}

pub struct StepOutput<F> {
    /// Batch-mean loss.
    pub loss: f64,
    pub grads: Gradients<F>,
    /// Fused response per pair.
    pub responses: Vec<ResponseMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel<F = f32> {
    pub backbone: Network<F>,
    pub branch: Network<F>,
    pub attention: ChannelAttention<F>,
    bias_v: Array0<F>,
    bias_a: Array0<F>,
    response_scale: f64,
}

impl<F: Scalar> SiameseModel<F> {
    /// Builds the model; random parts draw from named sub-streams of `seed`.
    pub fn new(cfg: &ModelConfig, init: &Init, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let backbone = Network::build(cfg.backbone_spec()?, init, &mut rng_for(seed, "init.backbone"))?;
        let branch = Network::random(cfg.branch_spec()?, &mut rng_for(seed, "init.branch"))?;
        let attention = ChannelAttention::random(
            branch.spec().output_channels(),
            cfg.attention_reduction,
            &mut rng_for(seed, "init.attention"),
        )?;
        Self::from_parts(backbone, branch, attention, cfg.response_scale)
    }

    pub fn from_parts(
        backbone: Network<F>,
        branch: Network<F>,
        attention: ChannelAttention<F>,
        response_scale: f64,
    ) -> Result<Self> {
        let tap = backbone.spec().tap_index.ok_or_else(|| Error::Spec {
            network: backbone.spec().name.clone(),
            reason: "backbone needs a tap point".into(),
        })?;
        let tap_channels = backbone.spec().channels_after(tap);
        if tap_channels != branch.spec().input_channels() {
            return Err(Error::Spec {
                network: branch.spec().name.clone(),
                reason: format!(
                    "expects {} input channels but the tap provides {tap_channels}",
                    branch.spec().input_channels()
                ),
            });
        }
        if attention.channels() != branch.spec().output_channels() {
            return Err(Error::shape(format!(
                "attention block has {} channels, branch emits {}",
                attention.channels(),
                branch.spec().output_channels()
            )));
        }
        Ok(Self {
            backbone,
            branch,
            attention,
            bias_v: arr0(F::zero()),
            bias_a: arr0(F::zero()),
            response_scale,
        })
    }

    pub fn response_scale(&self) -> f64 {
        self.response_scale
    }

    pub fn bias_v(&self) -> f64 {
        self.bias_v.sum().as_f64()
    }

    pub fn bias_a(&self) -> f64 {
        self.bias_a.sum().as_f64()
    }

    pub fn set_biases(&mut self, bias_v: f64, bias_a: f64) {
        self.bias_v = arr0(F::of(bias_v));
        self.bias_a = arr0(F::of(bias_a));
    }

    /// Stride of one response cell in input pixels.
    pub fn total_stride(&self) -> usize {
        self.backbone.spec().total_stride()
    }

    fn tap_index(&self) -> usize {
        self.backbone.spec().tap_index.expect("checked at construction")
    }

    /// Redraws the leading `count` backbone convolutions from `seed`.
    pub fn reinitialize_backbone(&mut self, count: usize, seed: u64) {
        self.backbone
            .reinitialize_convs(count, &mut rng_for(seed, "init.backbone.reset"));
    }

    fn normalize(patches: &Array4<F>) -> Array4<F> {
        let mut out = patches.clone();
        for mut sample in out.outer_iter_mut() {
            for (c, mut ch) in sample.outer_iter_mut().enumerate() {
                let (m, s) = (F::of(PIXEL_MEAN[c]), F::of(1.0 / PIXEL_STD[c]));
                ch.mapv_inplace(|v| (v - m) * s);
            }
        }
        out
    }

    fn check_rgb(patches: &Array4<F>) -> Result<()> {
        if patches.dim().1 != 3 {
            return Err(Error::shape(format!(
                "patches must have 3 channels, got {}",
                patches.dim().1
            )));
        }
        Ok(())
    }

    /// Backbone and (optionally) side-branch embeddings of a patch batch.
    pub fn embed(
        &self,
        patches: &Array4<F>,
        side_branch: bool,
    ) -> Result<(Array4<F>, Option<Array4<F>>)> {
        Self::check_rgb(patches)?;
        let out = self.backbone.forward(&Self::normalize(patches))?;
        let a = if side_branch {
            let tap = out.tap.expect("backbone records its tap");
            Some(self.branch.forward(&tap)?.output)
        } else {
            None
        };
        Ok((out.output, a))
    }

    pub fn embed_exemplar(&self, patch: &FeatureMap<F>, switches: ModelSwitches) -> Result<Exemplar<F>> {
        let x = patch.data().clone().insert_axis(Axis(0));
        let (v, a) = self.embed(&x, switches.side_branch)?;
        let take = |t: Array4<F>| FeatureMap::from_array_unchecked(t.index_axis_move(Axis(0), 0));
        let a = match a {
            Some(a) if switches.attention => Some(self.attention.forward_batch(&a)?),
            other => other,
        };
        Ok(Exemplar {
            v: take(v),
            a: a.map(take),
        })
    }

    fn head(&self, template: &Array2<F>, bias: f64) -> ResponseMap {
        let s = self.response_scale;
        ResponseMap::from_array_unchecked(template.mapv(|v| v.as_f64() * s + bias))
    }

    /// Scores every search patch in `patches` against `exemplar`.
    pub fn score(&self, exemplar: &Exemplar<F>, patches: &Array4<F>) -> Result<Vec<BranchResponses>> {
        let (v, a) = self.embed(patches, exemplar.a.is_some())?;
        let check = |t: &FeatureMap<F>, x: &Array4<F>| -> Result<()> {
            let (_, c, h, w) = x.dim();
            if t.channels() != c || t.height() > h || t.width() > w {
                return Err(Error::shape(format!(
                    "template {}×{}×{} does not fit instance {h}×{w}×{c}",
                    t.height(),
                    t.width(),
                    t.channels()
                )));
            }
            Ok(())
        };
        check(&exemplar.v, &v)?;
        if let (Some(t), Some(x)) = (&exemplar.a, &a) {
            check(t, x)?;
        }
        let mut out = Vec::with_capacity(v.dim().0);
        for b in 0..v.dim().0 {
            let (rv, _) = xcorr_raw(exemplar.v.data().view(), v.slice(s![b, .., .., ..]));
            let ra = match (&exemplar.a, &a) {
                (Some(t), Some(x)) => {
                    let (r, _) = xcorr_raw(t.data().view(), x.slice(s![b, .., .., ..]));
                    Some(self.head(&r, self.bias_a()))
                }
                _ => None,
            };
            out.push(BranchResponses {
                v: self.head(&rv, self.bias_v()),
                a: ra,
            });
        }
        Ok(out)
    }

    /// Training-mode forward and backward pass over one batch. Gradients
    /// cover exactly the trainable parameters for `opts`.
    pub fn loss_and_grads(&mut self, batch: &PairBatch<F>, opts: &StepOptions) -> Result<StepOutput<F>> {
        let n = batch.len();
        if n == 0 || batch.exemplars.dim().0 != n || batch.instances.dim().0 != n || batch.weights.len() != n {
            return Err(Error::shape(format!(
                "batch of {n} labels with {} exemplars, {} instances, {} weight maps",
                batch.exemplars.dim().0,
                batch.instances.dim().0,
                batch.weights.len()
            )));
        }
        Self::check_rgb(&batch.exemplars)?;
        Self::check_rgb(&batch.instances)?;
        let lambda = if opts.switches.side_branch { opts.lambda } else { 1.0 };
        let use_attention = opts.switches.side_branch && opts.switches.attention;
        let t0 = self.backbone.first_trainable_layer(opts.frozen_convs);
        let tap_trainable = t0 <= self.tap_index();

        let (oz, trace_z) = self.backbone.forward_train(&Self::normalize(&batch.exemplars), t0)?;
        let (ox, trace_x) = self.backbone.forward_train(&Self::normalize(&batch.instances), t0)?;

        struct BranchPass<F> {
            z: Array4<F>,
            x: Array4<F>,
            trace_z: crate::netmodel::Trace<F>,
            trace_x: crate::netmodel::Trace<F>,
            attention: Option<crate::netmodel::attention::AttentionCache<F>>,
        }
        let side = if opts.switches.side_branch {
            let (bz, trace_z) = self.branch.forward_train(oz.tap.as_ref().expect("tap"), 0)?;
            let (bx, trace_x) = self.branch.forward_train(ox.tap.as_ref().expect("tap"), 0)?;
            let (z, attention) = if use_attention {
                let (o, c) = self.attention.forward_train(&bz.output)?;
                (o, Some(c))
            } else {
                (bz.output, None)
            };
            Some(BranchPass {
                z,
                x: bx.output,
                trace_z,
                trace_x,
                attention,
            })
        } else {
            None
        };

        let scale = self.response_scale;
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut responses = Vec::with_capacity(n);
        let mut dvz = Array4::<F>::zeros(oz.output.raw_dim());
        let mut dvx = Array4::<F>::zeros(ox.output.raw_dim());
        let mut daz = side.as_ref().map(|p| Array4::<F>::zeros(p.z.raw_dim()));
        let mut dax = side.as_ref().map(|p| Array4::<F>::zeros(p.x.raw_dim()));
        let (mut dbias_v, mut dbias_a) = (0.0, 0.0);

        for b in 0..n {
            let tz = oz.output.slice(s![b, .., .., ..]);
            let tx = ox.output.slice(s![b, .., .., ..]);
            let (rv, cols_v) = xcorr_raw(tz, tx);
            let rv = self.head(&rv, self.bias_v());
            let branch = side.as_ref().map(|p| {
                let (ra, cols) = xcorr_raw(p.z.slice(s![b, .., .., ..]), p.x.slice(s![b, .., .., ..]));
                (self.head(&ra, self.bias_a()), cols)
            });
            let fused = match &branch {
                Some((ra, _)) => rv.values() * lambda + ra.values() * (1.0 - lambda),
                None => rv.values().clone(),
            };
            let fused = ResponseMap::from_array_unchecked(fused);
            loss += logistic_loss(&fused, &batch.labels[b], &batch.weights[b])? * inv_n;
            let g = logistic_loss_grad(&fused, &batch.labels[b], &batch.weights[b])? * inv_n;
            responses.push(fused);

            let gv = &g * lambda;
            dbias_v += gv.sum();
            let (dt, di) = xcorr_raw_backward(gv.mapv(|v| F::of(v * scale)).view(), &cols_v, tz, tx.dim());
            dvz.slice_mut(s![b, .., .., ..]).assign(&dt);
            dvx.slice_mut(s![b, .., .., ..]).assign(&di);
            if let (Some((_, cols)), Some(p)) = (&branch, &side) {
                let ga = &g * (1.0 - lambda);
                dbias_a += ga.sum();
                let (dt, di) = xcorr_raw_backward(
                    ga.mapv(|v| F::of(v * scale)).view(),
                    cols,
                    p.z.slice(s![b, .., .., ..]),
                    p.x.slice(s![b, .., .., ..]).dim(),
                );
                daz.as_mut().expect("branch").slice_mut(s![b, .., .., ..]).assign(&dt);
                dax.as_mut().expect("branch").slice_mut(s![b, .., .., ..]).assign(&di);
            }
        }

        let mut grads = Gradients::new();
        grads.add("head.bias_v".into(), arr0(F::of(dbias_v)).into_dyn());
        let (mut dtap_z, mut dtap_x) = (None, None);
        if let (Some(p), Some(daz), Some(dax)) = (&side, daz, dax) {
            grads.add("head.bias_a".into(), arr0(F::of(dbias_a)).into_dyn());
            let dbz = match &p.attention {
                Some(cache) => self.attention.backward(cache, &daz, &mut grads),
                None => daz,
            };
            dtap_z = self.branch.backward(&p.trace_z, dbz, None, tap_trainable, &mut grads);
            dtap_x = self.branch.backward(&p.trace_x, dax, None, tap_trainable, &mut grads);
        }
        self.backbone.backward(&trace_z, dvz, dtap_z.as_ref(), false, &mut grads);
        self.backbone.backward(&trace_x, dvx, dtap_x.as_ref(), false, &mut grads);

        Ok(StepOutput {
            loss,
            grads,
            responses,
        })
    }

    /// Names of the parameters a training step with `opts` updates.
    pub fn trainable_parameters(&self, opts: &StepOptions) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        let frozen: BTreeSet<String> = (1..=opts.frozen_convs)
            .map(|n| format!("backbone.conv{n}."))
            .collect();
        self.visit_tensors(&mut |name, _, role| {
            if role != TensorRole::Parameter {
                return;
            }
            let keep = if name.starts_with("backbone.") {
                !frozen.iter().any(|p| name.starts_with(p.as_str()))
            } else if name.starts_with("branch.") || name == "head.bias_a" {
                opts.switches.side_branch
            } else if name.starts_with("attention.") {
                opts.switches.side_branch && opts.switches.attention
            } else {
                true
            };
            if keep {
                names.insert(name);
            }
        });
        names
    }

    /// Visits every named tensor of the model.
    pub fn visit_tensors(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, F>, TensorRole)) {
        self.backbone.visit_tensors(f);
        self.branch.visit_tensors(f);
        self.attention.visit_tensors(f);
        f("head.bias_v".into(), self.bias_v.view().into_dyn(), TensorRole::Parameter);
        f("head.bias_a".into(), self.bias_a.view().into_dyn(), TensorRole::Parameter);
    }

    pub fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>, TensorRole)) {
        self.backbone.visit_tensors_mut(f);
        self.branch.visit_tensors_mut(f);
        self.attention.visit_tensors_mut(f);
        f("head.bias_v".into(), self.bias_v.view_mut().into_dyn(), TensorRole::Parameter);
        f("head.bias_a".into(), self.bias_a.view_mut().into_dyn(), TensorRole::Parameter);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels_loss::{balance_weights, make_label_map, GridPoint};
    use crate::netmodel::ConvLayerSpec as L;
    use rand::Rng;

    fn mini() -> SiameseModel<f64> {
        let backbone = NetworkSpec {
            name: "backbone".into(),
            layers: vec![
                L::conv(3, 3, 4, 1),
                L::maxpool(2, 2),
                L::conv(3, 4, 4, 1),
                L::conv(3, 4, 4, 1).without_post(),
            ],
            tap_index: Some(1),
        };
        let branch = NetworkSpec {
            name: "branch".into(),
            layers: vec![L::conv(3, 4, 4, 1), L::conv(3, 4, 4, 1).without_post()],
            tap_index: None,
        };
        let mut rng = rng_for(3, "test");
        SiameseModel::from_parts(
            Network::random(backbone, &mut rng).unwrap(),
            Network::random(branch, &mut rng).unwrap(),
            ChannelAttention::random(4, 2, &mut rng).unwrap(),
            0.1,
        )
        .unwrap()
    }

    fn batch(n: usize) -> PairBatch<f64> {
        let mut rng = rng_for(4, "batch");
        let labels = make_label_map(5, 2, 2.0, GridPoint::center_of(5)).unwrap();
        PairBatch {
            exemplars: Array4::from_shape_fn((n, 3, 14, 14), |_| rng.random_range(0.0..255.0)),
            instances: Array4::from_shape_fn((n, 3, 22, 22), |_| rng.random_range(0.0..255.0)),
            weights: vec![balance_weights(&labels); n],
            labels: vec![labels; n],
        }
    }

    #[test]
    fn grads_cover_trainable_set() {
        let mut m = mini();
        for frozen in [0, 1, 2] {
            let opts = StepOptions {
                lambda: 0.75,
                frozen_convs: frozen,
                switches: ModelSwitches::default(),
            };
            let out = m.loss_and_grads(&batch(2), &opts).unwrap();
            let names: BTreeSet<String> = out.grads.names().map(String::from).collect();
            assert_eq!(names, m.trainable_parameters(&opts), "frozen {frozen}");
        }
        let opts = StepOptions {
            lambda: 1.0,
            frozen_convs: 1,
            switches: ModelSwitches {
                side_branch: false,
                attention: true,
            },
        };
        let out = m.loss_and_grads(&batch(1), &opts).unwrap();
        assert!(out.grads.names().all(|n| n.starts_with("backbone.") || n == "head.bias_v"));
    }

    #[test]
    fn eval_score_matches_training_head_shape() {
        let m = mini();
        let b = batch(1);
        let z = FeatureMap::new(b.exemplars.index_axis(Axis(0), 0).to_owned()).unwrap();
        let ex = m.embed_exemplar(&z, ModelSwitches::default()).unwrap();
        let r = m.score(&ex, &b.instances).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].v.values().dim(), (5, 5));
        assert_eq!(r[0].a.as_ref().unwrap().values().dim(), (5, 5));
    }
}
