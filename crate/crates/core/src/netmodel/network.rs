use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array4, ArrayD, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::layers::{ConvBlock, ConvCache, MaxPool, PoolCache};
use super::{FeatureMap, LayerKind, NetworkSpec, PostOp};
use crate::{Error, Result, Scalar};

/// How the weights of a freshly built network are obtained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Init {
    Random,
    /// Map the first ten convolutions from a VGG16 weight file.
    Pretrained(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<F> {
    Conv(ConvBlock<F>),
    MaxPool(MaxPool),
}

/// An executable feature network built from a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<F>>,
}

/// Outputs of a forward pass: the final activation and, when the spec has a
/// tap point, the activation after the tap layer.
#[derive(Clone, Debug)]
pub struct NetworkOutput<F> {
    pub tap: Option<Array4<F>>,
    pub output: Array4<F>,
}

enum LayerCache<F> {
    Conv(ConvCache<F>),
    Pool(PoolCache),
}

/// Activations recorded by [`Network::forward_train`] for the trainable
/// suffix of the layer stack.
pub struct Trace<F> {
    start: usize,
    caches: Vec<LayerCache<F>>,
}

/// Whether a named tensor is optimized or only carried along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Parameter,
    Buffer,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<F> {
    map: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    /// Accumulates into an existing entry.
    pub fn add(&mut self, name: String, grad: ArrayD<F>) {
        match self.map.get_mut(&name) {
            Some(g) => *g += &grad,
            None => {
                self.map.insert(name, grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<F>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

impl<F: Scalar> Network<F> {
    /// Builds a network with He-initialized convolutions and fresh batch
    /// norm statistics.
    pub fn random(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv => Layer::Conv(ConvBlock::random(
                    l.kernel,
                    l.in_channels.unwrap_or(0),
                    l.out_channels.unwrap_or(0),
                    l.stride,
                    l.post == PostOp::BatchnormRelu,
                    rng,
                )),
                LayerKind::Maxpool => Layer::MaxPool(MaxPool {
                    kernel: l.kernel,
                    stride: l.stride,
                }),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Builds a network, optionally seeding its leading convolutions from a
    /// pretrained VGG16 file (see [`super::weights::load_vgg16`]).
    pub fn build(spec: NetworkSpec, init: &Init, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::random(spec, rng)?;
        if let Init::Pretrained(path) = init {
            super::weights::load_vgg16(&mut net, path)?;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// The `n`-th convolution block (1-based).
    pub fn conv(&self, n: usize) -> Option<&ConvBlock<F>> {
        let i = self.spec.conv_layer_index(n)?;
        match &self.layers[i] {
            Layer::Conv(c) => Some(c),
            Layer::MaxPool(_) => None,
        }
    }

    pub fn conv_mut(&mut self, n: usize) -> Option<&mut ConvBlock<F>> {
        let i = self.spec.conv_layer_index(n)?;
        match &mut self.layers[i] {
            Layer::Conv(c) => Some(c),
            Layer::MaxPool(_) => None,
        }
    }

    /// Re-draws the first `count` convolutions (and resets their norms).
    pub fn reinitialize_convs(&mut self, count: usize, rng: &mut impl Rng) {
        for n in 1..=count.min(self.spec.conv_count()) {
            let i = self.spec.conv_layer_index(n).expect("conv exists");
            let l = &self.spec.layers[i];
            self.layers[i] = Layer::Conv(ConvBlock::random(
                l.kernel,
                l.in_channels.unwrap_or(0),
                l.out_channels.unwrap_or(0),
                l.stride,
                l.post == PostOp::BatchnormRelu,
                rng,
            ));
        }
    }

    /// Index of the first layer that trains when the leading `frozen_convs`
    /// convolutions are frozen.
    pub fn first_trainable_layer(&self, frozen_convs: usize) -> usize {
        self.spec
            .conv_layer_index(frozen_convs + 1)
            .unwrap_or(self.layers.len())
    }

    fn check_input(&self, (_, c, h, w): (usize, usize, usize, usize)) -> Result<()> {
        let expect = self.spec.input_channels();
        if c != expect {
            return Err(Error::shape(format!(
                "{} expects {expect} input channels, got {c}",
                self.spec.name
            )));
        }
        for side in [h, w] {
            if let Err(i) = self.spec.side_trace(side) {
                let reaching = if i == 0 {
                    side
                } else {
                    self.spec.side_trace_prefix(side, i)
                };
                return Err(Error::shape(format!(
                    "{h}×{w} input too small for {}: layer {} (index {i}) needs {} but receives {reaching}",
                    self.spec.name,
                    self.spec.layer_name(i),
                    self.spec.layers[i].kernel,
                )));
            }
        }
        Ok(())
    }

    /// Evaluation-mode forward pass over a `(N, C, H, W)` batch.
    pub fn forward(&self, x: &Array4<F>) -> Result<NetworkOutput<F>> {
        self.check_input(x.dim())?;
        let mut tap = None;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv(c) => c.forward_eval(&cur),
                Layer::MaxPool(p) => p.forward_eval(&cur),
            };
            if self.spec.tap_index == Some(i) {
                tap = Some(cur.clone());
            }
        }
        Ok(NetworkOutput { tap, output: cur })
    }

    /// Training forward pass. Layers before `trainable_from` run in
    /// evaluation mode and record nothing; later layers use batch
    /// statistics and record what [`Network::backward`] needs.
    pub fn forward_train(
        &mut self,
        x: &Array4<F>,
        trainable_from: usize,
    ) -> Result<(NetworkOutput<F>, Trace<F>)> {
        self.check_input(x.dim())?;
        let mut tap = None;
        let mut caches = Vec::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            cur = if i < trainable_from {
                match layer {
                    Layer::Conv(c) => c.forward_eval(&cur),
                    Layer::MaxPool(p) => p.forward_eval(&cur),
                }
            } else {
                match layer {
                    Layer::Conv(c) => {
                        let (out, cache) = c.forward_train(&cur);
                        caches.push(LayerCache::Conv(cache));
                        out
                    }
                    Layer::MaxPool(p) => {
                        let (out, cache) = p.forward_train(&cur);
                        caches.push(LayerCache::Pool(cache));
                        out
                    }
                }
            };
            if self.spec.tap_index == Some(i) {
                tap = Some(cur.clone());
            }
        }
        Ok((
            NetworkOutput { tap, output: cur },
            Trace {
                start: trainable_from.min(self.layers.len()),
                caches,
            },
        ))
    }

    /// Backpropagates `grad_output` (and `grad_tap`, injected at the tap
    /// layer's output) through the traced layers, accumulating parameter
    /// gradients. Returns the input gradient when `need_input` is set and
    /// the trace reaches layer 0.
    pub fn backward(
        &self,
        trace: &Trace<F>,
        grad_output: Array4<F>,
        grad_tap: Option<&Array4<F>>,
        need_input: bool,
        grads: &mut Gradients<F>,
    ) -> Option<Array4<F>> {
        let mut grad = grad_output;
        for i in (trace.start..self.layers.len()).rev() {
            if self.spec.tap_index == Some(i) {
                if let Some(gt) = grad_tap {
                    grad += gt;
                }
            }
            let need = i > trace.start || (need_input && trace.start == 0);
            let cache = &trace.caches[i - trace.start];
            let prefix = format!("{}.{}", self.spec.name, self.spec.layer_name(i));
            grad = match (&self.layers[i], cache) {
                (Layer::Conv(block), LayerCache::Conv(cache)) => {
                    let g = block.backward(cache, grad, need);
                    grads.add(format!("{prefix}.weight"), g.weight.into_dyn());
                    grads.add(format!("{prefix}.bias"), g.bias.into_dyn());
                    if let Some((gamma, beta)) = g.norm {
                        grads.add(format!("{prefix}.bn.weight"), gamma.into_dyn());
                        grads.add(format!("{prefix}.bn.bias"), beta.into_dyn());
                    }
                    g.input?
                }
                (Layer::MaxPool(pool), LayerCache::Pool(cache)) => {
                    if !need {
                        return None;
                    }
                    pool.backward(cache, &grad)
                }
                _ => unreachable!("trace matches layer kinds"),
            };
        }
        (need_input && trace.start == 0).then_some(grad)
    }

    /// Visits every named tensor (`<net>.conv<n>.weight`, `.bias`,
    /// `.bn.weight`, `.bn.bias`, `.bn.running_mean`, `.bn.running_var`).
    pub fn visit_tensors(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, F>, TensorRole)) {
        use TensorRole::*;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv(c) = layer {
                let p = format!("{}.{}", self.spec.name, self.spec.layer_name(i));
                f(format!("{p}.weight"), c.weight.view().into_dyn(), Parameter);
                f(format!("{p}.bias"), c.bias.view().into_dyn(), Parameter);
                if let Some(bn) = &c.norm {
                    f(format!("{p}.bn.weight"), bn.gamma.view().into_dyn(), Parameter);
                    f(format!("{p}.bn.bias"), bn.beta.view().into_dyn(), Parameter);
                    f(format!("{p}.bn.running_mean"), bn.running_mean.view().into_dyn(), Buffer);
                    f(format!("{p}.bn.running_var"), bn.running_var.view().into_dyn(), Buffer);
                }
            }
        }
    }

    pub fn visit_tensors_mut(
        &mut self,
        f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>, TensorRole),
    ) {
        use TensorRole::*;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Conv(c) = layer {
                let p = format!("{}.{}", self.spec.name, self.spec.layer_name(i));
                f(format!("{p}.weight"), c.weight.view_mut().into_dyn(), Parameter);
                f(format!("{p}.bias"), c.bias.view_mut().into_dyn(), Parameter);
                if let Some(bn) = c.norm.as_mut() {
                    f(format!("{p}.bn.weight"), bn.gamma.view_mut().into_dyn(), Parameter);
                    f(format!("{p}.bn.bias"), bn.beta.view_mut().into_dyn(), Parameter);
                    f(format!("{p}.bn.running_mean"), bn.running_mean.view_mut().into_dyn(), Buffer);
                    f(format!("{p}.bn.running_var"), bn.running_var.view_mut().into_dyn(), Buffer);
                }
            }
        }
    }

    /// Runs a backbone on one image: `(tap, final)` feature maps.
    pub fn forward_backbone(&self, image: &FeatureMap<F>) -> Result<(FeatureMap<F>, FeatureMap<F>)> {
        if self.spec.tap_index.is_none() {
            return Err(Error::shape(format!("{} has no tap point", self.spec.name)));
        }
        let x = image.data().clone().insert_axis(ndarray::Axis(0));
        let out = self.forward(&x)?;
        let tap = out.tap.expect("tap recorded").index_axis_move(ndarray::Axis(0), 0);
        let fin = out.output.index_axis_move(ndarray::Axis(0), 0);
        Ok((
            FeatureMap::from_array_unchecked(tap),
            FeatureMap::from_array_unchecked(fin),
        ))
    }

    /// Runs a side branch on one tapped feature map.
    pub fn forward_branch(&self, tap: &FeatureMap<F>) -> Result<FeatureMap<F>> {
        let x = tap.data().clone().insert_axis(ndarray::Axis(0));
        let out = self.forward(&x)?;
        Ok(FeatureMap::from_array_unchecked(
            out.output.index_axis_move(ndarray::Axis(0), 0),
        ))
    }
}

impl NetworkSpec {
    /// Side after the first `count` layers (all of which must fit).
    pub(crate) fn side_trace_prefix(&self, input: usize, count: usize) -> usize {
        self.layers[..count]
            .iter()
            .fold(input, |s, l| l.output_side(s).unwrap_or(0))
    }
}
