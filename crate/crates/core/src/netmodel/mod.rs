//! Feature-extraction networks.
//!
//! Both branches are declared as a [`NetworkSpec`], an ordered list of
//! convolution and max-pooling layers, and executed by [`Network`]. All
//! layers use valid (unpadded) windows, so spatial sizes follow
//! `out = (in - kernel) / stride + 1` layer by layer; [`NetworkSpec::output_size`]
//! is the closed form of that arithmetic.
//!
//! The default backbone taps its side branch after the second max-pool
//! (28×28×128 for a 127 exemplar, 60×60×128 for a 255 instance). This is the
//! only tap point at which the backbone (3→19) and branch (5→21) heads both
//! produce 17×17 score maps; a tap directly after the third convolution
//! would not.

pub(crate) mod attention;
pub(crate) mod layers;
mod network;
pub mod weights;

use std::fmt;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result, Scalar};

pub use attention::{apply_attention, AttentionBlockParams, ChannelAttention};
pub use layers::{BatchNorm, ConvBlock, MaxPool};
pub use network::{Gradients, Init, Layer, Network, NetworkOutput, TensorRole, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Maxpool,
}

/// Post-processing fused into a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostOp {
    BatchnormRelu,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    pub stride: usize,
    pub post: PostOp,
}

impl ConvLayerSpec {
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            kernel,
            in_channels: Some(in_channels),
            out_channels: Some(out_channels),
            stride,
            post: PostOp::BatchnormRelu,
        }
    }

    pub fn maxpool(kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Maxpool,
            kernel,
            in_channels: None,
            out_channels: None,
            stride,
            post: PostOp::None,
        }
    }

    pub fn without_post(mut self) -> Self {
        self.post = PostOp::None;
        self
    }

    /// Valid-window output side for an input side, `None` when it collapses.
    pub fn output_side(&self, input: usize) -> Option<usize> {
        (input >= self.kernel).then(|| (input - self.kernel) / self.stride + 1)
    }
}

/// Declarative layer list of one feature branch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<ConvLayerSpec>,
    /// Layer whose output feeds the side branch (backbone only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_index: Option<usize>,
}

impl NetworkSpec {
    /// Modified VGG16 backbone: 11 convolutions, three 2×2 pools, output
    /// 256 channels, side-branch tap after the second pool.
    pub fn vgg_backbone() -> Self {
        use ConvLayerSpec as L;
        Self {
            name: "backbone".into(),
            layers: vec![
                L::conv(3, 3, 64, 1),
                L::conv(3, 64, 64, 1),
                L::maxpool(2, 2),
                L::conv(3, 64, 128, 1),
                L::conv(3, 128, 128, 1),
                L::maxpool(2, 2),
                L::conv(3, 128, 256, 1),
                L::conv(3, 256, 256, 1),
                L::conv(3, 256, 256, 1),
                L::maxpool(2, 2),
                L::conv(3, 256, 512, 1),
                L::conv(3, 512, 512, 1),
                L::conv(3, 512, 512, 1),
                L::conv(3, 512, 256, 1).without_post(),
            ],
            tap_index: Some(5),
        }
    }

    /// AlexNet-like side branch consuming the 128-channel tap.
    pub fn alexnet_branch() -> Self {
        use ConvLayerSpec as L;
        Self {
            name: "branch".into(),
            layers: vec![
                L::conv(5, 128, 256, 1),
                L::maxpool(3, 2),
                L::conv(3, 256, 384, 1),
                L::conv(3, 384, 256, 1),
                L::conv(3, 256, 256, 1).without_post(),
            ],
            tap_index: None,
        }
    }

    /// Same geometry with every channel count except the RGB input divided
    /// by `divisor`. Used for desk-scale models.
    pub fn with_width_divisor(&self, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::argument("width divisor must be >= 1"));
        }
        let scale = |c: usize| {
            if c == 3 {
                Ok(3)
            } else if !c.is_multiple_of(divisor) {
                Err(Error::Spec {
                    network: self.name.clone(),
                    reason: format!("{c} channels not divisible by width divisor {divisor}"),
                })
            } else {
                Ok(c / divisor)
            }
        };
        let mut out = self.clone();
        for layer in &mut out.layers {
            if let Some(c) = layer.in_channels.as_mut() {
                *c = scale(*c)?;
            }
            if let Some(c) = layer.out_channels.as_mut() {
                *c = scale(*c)?;
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: String| Error::Spec {
            network: self.name.clone(),
            reason,
        };
        if self.layers.is_empty() {
            return Err(err("no layers".into()));
        }
        let mut channels: Option<usize> = None;
        let mut last_conv = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let name = self.layer_name(i);
            if layer.kernel == 0 || layer.stride == 0 {
                return Err(err(format!("{name}: kernel and stride must be >= 1")));
            }
            match layer.kind {
                LayerKind::Conv => {
                    let (cin, cout) = match (layer.in_channels, layer.out_channels) {
                        (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
                        _ => return Err(err(format!("{name}: conv needs channel counts >= 1"))),
                    };
                    if let Some(c) = channels {
                        if c != cin {
                            return Err(err(format!(
                                "{name}: expects {cin} input channels but receives {c}"
                            )));
                        }
                    }
                    channels = Some(cout);
                    last_conv = Some(i);
                }
                LayerKind::Maxpool => {
                    if layer.in_channels.is_some() || layer.out_channels.is_some() {
                        return Err(err(format!("{name}: maxpool carries no channel fields")));
                    }
                    if layer.post != PostOp::None {
                        return Err(err(format!("{name}: maxpool has no post op")));
                    }
                }
            }
        }
        let last_conv = last_conv.ok_or_else(|| err("no convolution layers".into()))?;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind != LayerKind::Conv {
                continue;
            }
            let expect = if i == last_conv {
                PostOp::None
            } else {
                PostOp::BatchnormRelu
            };
            if layer.post != expect {
                return Err(err(format!(
                    "{}: post must be {expect:?} (only the final conv omits batchnorm+relu)",
                    self.layer_name(i)
                )));
            }
        }
        if let Some(tap) = self.tap_index {
            if tap >= self.layers.len() {
                return Err(err(format!("tap index {tap} out of range")));
            }
        }
        Ok(())
    }

    /// Channel count entering the network.
    pub fn input_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| l.in_channels)
            .unwrap_or(0)
    }

    /// Channel count after layer `index` (inclusive).
    pub fn channels_after(&self, index: usize) -> usize {
        self.layers[..=index]
            .iter()
            .rev()
            .find_map(|l| l.out_channels)
            .unwrap_or_else(|| self.input_channels())
    }

    pub fn output_channels(&self) -> usize {
        self.channels_after(self.layers.len() - 1)
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .count()
    }

    /// Layer index of the `n`-th convolution (1-based `n`).
    pub fn conv_layer_index(&self, n: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Conv)
            .nth(n.checked_sub(1)?)
            .map(|(i, _)| i)
    }

    /// `conv{n}` / `pool{n}` with per-kind 1-based numbering.
    pub fn layer_name(&self, index: usize) -> String {
        let kind = self.layers[index].kind;
        let n = self.layers[..=index]
            .iter()
            .filter(|l| l.kind == kind)
            .count();
        match kind {
            LayerKind::Conv => format!("conv{n}"),
            LayerKind::Maxpool => format!("pool{n}"),
        }
    }

    /// Spatial side after every layer, or the index of the first layer
    /// whose window does not fit.
    pub fn side_trace(&self, input: usize) -> std::result::Result<Vec<usize>, usize> {
        let mut sides = Vec::with_capacity(self.layers.len());
        let mut side = input;
        for (i, layer) in self.layers.iter().enumerate() {
            side = layer.output_side(side).ok_or(i)?;
            sides.push(side);
        }
        Ok(sides)
    }

    pub fn output_size(&self, input: usize) -> Option<usize> {
        self.side_trace(input).ok().and_then(|s| s.last().copied())
    }

    /// Product of all strides: input pixels per output cell.
    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}:", self.name)?;
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::Conv => writeln!(
                    f,
                    "  {:<6} k={} {}->{} s={}{}",
                    self.layer_name(i),
                    l.kernel,
                    l.in_channels.unwrap_or(0),
                    l.out_channels.unwrap_or(0),
                    l.stride,
                    if l.post == PostOp::BatchnormRelu { " +bn+relu" } else { "" }
                )?,
                LayerKind::Maxpool => {
                    writeln!(f, "  {:<6} k={} s={}", self.layer_name(i), l.kernel, l.stride)?
                }
            }
        }
        Ok(())
    }
}

/// A C×H×W activation volume (channels-first storage).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<F = f32> {
    data: Array3<F>,
}

impl<F: Scalar> FeatureMap<F> {
    /// Wraps a `(channels, height, width)` array, rejecting empty or
    /// non-finite volumes.
    pub fn new(data: Array3<F>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::shape("feature map must be non-empty"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("feature map contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_array_unchecked(data: Array3<F>) -> Self {
        Self { data }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// Value at row `h`, column `w`, channel `c`.
    pub fn get(&self, h: usize, w: usize, c: usize) -> F {
        self.data[[c, h, w]]
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn into_data(self) -> Array3<F> {
        self.data
    }

    pub fn cast<G: Scalar>(&self) -> FeatureMap<G> {
        FeatureMap {
            data: self.data.mapv(|v| G::of(v.as_f64())),
        }
    }
}
