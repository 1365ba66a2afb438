use ndarray::{Array1, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::network::{Gradients, TensorRole};
use super::FeatureMap;
use crate::{Error, Result, Scalar};

/// Squeeze-and-excitation channel attention for exemplar features.
///
/// Global average pooling, an affine reduction by `reduction_ratio`, ReLU,
/// an affine expansion back to `C` channels, and a logistic squash give one
/// weight in `(0, 1)` per channel; the input is scaled channel-wise by it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention<F = f32> {
    pub reduction_ratio: usize,
    /// `C × (C/r)`.
    pub reduce_weights: Array2<F>,
    pub reduce_bias: Array1<F>,
    /// `(C/r) × C`.
    pub expand_weights: Array2<F>,
    pub expand_bias: Array1<F>,
}

pub type AttentionBlockParams<F = f32> = ChannelAttention<F>;

pub(crate) struct AttentionCache<F> {
    input: Array4<F>,
    pooled: Array2<F>,
    hidden_pre: Array2<F>,
    hidden: Array2<F>,
    weights: Array2<F>,
}

fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

impl<F: Scalar> ChannelAttention<F> {
    pub fn random(channels: usize, reduction_ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction_ratio == 0 || !channels.is_multiple_of(reduction_ratio) || channels < reduction_ratio {
            return Err(Error::argument(format!(
                "{channels} channels not divisible by reduction ratio {reduction_ratio}"
            )));
        }
        let hidden = channels / reduction_ratio;
        let he = Normal::new(0.0, (2.0 / channels as f64).sqrt()).expect("std");
        let small = Normal::new(0.0, 0.1 / (hidden as f64).sqrt()).expect("std");
        Ok(Self {
            reduction_ratio,
            reduce_weights: Array2::from_shape_simple_fn((channels, hidden), || F::of(he.sample(rng))),
            reduce_bias: Array1::zeros(hidden),
            expand_weights: Array2::from_shape_simple_fn((hidden, channels), || {
                F::of(small.sample(rng))
            }),
            expand_bias: Array1::zeros(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce_weights.dim().0
    }

    fn check(&self, c: usize) -> Result<()> {
        if c != self.channels() {
            return Err(Error::shape(format!(
                "attention block expects {} channels, got {c}",
                self.channels()
            )));
        }
        Ok(())
    }

    fn excite(&self, pooled: &Array2<F>) -> (Array2<F>, Array2<F>, Array2<F>) {
        let hidden_pre = pooled.dot(&self.reduce_weights) + &self.reduce_bias;
        let hidden = hidden_pre.mapv(|v| v.max(F::zero()));
        let weights = (hidden.dot(&self.expand_weights) + &self.expand_bias).mapv(sigmoid);
        (hidden_pre, hidden, weights)
    }

    fn pool(x: &Array4<F>) -> Array2<F> {
        let (_, _, h, w) = x.dim();
        x.sum_axis(Axis(3)).sum_axis(Axis(2)) / F::of((h * w) as f64)
    }

    /// Per-channel weights for one feature map.
    pub fn channel_weights(&self, feat: &FeatureMap<F>) -> Result<Array1<F>> {
        self.check(feat.channels())?;
        let x = feat.data().clone().insert_axis(Axis(0));
        let (_, _, w) = self.excite(&Self::pool(&x));
        Ok(w.index_axis_move(Axis(0), 0))
    }

    pub fn apply(&self, feat: &FeatureMap<F>) -> Result<FeatureMap<F>> {
        let weights = self.channel_weights(feat)?;
        let mut out = feat.data().clone();
        for (mut ch, w) in out.outer_iter_mut().zip(weights.iter()) {
            ch *= *w;
        }
        Ok(FeatureMap::from_array_unchecked(out))
    }

    pub(crate) fn forward_batch(&self, x: &Array4<F>) -> Result<Array4<F>> {
        self.check(x.dim().1)?;
        let (_, _, weights) = self.excite(&Self::pool(x));
        Ok(scale_channels(x, &weights))
    }

    pub(crate) fn forward_train(&self, x: &Array4<F>) -> Result<(Array4<F>, AttentionCache<F>)> {
        self.check(x.dim().1)?;
        let pooled = Self::pool(x);
        let (hidden_pre, hidden, weights) = self.excite(&pooled);
        let out = scale_channels(x, &weights);
        Ok((
            out,
            AttentionCache {
                input: x.clone(),
                pooled,
                hidden_pre,
                hidden,
                weights,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &AttentionCache<F>,
        grad: &Array4<F>,
        grads: &mut Gradients<F>,
    ) -> Array4<F> {
        let (n, c, h, w) = grad.dim();
        let mut dx = scale_channels(grad, &cache.weights);
        let da = (grad * &cache.input).sum_axis(Axis(3)).sum_axis(Axis(2));
        let dz2 = &da * &cache.weights.mapv(|a| a * (F::one() - a));
        grads.add(
            "attention.expand.weight".into(),
            cache.hidden.t().dot(&dz2).into_dyn(),
        );
        grads.add("attention.expand.bias".into(), dz2.sum_axis(Axis(0)).into_dyn());
        let dh = dz2.dot(&self.expand_weights.t());
        let dz1 = ndarray::Zip::from(&dh)
            .and(&cache.hidden_pre)
            .map_collect(|g, z| if *z > F::zero() { *g } else { F::zero() });
        grads.add(
            "attention.reduce.weight".into(),
            cache.pooled.t().dot(&dz1).into_dyn(),
        );
        grads.add("attention.reduce.bias".into(), dz1.sum_axis(Axis(0)).into_dyn());
        let dpooled = dz1.dot(&self.reduce_weights.t()) / F::of((h * w) as f64);
        for b in 0..n {
            for ch in 0..c {
                let d = dpooled[[b, ch]];
                dx.slice_mut(ndarray::s![b, ch, .., ..])
                    .mapv_inplace(|v| v + d);
            }
        }
        dx
    }

    pub fn visit_tensors(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, F>, TensorRole)) {
        let p = TensorRole::Parameter;
        f("attention.reduce.weight".into(), self.reduce_weights.view().into_dyn(), p);
        f("attention.reduce.bias".into(), self.reduce_bias.view().into_dyn(), p);
        f("attention.expand.weight".into(), self.expand_weights.view().into_dyn(), p);
        f("attention.expand.bias".into(), self.expand_bias.view().into_dyn(), p);
    }

    pub fn visit_tensors_mut(
        &mut self,
        f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>, TensorRole),
    ) {
        let p = TensorRole::Parameter;
        f("attention.reduce.weight".into(), self.reduce_weights.view_mut().into_dyn(), p);
        f("attention.reduce.bias".into(), self.reduce_bias.view_mut().into_dyn(), p);
        f("attention.expand.weight".into(), self.expand_weights.view_mut().into_dyn(), p);
        f("attention.expand.bias".into(), self.expand_bias.view_mut().into_dyn(), p);
    }
}

fn scale_channels<F: Scalar>(x: &Array4<F>, weights: &Array2<F>) -> Array4<F> {
    let mut out = x.clone();
    for (mut sample, w) in out.outer_iter_mut().zip(weights.outer_iter()) {
        for (mut ch, wv) in sample.outer_iter_mut().zip(w.iter()) {
            ch *= *wv;
        }
    }
    out
}

/// Applies `params` to exemplar features.
pub fn apply_attention<F: Scalar>(
    params: &ChannelAttention<F>,
    exemplar_feat: &FeatureMap<F>,
) -> Result<FeatureMap<F>> {
    params.apply(exemplar_feat)
}
