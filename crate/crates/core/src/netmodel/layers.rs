use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Unrolls valid `kh×kw` windows with the given stride into columns:
/// `(C·kh·kw) × (Ho·Wo)`.
pub(crate) fn im2col<F: Scalar>(
    x: ArrayView3<'_, F>,
    (kh, kw): (usize, usize),
    stride: usize,
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let plane = ho * wo;
    let mut cols = vec![F::zero(); c * kh * kw * plane];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let src = &xs[ci * h * w + (oy * stride + ki) * w..];
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        d.copy_from_slice(&src[kj..kj + wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * stride + kj];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * kh * kw, plane), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<F: Scalar>(
    cols: ArrayView2<'_, F>,
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
) -> Array3<F> {
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let plane = ho * wo;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut out = vec![F::zero(); c * h * w];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cs[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let base = ci * h * w + (oy * stride + ki) * w + kj;
                    let s_row = &src[oy * wo..(oy + 1) * wo];
                    for (ox, v) in s_row.iter().enumerate() {
                        out[base + ox * stride] += *v;
                    }
                }
            }
        }
    }
    Array3::from_shape_vec((c, h, w), out).expect("col2im shape")
}

/// Single-sample valid convolution (cross-correlation, as in every deep
/// learning framework). Returns the output and the unrolled input.
pub(crate) fn conv_single<F: Scalar>(
    x: ArrayView3<'_, F>,
    weight: &Array4<F>,
    bias: Option<&Array1<F>>,
    stride: usize,
) -> (Array3<F>, Array2<F>) {
    let (o, c, kh, kw) = weight.dim();
    let (_, h, w) = x.dim();
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let cols = im2col(x, (kh, kw), stride);
    let w2 = weight
        .view()
        .into_shape_with_order((o, c * kh * kw))
        .expect("weight layout");
    let mut out = w2.dot(&cols);
    if let Some(b) = bias {
        for (mut row, bv) in out.outer_iter_mut().zip(b.iter()) {
            row += *bv;
        }
    }
    (
        out.into_shape_with_order((o, ho, wo)).expect("conv output"),
        cols,
    )
}

pub(crate) struct ConvGrads<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub input: Option<Array3<F>>,
}

pub(crate) fn conv_single_backward<F: Scalar>(
    grad_out: ArrayView3<'_, F>,
    cols: &Array2<F>,
    weight: &Array4<F>,
    input_dim: (usize, usize, usize),
    stride: usize,
    need_input: bool,
) -> ConvGrads<F> {
    let (o, c, kh, kw) = weight.dim();
    let g = grad_out.as_standard_layout();
    let g2 = g
        .view()
        .into_shape_with_order((o, g.len() / o))
        .expect("grad layout");
    let dw = g2
        .dot(&cols.t())
        .into_shape_with_order((o, c, kh, kw))
        .expect("weight grad");
    let db = g2.sum_axis(Axis(1));
    let input = need_input.then(|| {
        let w2 = weight
            .view()
            .into_shape_with_order((o, c * kh * kw))
            .expect("weight layout");
        let dcols = w2.t().dot(&g2);
        col2im(dcols.view(), input_dim, (kh, kw), stride)
    });
    ConvGrads {
        weight: dw,
        bias: db,
        input,
    }
}

/// Inference-time statistics plus affine parameters of a batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    fn apply_eval(&self, x: &mut Array4<F>) {
        let eps = F::of(BN_EPS);
        for c in 0..x.dim().1 {
            let scale = self.gamma[c] / (self.running_var[c] + eps).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            x.slice_mut(s![.., c, .., ..])
                .mapv_inplace(|v| v * scale + shift);
        }
    }

    /// Normalizes with batch statistics, updating the running estimates.
    fn apply_train(&mut self, x: &mut Array4<F>) -> BnCache<F> {
        let (n, ch, h, w) = x.dim();
        let m = n * h * w;
        let eps = F::of(BN_EPS);
        let mom = F::of(BN_MOMENTUM);
        let mut inv_std = Array1::zeros(ch);
        for c in 0..ch {
            let mut xc = x.slice_mut(s![.., c, .., ..]);
            let mean = xc.sum() / F::of(m as f64);
            let var = xc.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / F::of(m as f64);
            let istd = F::one() / (var + eps).sqrt();
            inv_std[c] = istd;
            xc.mapv_inplace(|v| (v - mean) * istd);
            let unbiased = if m > 1 {
                var * F::of(m as f64) / F::of((m - 1) as f64)
            } else {
                var
            };
            self.running_mean[c] = (F::one() - mom) * self.running_mean[c] + mom * mean;
            self.running_var[c] = (F::one() - mom) * self.running_var[c] + mom * unbiased;
        }
        let x_hat = x.clone();
        for c in 0..ch {
            let (g, b) = (self.gamma[c], self.beta[c]);
            x.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| v * g + b);
        }
        BnCache { x_hat, inv_std }
    }
}

pub(crate) struct BnCache<F> {
    x_hat: Array4<F>,
    inv_std: Array1<F>,
}

pub(crate) struct BnGrads<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub input: Array4<F>,
}

fn bn_backward<F: Scalar>(bn: &BatchNorm<F>, cache: &BnCache<F>, grad: &Array4<F>) -> BnGrads<F> {
    let (n, ch, h, w) = grad.dim();
    let m = F::of((n * h * w) as f64);
    let mut dgamma = Array1::zeros(ch);
    let mut dbeta = Array1::zeros(ch);
    let mut dx = Array4::zeros(grad.dim());
    for c in 0..ch {
        let g = grad.slice(s![.., c, .., ..]);
        let xh = cache.x_hat.slice(s![.., c, .., ..]);
        let sum_g = g.sum();
        let sum_gx = g.iter().zip(xh.iter()).map(|(a, b)| *a * *b).sum::<F>();
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        // dx = γ·σ⁻¹/m · (m·g − Σg − x̂·Σ(g·x̂))
        let k = bn.gamma[c] * cache.inv_std[c] / m;
        let mut d = dx.slice_mut(s![.., c, .., ..]);
        ndarray::Zip::from(&mut d)
            .and(&g)
            .and(&xh)
            .for_each(|d, &g, &xh| *d = k * (m * g - sum_g - xh * sum_gx));
    }
    BnGrads {
        gamma: dgamma,
        beta: dbeta,
        input: dx,
    }
}

/// Convolution with optional fused batch norm + ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<F> {
    /// `(out, in, k, k)`.
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub stride: usize,
    /// `Some` means the block applies batch norm followed by ReLU.
    pub norm: Option<BatchNorm<F>>,
}

pub(crate) struct ConvCache<F> {
    cols: Vec<Array2<F>>,
    input_dim: (usize, usize, usize),
    bn: Option<BnCache<F>>,
    activated: Option<Array4<F>>,
}

pub(crate) struct ConvBlockGrads<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub norm: Option<(Array1<F>, Array1<F>)>,
    pub input: Option<Array4<F>>,
}

impl<F: Scalar> ConvBlock<F> {
    pub(crate) fn random(
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        with_norm: bool,
        rng: &mut impl Rng,
    ) -> Self {
        // He initialization on fan-in.
        let fan_in = (in_ch * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let weight = Array4::from_shape_simple_fn((out_ch, in_ch, kernel, kernel), || {
            F::of(normal.sample(rng))
        });
        Self {
            weight,
            bias: Array1::zeros(out_ch),
            stride,
            norm: with_norm.then(|| BatchNorm::new(out_ch)),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn conv_batch(&self, x: &Array4<F>, keep_cols: bool) -> (Array4<F>, Vec<Array2<F>>) {
        let samples: Vec<_> = x.outer_iter().collect();
        let results: Vec<(Array3<F>, Array2<F>)> = samples
            .par_iter()
            .map(|xs| conv_single(xs.view(), &self.weight, Some(&self.bias), self.stride))
            .collect();
        let views: Vec<_> = results.iter().map(|(o, _)| o.view()).collect();
        let out = ndarray::stack(Axis(0), &views).expect("uniform conv outputs");
        let cols = if keep_cols {
            results.into_iter().map(|(_, c)| c).collect()
        } else {
            Vec::new()
        };
        (out, cols)
    }

    pub(crate) fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let (mut out, _) = self.conv_batch(x, false);
        if let Some(bn) = &self.norm {
            bn.apply_eval(&mut out);
            out.mapv_inplace(|v| v.max(F::zero()));
        }
        out
    }

    pub(crate) fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (_, c, h, w) = x.dim();
        let (mut out, cols) = self.conv_batch(x, true);
        let (bn, activated) = match self.norm.as_mut() {
            Some(bn) => {
                let cache = bn.apply_train(&mut out);
                out.mapv_inplace(|v| v.max(F::zero()));
                (Some(cache), Some(out.clone()))
            }
            None => (None, None),
        };
        (
            out,
            ConvCache {
                cols,
                input_dim: (c, h, w),
                bn,
                activated,
            },
        )
    }

    pub(crate) fn backward(
        &self,
        cache: &ConvCache<F>,
        mut grad: Array4<F>,
        need_input: bool,
    ) -> ConvBlockGrads<F> {
        let mut norm_grads = None;
        if let (Some(bn), Some(bn_cache), Some(act)) =
            (&self.norm, &cache.bn, &cache.activated)
        {
            ndarray::Zip::from(&mut grad).and(act).for_each(|g, &a| {
                if a <= F::zero() {
                    *g = F::zero();
                }
            });
            let g = bn_backward(bn, bn_cache, &grad);
            norm_grads = Some((g.gamma, g.beta));
            grad = g.input;
        }
        let per_sample: Vec<ConvGrads<F>> = grad
            .outer_iter()
            .zip(cache.cols.iter())
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(g, cols)| {
                conv_single_backward(
                    g.view(),
                    cols,
                    &self.weight,
                    cache.input_dim,
                    self.stride,
                    need_input,
                )
            })
            .collect();
        let mut dw = Array4::zeros(self.weight.dim());
        let mut db = Array1::zeros(self.bias.dim());
        let mut inputs = Vec::with_capacity(per_sample.len());
        for g in per_sample {
            dw += &g.weight;
            db += &g.bias;
            if let Some(i) = g.input {
                inputs.push(i);
            }
        }
        let input = need_input.then(|| {
            let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
            ndarray::stack(Axis(0), &views).expect("uniform input grads")
        });
        ConvBlockGrads {
            weight: dw,
            bias: db,
            norm: norm_grads,
            input,
        }
    }
}

/// Valid max pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
}

pub(crate) struct PoolCache {
    argmax: Array4<u32>,
    input_dim: (usize, usize, usize, usize),
}

impl MaxPool {
    fn output_dim(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1)
    }

    fn pool<F: Scalar>(&self, x: &Array4<F>, track: bool) -> (Array4<F>, Option<Array4<u32>>) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_dim(h, w);
        let mut out = Array4::zeros((n, c, ho, wo));
        let mut idx = track.then(|| Array4::<u32>::zeros((n, c, ho, wo)));
        for b in 0..n {
            for ch in 0..c {
                let plane = x.slice(s![b, ch, .., ..]);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (y0, x0) = (oy * self.stride, ox * self.stride);
                        let mut best = plane[[y0, x0]];
                        let mut at = y0 * w + x0;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let v = plane[[y0 + ky, x0 + kx]];
                                if v > best {
                                    best = v;
                                    at = (y0 + ky) * w + x0 + kx;
                                }
                            }
                        }
                        out[[b, ch, oy, ox]] = best;
                        if let Some(idx) = idx.as_mut() {
                            idx[[b, ch, oy, ox]] = at as u32;
                        }
                    }
                }
            }
        }
        (out, idx)
    }

    pub(crate) fn forward_eval<F: Scalar>(&self, x: &Array4<F>) -> Array4<F> {
        self.pool(x, false).0
    }

    pub(crate) fn forward_train<F: Scalar>(&self, x: &Array4<F>) -> (Array4<F>, PoolCache) {
        let (out, idx) = self.pool(x, true);
        (
            out,
            PoolCache {
                argmax: idx.expect("tracked"),
                input_dim: x.dim(),
            },
        )
    }

    pub(crate) fn backward<F: Scalar>(&self, cache: &PoolCache, grad: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.input_dim;
        let mut dx = Array4::zeros((n, c, h, w));
        for ((b, ch, oy, ox), g) in grad.indexed_iter() {
            let at = cache.argmax[[b, ch, oy, ox]] as usize;
            dx[[b, ch, at / w, at % w]] += *g;
        }
        dx
    }
}
