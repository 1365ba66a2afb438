//! Cross-correlation heads, λ-fusion, and response upsampling.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::netmodel::layers::{conv_single, conv_single_backward};
use crate::netmodel::FeatureMap;
use crate::{Error, Result, Scalar};

/// 2-D grid of similarity scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    values: Array2<f64>,
}

impl ResponseMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::argument("response map must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("response map contains non-finite values"));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_array_unchecked(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::argument("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(Array2::from_shape_vec((h, w), flat).map_err(|e| Error::argument(e.to_string()))?)
    }

    pub fn filled(size: usize, value: f64) -> Self {
        Self {
            values: Array2::from_elem((size, size), value),
        }
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    /// `(row, col, value)` of the maximum; ties go to the first cell in
    /// row-major order.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let (i, v) = crate::util::argmax(self.values.iter().copied()).expect("non-empty");
        (i / self.width(), i % self.width(), v)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Fusion weight and per-branch correlation biases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda: f64,
    pub bias_v: f64,
    pub bias_a: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.75,
            bias_v: 0.0,
            bias_a: 0.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::argument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

fn check_pair(tc: usize, th: usize, tw: usize, xc: usize, xh: usize, xw: usize) -> Result<()> {
    if tc != xc {
        return Err(Error::shape(format!(
            "template has {tc} channels, instance has {xc}"
        )));
    }
    if th > xh || tw > xw {
        return Err(Error::shape(format!(
            "template {th}×{tw} larger than instance {xh}×{xw}"
        )));
    }
    Ok(())
}

/// Raw sliding-window correlation, `(instance − template + 1)` per axis.
/// Also returns the unrolled instance for the backward pass.
pub(crate) fn xcorr_raw<F: Scalar>(
    template: ArrayView3<'_, F>,
    instance: ArrayView3<'_, F>,
) -> (Array2<F>, Array2<F>) {
    let (c, th, tw) = template.dim();
    let kernel = template
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, c, th, tw))
        .expect("template reshape");
    let (out, cols) = conv_single(instance, &kernel, None, 1);
    let (_, ho, wo) = out.dim();
    (
        out.into_shape_with_order((ho, wo)).expect("single channel"),
        cols,
    )
}

/// Gradients of [`xcorr_raw`] with respect to template and instance.
pub(crate) fn xcorr_raw_backward<F: Scalar>(
    grad: ArrayView2<'_, F>,
    cols: &Array2<F>,
    template: ArrayView3<'_, F>,
    instance_dim: (usize, usize, usize),
) -> (Array3<F>, Array3<F>) {
    let (c, th, tw) = template.dim();
    let kernel: Array4<F> = template
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, c, th, tw))
        .expect("template reshape");
    let g = grad.insert_axis(ndarray::Axis(0));
    let grads = conv_single_backward(g, cols, &kernel, instance_dim, 1, true);
    (
        grads
            .weight
            .into_shape_with_order((c, th, tw))
            .expect("template grad"),
        grads.input.expect("requested"),
    )
}

/// Cross-correlates `template` over `instance` and adds `bias` to every
/// cell.
pub fn xcorr<F: Scalar>(
    template: &FeatureMap<F>,
    instance: &FeatureMap<F>,
    bias: f64,
) -> Result<ResponseMap> {
    check_pair(
        template.channels(),
        template.height(),
        template.width(),
        instance.channels(),
        instance.height(),
        instance.width(),
    )?;
    let (raw, _) = xcorr_raw(template.data().view(), instance.data().view());
    Ok(ResponseMap::from_array_unchecked(
        raw.mapv(|v| v.as_f64() + bias),
    ))
}

/// `λ·r_v + (1 − λ)·r_a`, elementwise.
pub fn fuse(r_v: &ResponseMap, r_a: &ResponseMap, cfg: &FusionConfig) -> Result<ResponseMap> {
    cfg.validate()?;
    if r_v.values.dim() != r_a.values.dim() {
        return Err(Error::shape(format!(
            "cannot fuse {:?} with {:?}",
            r_v.values.dim(),
            r_a.values.dim()
        )));
    }
    let l = cfg.lambda;
    Ok(ResponseMap::from_array_unchecked(
        &r_v.values * l + &r_a.values * (1.0 - l),
    ))
}

/// Cubic convolution kernel with `a = −0.75` (OpenCV's bicubic).
fn cubic(d: f64) -> f64 {
    const A: f64 = -0.75;
    let d = d.abs();
    if d <= 1.0 {
        (A + 2.0) * d * d * d - (A + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        A * d * d * d - 5.0 * A * d * d + 8.0 * A * d - 4.0 * A
    } else {
        0.0
    }
}

/// `dst × src` resampling matrix with half-pixel centers and replicated
/// borders.
fn cubic_matrix(src: usize, dst: usize) -> Array2<f64> {
    let mut m = Array2::zeros((dst, src));
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let x = (i as f64 + 0.5) * scale - 0.5;
        let x0 = x.floor();
        let t = x - x0;
        for k in -1i64..=2 {
            let idx = (x0 as i64 + k).clamp(0, src as i64 - 1) as usize;
            m[[i, idx]] += cubic(t - k as f64);
        }
    }
    m
}

/// Bicubic upsampling to a `target_size × target_size` map.
pub fn upsample_response(map: &ResponseMap, target_size: usize) -> Result<ResponseMap> {
    if target_size < map.height() || target_size < map.width() {
        return Err(Error::argument(format!(
            "target size {target_size} smaller than {}×{} map",
            map.height(),
            map.width()
        )));
    }
    let rows = cubic_matrix(map.height(), target_size);
    let cols = cubic_matrix(map.width(), target_size);
    Ok(ResponseMap::from_array_unchecked(
        rows.dot(&map.values).dot(&cols.t()),
    ))
}
