//! RGB video frames and square patch extraction with mean padding.

use std::path::Path;

use ndarray::{Array3, ArrayView3};

use crate::netmodel::FeatureMap;
use crate::tracker::TargetState;
use crate::{Error, Result, Scalar};

/// Side of the exemplar patch; crop sides scale relative to it.
pub const EXEMPLAR_SIZE: usize = 127;
/// Side of the search patch.
pub const INSTANCE_SIZE: usize = 255;

/// An 8-bit RGB image stored as `(H, W, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Array3<u8>,
}

impl Frame {
    pub fn new(pixels: Array3<u8>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::Frame(format!("expected H×W×3 pixels, got {h}×{w}×{c}")));
        }
        Ok(Self { pixels })
    }

    pub fn from_rgb(width: usize, height: usize, bytes: Vec<u8>) -> Result<Self> {
        let pixels = Array3::from_shape_vec((height, width, 3), bytes)
            .map_err(|e| Error::Frame(format!("{width}×{height} RGB buffer: {e}")))?;
        Self::new(pixels)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Frame(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb(w as usize, h as usize, img.into_raw())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, w, _) = self.pixels.dim();
        let buf = image::RgbImage::from_raw(
            w as u32,
            h as u32,
            self.pixels.as_standard_layout().iter().copied().collect(),
        )
        .expect("buffer matches dimensions");
        buf.save(path)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn pixels(&self) -> ArrayView3<'_, u8> {
        self.pixels.view()
    }

    pub fn pixels_mut(&mut self) -> ndarray::ArrayViewMut3<'_, u8> {
        self.pixels.view_mut()
    }

    /// Per-channel mean intensity.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0u64; 3];
        for ((_, _, c), v) in self.pixels.indexed_iter() {
            sums[c] += u64::from(*v);
        }
        let n = (self.width() * self.height()) as f64;
        sums.map(|s| s as f64 / n)
    }
}

/// Resamples the square `side × side` window centered on `(cx, cy)` to
/// `out × out` pixels, returned channel-first. Pixel `j` covers `[j, j+1)`;
/// samples falling outside the frame take `fill`.
pub fn crop_square<F: Scalar>(
    frame: &Frame,
    cx: f64,
    cy: f64,
    side: f64,
    out: usize,
    fill: [f64; 3],
) -> Array3<F> {
    let (h, w) = (frame.height(), frame.width());
    let px = frame.pixels();
    let step = side / out as f64;
    let x0 = cx - side / 2.0;
    let y0 = cy - side / 2.0;
    let mut result = Array3::<F>::zeros((3, out, out));
    let fills = fill.map(F::of);
    for i in 0..out {
        let v = y0 + (i as f64 + 0.5) * step;
        for j in 0..out {
            let u = x0 + (j as f64 + 0.5) * step;
            if !(u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64) {
                for c in 0..3 {
                    result[[c, i, j]] = fills[c];
                }
                continue;
            }
            // Bilinear between pixel centers, clamped at the border.
            let fx = (u - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (v - 0.5).clamp(0.0, (h - 1) as f64);
            let (xa, ya) = (fx.floor() as usize, fy.floor() as usize);
            let (xb, yb) = ((xa + 1).min(w - 1), (ya + 1).min(h - 1));
            let (tx, ty) = (fx - xa as f64, fy - ya as f64);
            for c in 0..3 {
                let p = |y: usize, x: usize| f64::from(px[[y, x, c]]);
                let top = p(ya, xa) * (1.0 - tx) + p(ya, xb) * tx;
                let bot = p(yb, xa) * (1.0 - tx) + p(yb, xb) * tx;
                result[[c, i, j]] = F::of(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    result
}

/// Exemplar crop side for a box: `sqrt((w + p)(h + p))`, `p = context·(w + h)`.
pub fn context_side(target: &TargetState, context: f64) -> f64 {
    let p = context * (target.width + target.height);
    ((target.width + p) * (target.height + p)).sqrt()
}

/// Square crop around `target` with context margin, scaled so that an
/// `out_size` patch covers `out_size / 127` exemplar sides.
pub fn crop_patch<F: Scalar>(
    frame: &Frame,
    target: &TargetState,
    out_size: usize,
    context: f64,
) -> Result<FeatureMap<F>> {
    target.check()?;
    let side = context_side(target, context) * out_size as f64 / EXEMPLAR_SIZE as f64;
    let data = crop_square(
        frame,
        target.center_x,
        target.center_y,
        side,
        out_size,
        frame.channel_means(),
    );
    Ok(FeatureMap::from_array_unchecked(data))
}
