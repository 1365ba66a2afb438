//! Online tracking: exemplar embedding on the first frame, then per frame a
//! scale pyramid of search crops, fused scoring, cosine windowing, peak
//! read-off and the APCEP confidence gate.

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::confidence::{apcep, ConfidenceHistory, GateConfig};
use crate::correlation::{upsample_response, ResponseMap};
use crate::frame::{context_side, crop_square, Frame, EXEMPLAR_SIZE, INSTANCE_SIZE};
use crate::siamese::{Exemplar, ModelSwitches, SiameseModel};
use crate::{Error, Result, Scalar};

/// Smallest frame side the tracker accepts.
pub const MIN_FRAME_SIDE: usize = 16;

/// Axis-aligned box by center and size, in pixels. Pixel `j` spans `[j, j+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl TargetState {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64) -> Self {
        Self {
            center_x,
            center_y,
            width,
            height,
        }
    }

    pub fn from_top_left(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self::new(x + width / 2.0, y + height / 2.0, width, height)
    }

    /// `[x, y, w, h]` with `(x, y)` the top-left corner.
    pub fn to_top_left(&self) -> [f64; 4] {
        [
            self.center_x - self.width / 2.0,
            self.center_y - self.height / 2.0,
            self.width,
            self.height,
        ]
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Rejects non-finite coordinates and non-positive sizes.
    pub fn check(&self) -> Result<()> {
        let finite = [self.center_x, self.center_y, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::argument(format!(
                "box needs positive finite size, got {}×{} at ({}, {})",
                self.width, self.height, self.center_x, self.center_y
            )));
        }
        Ok(())
    }

    /// Keeps the center inside the frame and the size within `[min_side, frame]`.
    pub fn clamped(&self, frame_width: f64, frame_height: f64, min_side: f64) -> Self {
        Self {
            center_x: self.center_x.clamp(0.0, frame_width),
            center_y: self.center_y.clamp(0.0, frame_height),
            width: self.width.clamp(min_side.min(frame_width), frame_width),
            height: self.height.clamp(min_side.min(frame_height), frame_height),
        }
    }
}

/// What the tracker does on a frame whose confidence gate fails.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateStrategy {
    /// Keep the scale and move half the measured displacement.
    #[default]
    HalfMove,
    /// Keep both position and scale.
    FreezeAll,
}

impl std::str::FromStr for GateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-move" => Ok(Self::HalfMove),
            "freeze-all" => Ok(Self::FreezeAll),
            other => Err(Error::argument(format!(
                "unknown gate strategy {other:?} (expected half-move or freeze-all)"
            ))),
        }
    }
}

/// The four ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSwitches {
    /// Keep the frozen backbone convolutions as loaded. When off they are
    /// redrawn at random before tracking.
    pub pretrained_backbone: bool,
    pub side_branch: bool,
    pub attention: bool,
    pub apcep: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self {
            pretrained_backbone: true,
            side_branch: true,
            attention: true,
            apcep: true,
        }
    }
}

impl AblationSwitches {
    pub fn model_switches(&self) -> ModelSwitches {
        ModelSwitches {
            side_branch: self.side_branch,
            attention: self.attention,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    pub num_scales: usize,
    pub scale_step: f64,
    pub scale_penalty: f64,
    pub scale_damping: f64,
    pub window_influence: f64,
    pub lambda: f64,
    /// Side of the upsampled response map.
    pub response_upsample: usize,
    /// Context margin around the target in the exemplar crop.
    pub context: f64,
    /// Search-region scale limits relative to the first frame.
    pub min_scale: f64,
    pub max_scale: f64,
    pub gate: GateConfig,
    pub gate_strategy: GateStrategy,
    pub switches: AblationSwitches,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            num_scales: 3,
            scale_step: 1.0375,
            scale_penalty: 0.9745,
            scale_damping: 0.59,
            window_influence: 0.176,
            lambda: 0.75,
            response_upsample: 272,
            context: 0.5,
            min_scale: 0.2,
            max_scale: 5.0,
            gate: GateConfig::default(),
            gate_strategy: GateStrategy::HalfMove,
            switches: AblationSwitches::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.num_scales == 0 || self.num_scales.is_multiple_of(2) {
            errs.push(format!("tracker.num_scales {} must be odd", self.num_scales));
        }
        if !(self.scale_step > 1.0) {
            errs.push(format!("tracker.scale_step {} must be > 1", self.scale_step));
        }
        for (key, v) in [
            ("tracker.scale_penalty", self.scale_penalty),
            ("tracker.scale_damping", self.scale_damping),
            ("tracker.window_influence", self.window_influence),
        ] {
            if !(v > 0.0 && v < 1.0) {
                errs.push(format!("{key} {v} outside (0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            errs.push(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.context >= 0.0) {
            errs.push(format!("tracker.context {} must be >= 0", self.context));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= 1.0 && self.max_scale >= 1.0) {
            errs.push(format!(
                "tracker scale limits [{}, {}] must bracket 1",
                self.min_scale, self.max_scale
            ));
        }
        if let Err(Error::Config(mut e)) = self.gate.validate() {
            errs.append(&mut e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Fusion weight after the side-branch switch.
    pub fn effective_lambda(&self) -> f64 {
        if self.switches.side_branch {
            self.lambda
        } else {
            1.0
        }
    }

    /// Scale multipliers `step^k`, `k = −(n−1)/2 ..= (n−1)/2`.
    pub fn scale_factors(&self) -> Vec<f64> {
        let half = (self.num_scales / 2) as i32;
        (-half..=half).map(|k| self.scale_step.powi(k)).collect()
    }
}

/// Hann window outer product normalized to sum 1.
pub fn cosine_window(size: usize) -> ResponseMap {
    let hann: Array1<f64> = if size <= 1 {
        Array1::ones(size.max(1))
    } else {
        Array1::from_shape_fn(size, |i| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (size - 1) as f64).cos()
        })
    };
    let col = hann.view().insert_axis(ndarray::Axis(1));
    let row = hann.view().insert_axis(ndarray::Axis(0));
    let w = &col * &row;
    let total = w.sum();
    if total > 0.0 {
        ResponseMap::from_array_unchecked(w / total)
    } else {
        ResponseMap::filled(size, 1.0 / (size * size) as f64)
    }
}

/// `(1 − influence)·map + influence·window`.
pub fn blend(map: &ResponseMap, window: &ResponseMap, influence: f64) -> Result<ResponseMap> {
    if map.values().dim() != window.values().dim() {
        return Err(Error::shape(format!(
            "window {:?} does not match map {:?}",
            window.values().dim(),
            map.values().dim()
        )));
    }
    Ok(ResponseMap::from_array_unchecked(
        map.values() * (1.0 - influence) + window.values() * influence,
    ))
}

/// Per-frame record written to the diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame_index: usize,
    /// APCEP of every scale's normalized upsampled response.
    pub apcep_per_scale: Vec<f64>,
    pub apcep: f64,
    pub chosen_scale_index: usize,
    pub chosen_scale: f64,
    /// Maximum of the chosen fused response before normalization.
    pub raw_peak: f64,
    /// Maximum after cosine-window blending.
    pub windowed_peak: f64,
    /// Gate verdict; absent when the gate is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<bool>,
    /// `[x, y, w, h]`, top-left convention.
    pub bbox: [f64; 4],
}

/// Tracking state for one sequence.
pub struct Tracker<'m, F: Scalar = f32> {
    model: &'m SiameseModel<F>,
    config: TrackerConfig,
    exemplar: Exemplar<F>,
    target: TargetState,
    /// Side of the unscaled search crop in frame pixels.
    search_side: f64,
    initial_search_side: f64,
    initial_size: (f64, f64),
    window: ResponseMap,
    history: ConfidenceHistory,
    frame_index: usize,
}

fn check_frame(frame: &Frame) -> Result<()> {
    if frame.width() < MIN_FRAME_SIDE || frame.height() < MIN_FRAME_SIDE {
        return Err(Error::Frame(format!(
            "{}×{} frame is smaller than the {MIN_FRAME_SIDE}-pixel minimum",
            frame.width(),
            frame.height()
        )));
    }
    Ok(())
}

impl<'m, F: Scalar> Tracker<'m, F> {
    pub fn init(
        model: &'m SiameseModel<F>,
        frame: &Frame,
        target: TargetState,
        config: TrackerConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_frame(frame)?;
        target.check()?;
        let (fw, fh) = (frame.width() as f64, frame.height() as f64);
        if !(0.0..=fw).contains(&target.center_x) || !(0.0..=fh).contains(&target.center_y) {
            return Err(Error::argument(format!(
                "box center ({}, {}) outside {fw}×{fh} frame",
                target.center_x, target.center_y
            )));
        }
        let exemplar_side = context_side(&target, config.context);
        let patch = crop_square::<F>(
            frame,
            target.center_x,
            target.center_y,
            exemplar_side,
            EXEMPLAR_SIZE,
            frame.channel_means(),
        );
        let exemplar = model.embed_exemplar(
            &crate::netmodel::FeatureMap::new(patch)?,
            config.switches.model_switches(),
        )?;
        let search_side = exemplar_side * INSTANCE_SIZE as f64 / EXEMPLAR_SIZE as f64;
        Ok(Self {
            model,
            window: cosine_window(config.response_upsample),
            history: ConfidenceHistory::from_config(&config.gate),
            config,
            exemplar,
            target,
            search_side,
            initial_search_side: search_side,
            initial_size: (target.width, target.height),
            frame_index: 0,
        })
    }

    pub fn target(&self) -> TargetState {
        self.target
    }

    pub fn exemplar(&self) -> &Exemplar<F> {
        &self.exemplar
    }

    pub fn history(&self) -> &ConfidenceHistory {
        &self.history
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Current search scale relative to the first frame.
    pub fn scale(&self) -> f64 {
        self.search_side / self.initial_search_side
    }

    /// Fused responses for every pyramid level, before upsampling.
    pub fn score_pyramid(&self, frame: &Frame) -> Result<Vec<ResponseMap>> {
        check_frame(frame)?;
        let factors = self.config.scale_factors();
        let mut patches = Array4::<F>::zeros((factors.len(), 3, INSTANCE_SIZE, INSTANCE_SIZE));
        let fill = frame.channel_means();
        for (i, s) in factors.iter().enumerate() {
            patches.index_axis_mut(ndarray::Axis(0), i).assign(&crop_square::<F>(
                frame,
                self.target.center_x,
                self.target.center_y,
                self.search_side * s,
                INSTANCE_SIZE,
                fill,
            ));
        }
        let lambda = self.config.effective_lambda();
        self.model
            .score(&self.exemplar, &patches)?
            .into_iter()
            .map(|r| match &r.a {
                Some(a) => Ok(ResponseMap::from_array_unchecked(
                    r.v.values() * lambda + a.values() * (1.0 - lambda),
                )),
                None => Ok(r.v),
            })
            .collect()
    }

    /// Advances the tracker by one frame.
    pub fn track_frame(&mut self, frame: &Frame) -> Result<(TargetState, FrameDiagnostics)> {
        let fused = self.score_pyramid(frame)?;
        let factors = self.config.scale_factors();
        let middle = factors.len() / 2;
        let mut upsampled = Vec::with_capacity(fused.len());
        for (i, map) in fused.iter().enumerate() {
            let mut up = upsample_response(map, self.config.response_upsample)?.into_values();
            if i != middle {
                up *= self.config.scale_penalty;
            }
            upsampled.push(up);
        }
        let peaks: Vec<f64> = upsampled
            .iter()
            .map(|m| m.fold(f64::NEG_INFINITY, |a, b| a.max(*b)))
            .collect();
        let (best, raw_peak) = crate::util::argmax(peaks.iter().copied()).expect("at least one scale");

        let normalized: Vec<Array2<f64>> = upsampled.iter().map(normalize_map).collect();
        let apcep_per_scale = normalized
            .iter()
            .map(|m| apcep(&ResponseMap::from_array_unchecked(m.clone())))
            .collect::<Result<Vec<_>>>()?;
        let chosen = ResponseMap::from_array_unchecked(normalized[best].clone());
        let windowed = blend(&chosen, &self.window, self.config.window_influence)?;
        let (row, col, windowed_peak) = windowed.argmax();

        let gate = self
            .config
            .switches
            .apcep
            .then(|| self.history.gate(apcep_per_scale[best], self.config.gate.ratio));
        let (mut move_factor, mut update_scale) = (1.0, true);
        if gate == Some(false) {
            update_scale = false;
            move_factor = match self.config.gate_strategy {
                GateStrategy::HalfMove => 0.5,
                GateStrategy::FreezeAll => 0.0,
            };
        }

        // Peak offset from the map center, mapped back to frame pixels.
        let up = self.config.response_upsample as f64;
        let center = (up - 1.0) / 2.0;
        let cell = up / fused[best].height() as f64;
        let to_frame = self.model.total_stride() as f64 / cell * self.search_side * factors[best]
            / INSTANCE_SIZE as f64;
        let dx = (col as f64 - center) * to_frame * move_factor;
        let dy = (row as f64 - center) * to_frame * move_factor;

        let mut next = self.target;
        next.center_x += dx;
        next.center_y += dy;
        if update_scale {
            let s = 1.0 - self.config.scale_damping + self.config.scale_damping * factors[best];
            let side = (self.search_side * s).clamp(
                self.initial_search_side * self.config.min_scale,
                self.initial_search_side * self.config.max_scale,
            );
            let applied = side / self.search_side;
            self.search_side = side;
            next.width *= applied;
            next.height *= applied;
        }
        let min_side = 0.1 * self.initial_size.0.min(self.initial_size.1);
        self.target = next.clamped(frame.width() as f64, frame.height() as f64, min_side.max(1.0));
        self.frame_index += 1;

        let diagnostics = FrameDiagnostics {
            frame_index: self.frame_index,
            apcep: apcep_per_scale[best],
            apcep_per_scale,
            chosen_scale_index: best,
            chosen_scale: factors[best],
            raw_peak: raw_peak
                / if best != middle {
                    self.config.scale_penalty
                } else {
                    1.0
                },
            windowed_peak,
            gate,
            bbox: self.target.to_top_left(),
        };
        Ok((self.target, diagnostics))
    }
}

/// Spread below which a response counts as constant: differences this
/// small relative to the response magnitude are float32 roundoff.
const FLAT_TOLERANCE: f64 = 1e-6;

/// Shifts a map to a zero floor and scales it to unit sum. Numerically
/// flat maps become exactly uniform.
fn normalize_map(map: &Array2<f64>) -> Array2<f64> {
    let min = map.fold(f64::INFINITY, |a, b| a.min(*b));
    let max = map.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let flat = max - min <= FLAT_TOLERANCE * min.abs().max(max.abs()).max(1.0);
    let shifted = map.mapv(|v| v - min);
    let total = shifted.sum();
    if !flat && total > 0.0 {
        shifted / total
    } else {
        Array2::from_elem(map.raw_dim(), 1.0 / map.len() as f64)
    }
}
