//! Response-map sharpness scores (APCE and its squared, range-enlarged
//! variant APCEP) and the confidence gate built on them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::correlation::ResponseMap;
use crate::{Error, Result};

struct Extrema {
    max: f64,
    min: f64,
    /// mean over cells of (F − F_min)²
    energy: f64,
}

fn extrema(map: &ResponseMap) -> Result<Extrema> {
    let v = map.values();
    if v.is_empty() {
        return Err(Error::argument("empty response map"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::argument("response map contains NaN"));
    }
    let max = map.max();
    let min = map.min();
    let energy = v.iter().map(|x| (x - min) * (x - min)).sum::<f64>() / v.len() as f64;
    Ok(Extrema { max, min, energy })
}

/// Average peak-to-correlation energy:
/// `|F_max − F_min|² / mean((F − F_min)²)`. A constant map scores 0.
pub fn apce(map: &ResponseMap) -> Result<f64> {
    let e = extrema(map)?;
    if e.max == e.min {
        return Ok(0.0);
    }
    let d = e.max - e.min;
    Ok(d * d / e.energy)
}

/// `((F_max² − F_min²) / mean((F − F_min)²))²`. A constant map scores 0.
pub fn apcep(map: &ResponseMap) -> Result<f64> {
    let e = extrema(map)?;
    if e.max == e.min {
        return Ok(0.0);
    }
    let r = (e.max * e.max - e.min * e.min) / e.energy;
    Ok(r * r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Fraction of the running mean the current score must reach.
    pub ratio: f64,
    /// History capacity in frames.
    pub window: usize,
    /// Frames accepted unconditionally while the history fills.
    pub warmup: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            ratio: 0.3,
            window: 30,
            warmup: 3,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            errs.push(format!("confidence.ratio {} outside (0, 1]", self.ratio));
        }
        if self.window == 0 {
            errs.push("confidence.window must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Sliding window of recent confidence scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceHistory {
    window: VecDeque<f64>,
    capacity: usize,
    warmup: usize,
    running_mean: f64,
}

impl ConfidenceHistory {
    pub fn new(capacity: usize, warmup: usize) -> Self {
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            warmup,
            running_mean: 0.0,
        }
    }

    pub fn from_config(cfg: &GateConfig) -> Self {
        Self::new(cfg.window, cfg.warmup)
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn running_mean(&self) -> f64 {
        self.running_mean
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }

    pub fn push(&mut self, value: f64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(value);
        self.running_mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
    }

    /// Decides whether `current` is confident relative to the history, then
    /// records it.
    pub fn gate(&mut self, current: f64, ratio: f64) -> bool {
        let confident = self.window.len() < self.warmup || current >= ratio * self.running_mean;
        self.push(current);
        confident
    }
}

/// Free-function form of [`ConfidenceHistory::gate`].
pub fn gate(history: &mut ConfidenceHistory, current: f64, ratio: f64) -> bool {
    history.gate(current, ratio)
}
