//! ±1 label maps, class-balancing weights and the logistic training loss.

use ndarray::Array2;

use crate::correlation::ResponseMap;
use crate::{Error, Result};

/// Continuous position on a response grid (row, column in cells).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub row: f64,
    pub col: f64,
}

impl GridPoint {
    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    /// Geometric center of a `size × size` grid.
    pub fn center_of(size: usize) -> Self {
        let c = (size as f64 - 1.0) / 2.0;
        Self { row: c, col: c }
    }
}

/// Square map of ±1 labels: `+1` within `radius_px` input pixels of the
/// center, where one cell spans `stride` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub size: usize,
    pub radius_px: f64,
    pub stride: usize,
    pub center: GridPoint,
    values: Array2<i8>,
}

impl LabelMap {
    pub fn values(&self) -> &Array2<i8> {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.values[[row, col]]
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|v| **v > 0).count()
    }

    pub fn negatives(&self) -> usize {
        self.values.len() - self.positives()
    }
}

pub fn make_label_map(
    size: usize,
    stride: usize,
    radius_px: f64,
    center: GridPoint,
) -> Result<LabelMap> {
    if size == 0 || stride == 0 {
        return Err(Error::argument("label map size and stride must be >= 1"));
    }
    if !(radius_px >= 0.0) {
        return Err(Error::argument(format!("radius {radius_px} must be >= 0")));
    }
    let max = (size - 1) as f64;
    if !(0.0..=max).contains(&center.row) || !(0.0..=max).contains(&center.col) {
        return Err(Error::argument(format!(
            "center ({}, {}) outside {size}×{size} grid",
            center.row, center.col
        )));
    }
    let k = stride as f64;
    let values = Array2::from_shape_fn((size, size), |(r, c)| {
        let dr = r as f64 - center.row;
        let dc = c as f64 - center.col;
        // k·‖u − c‖ ≤ R, compared in squares.
        if k * k * (dr * dr + dc * dc) <= radius_px * radius_px {
            1
        } else {
            -1
        }
    });
    Ok(LabelMap {
        size,
        radius_px,
        stride,
        center,
        values,
    })
}

/// Per-cell loss weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub size: usize,
    values: Array2<f64>,
}

impl WeightMap {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            size,
            values: Array2::from_elem((size, size), 1.0 / (size * size) as f64),
        }
    }
}

/// Half the mass on each class; single-class maps fall back to uniform.
pub fn balance_weights(labels: &LabelMap) -> WeightMap {
    let pos = labels.positives();
    let neg = labels.negatives();
    if pos == 0 || neg == 0 {
        return WeightMap::uniform(labels.size);
    }
    let wp = 0.5 / pos as f64;
    let wn = 0.5 / neg as f64;
    WeightMap {
        size: labels.size,
        values: labels.values.mapv(|y| if y > 0 { wp } else { wn }),
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_sizes(response: &ResponseMap, labels: &LabelMap, weights: &WeightMap) -> Result<()> {
    let s = labels.size;
    if response.height() != s || response.width() != s || weights.size != s {
        return Err(Error::shape(format!(
            "loss inputs disagree: response {}×{}, labels {s}, weights {}",
            response.height(),
            response.width(),
            weights.size
        )));
    }
    Ok(())
}

/// `Σ_u w[u] · ln(1 + exp(−y[u]·r[u]))`.
pub fn logistic_loss(response: &ResponseMap, labels: &LabelMap, weights: &WeightMap) -> Result<f64> {
    check_sizes(response, labels, weights)?;
    Ok(ndarray::Zip::from(response.values())
        .and(&labels.values)
        .and(&weights.values)
        .fold(0.0, |acc, r, y, w| acc + w * softplus(-f64::from(*y) * r)))
}

/// Gradient of [`logistic_loss`] with respect to the response.
pub fn logistic_loss_grad(
    response: &ResponseMap,
    labels: &LabelMap,
    weights: &WeightMap,
) -> Result<Array2<f64>> {
    check_sizes(response, labels, weights)?;
    Ok(ndarray::Zip::from(response.values())
        .and(&labels.values)
        .and(&weights.values)
        .map_collect(|r, y, w| {
            let y = f64::from(*y);
            -w * y * sigmoid(-y * r)
        }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_grid_has_thirteen_positives() {
        let l = make_label_map(17, 8, 16.0, GridPoint::center_of(17)).unwrap();
        assert_eq!(l.positives(), 13);
        assert_eq!(l.get(8, 8), 1);
        assert_eq!(l.get(0, 0), -1);
        assert_eq!(l.get(8, 10), 1);
        assert_eq!(l.get(9, 10), -1);
    }

    #[test]
    fn center_always_positive() {
        let l = make_label_map(9, 8, 0.0, GridPoint::new(2.0, 5.0)).unwrap();
        assert_eq!(l.positives(), 1);
        assert_eq!(l.get(2, 5), 1);
    }

    #[test]
    fn center_outside_is_error() {
        assert!(make_label_map(5, 8, 16.0, GridPoint::new(5.0, 2.0)).is_err());
        assert!(make_label_map(5, 8, 16.0, GridPoint::new(-0.1, 2.0)).is_err());
    }

    #[test]
    fn balanced_weights() {
        let l = make_label_map(17, 8, 16.0, GridPoint::center_of(17)).unwrap();
        let w = balance_weights(&l);
        assert!((w.get(8, 8) - 0.5 / 13.0).abs() < 1e-15);
        assert!((w.get(0, 0) - 0.5 / 276.0).abs() < 1e-15);
        assert!((w.values().sum() - 1.0).abs() < 1e-12);

        let all_neg = make_label_map(17, 8, 16.0, GridPoint::center_of(17)).map(|mut l| {
            l.values.fill(-1);
            l
        });
        let w = balance_weights(&all_neg.unwrap());
        assert!(w.values().iter().all(|v| (v - 1.0 / 289.0).abs() < 1e-15));

        let two = make_label_map(2, 8, 0.0, GridPoint::new(0.0, 1.0)).unwrap();
        let w = balance_weights(&two);
        assert_eq!(w.get(0, 1), 0.5);
        assert!((w.get(0, 0) - 0.5 / 3.0).abs() < 1e-15);
        assert!((w.get(1, 1) - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn loss_reference_values() {
        let l = make_label_map(17, 8, 16.0, GridPoint::center_of(17)).unwrap();
        let w = balance_weights(&l);
        let zero = ResponseMap::filled(17, 0.0);
        assert!((logistic_loss(&zero, &l, &w).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let agree = ResponseMap::new(l.values().mapv(|y| 10.0 * f64::from(y))).unwrap();
        let loss = logistic_loss(&agree, &l, &w).unwrap();
        assert!((loss - 4.539_889_921_686_465e-5).abs() < 1e-15);
        let disagree = ResponseMap::new(l.values().mapv(|y| -10.0 * f64::from(y))).unwrap();
        let loss = logistic_loss(&disagree, &l, &w).unwrap();
        assert!((loss - 10.000_045_398_899_218).abs() < 1e-12);

        let huge = ResponseMap::new(l.values().mapv(|y| -1e4 * f64::from(y))).unwrap();
        let loss = logistic_loss(&huge, &l, &w).unwrap();
        assert!(loss.is_finite() && (loss - 1e4).abs() < 1e-6);
    }

    #[test]
    fn loss_shape_mismatch() {
        let l = make_label_map(5, 8, 8.0, GridPoint::center_of(5)).unwrap();
        let w = balance_weights(&l);
        assert!(logistic_loss(&ResponseMap::filled(4, 0.0), &l, &w).is_err());
    }
}
