use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};

/// Ratio threshold for the delta-1 accuracy.
pub const DELTA1_THRESHOLD: f64 = 1.25;

/// Error statistics over the masked pixels of one or more depth maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean absolute relative error `|pred - gt| / gt`.
    pub rel: f64,
    /// Fraction of pixels with `max(pred / gt, gt / pred) < 1.25`.
    pub delta1: f64,
    pub n_pixels: usize,
}

fn within_delta1(pred: f64, gt: f64) -> bool {
    // A non-positive prediction has no meaningful ratio and counts as a miss.
    pred > 0.0 && (pred / gt).max(gt / pred) < DELTA1_THRESHOLD
}

/// Metrics over pixels where `mask` is true.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, mask: &[bool]) -> Result<MetricsReport> {
    pred.ensure_dims(gt.height, gt.width, "prediction vs ground truth")?;
    if mask.len() != gt.values.len() {
        return Err(Error::dims(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            gt.values.len()
        )));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if let Some(&i) = idx
        .iter()
        .find(|&&i| !(gt.values[i] > 0.0 && gt.values[i].is_finite()))
    {
        return Err(Error::Data(format!(
            "ground truth {} at ({}, {}) inside the evaluation mask",
            gt.values[i],
            i / gt.width,
            i % gt.width
        )));
    }
    if idx.iter().any(|&i| !pred.values[i].is_finite()) {
        return Err(Error::Numeric("prediction inside the evaluation mask"));
    }
    let n = idx.len() as f64;
    let diffs: Vec<f64> = idx.iter().map(|&i| pred.values[i] - gt.values[i]).collect();
    let rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let rel = idx
        .iter()
        .zip(&diffs)
        .map(|(&i, d)| d.abs() / gt.values[i])
        .sum::<f64>()
        / n;
    let hits = idx
        .iter()
        .filter(|&&i| within_delta1(pred.values[i], gt.values[i]))
        .count();
    Ok(MetricsReport {
        rmse,
        mae,
        rel,
        delta1: hits as f64 / n,
        n_pixels: idx.len(),
    })
}

/// Running sums for pooling metrics over many pixels and maps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsAccumulator {
    n: usize,
    sum_sq: f64,
    sum_abs: f64,
    sum_rel: f64,
    hits: usize,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one pixel. The caller guarantees `gt > 0`.
    pub fn push(&mut self, pred: f64, gt: f64) {
        let d = pred - gt;
        self.n += 1;
        self.sum_sq += d * d;
        self.sum_abs += d.abs();
        self.sum_rel += d.abs() / gt;
        self.hits += usize::from(within_delta1(pred, gt));
    }

    /// Adds a finished report as if its pixels had been pushed.
    pub fn add_report(&mut self, r: &MetricsReport) {
        let n = r.n_pixels as f64;
        self.n += r.n_pixels;
        self.sum_sq += r.rmse * r.rmse * n;
        self.sum_abs += r.mae * n;
        self.sum_rel += r.rel * n;
        self.hits += (r.delta1 * n).round() as usize;
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum_sq += other.sum_sq;
        self.sum_abs += other.sum_abs;
        self.sum_rel += other.sum_rel;
        self.hits += other.hits;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.n == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let n = self.n as f64;
        Ok(MetricsReport {
            rmse: (self.sum_sq / n).sqrt(),
            mae: self.sum_abs / n,
            rel: self.sum_rel / n,
            delta1: self.hits as f64 / n,
            n_pixels: self.n,
        })
    }
}
