//! Least-squares scale and shift between relative and metric depth.

use crate::depth::{DepthMap, SparseDepth};
use crate::error::{Error, Result};

/// `target ≈ scale * source + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDepthTransform {
    pub scale: f64,
    pub shift: f64,
    /// Root-mean-square residual of the fit.
    pub rmse: f64,
    pub pairs: usize,
}

impl AffineDepthTransform {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }

    /// A negative scale flips depth ordering; it signals a pathological
    /// estimate rather than a usable alignment.
    pub fn is_flipped(&self) -> bool {
        self.scale < 0.0
    }
}

/// Solves `argmin_{s,b} sum (s * source_i + b - target_i)^2`.
pub fn fit_scale_shift(source: &[f64], target: &[f64]) -> Result<AffineDepthTransform> {
    if source.len() != target.len() {
        return Err(Error::dims(format!(
            "{} source values vs {} targets",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if source.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("alignment input"));
    }
    if source.iter().all(|v| *v == source[0]) {
        return Err(Error::DegenerateFit);
    }
    // Centered normal equations.
    let nf = n as f64;
    let mx = source.iter().sum::<f64>() / nf;
    let my = target.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in source.iter().zip(target) {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit);
    }
    let scale = sxy / sxx;
    let shift = my - scale * mx;
    let sse: f64 = source
        .iter()
        .zip(target)
        .map(|(x, y)| {
            let r = scale * x + shift - y;
            r * r
        })
        .sum();
    Ok(AffineDepthTransform {
        scale,
        shift,
        rmse: (sse / nf).sqrt(),
        pairs: n,
    })
}

/// Fits `source` at the reference positions to the reference values and
/// applies the transform densely. The result is metric.
pub fn align(source: &DepthMap, reference: &SparseDepth) -> Result<DepthMap> {
    align_with_transform(source, reference).map(|(d, _)| d)
}

pub fn align_with_transform(
    source: &DepthMap,
    reference: &SparseDepth,
) -> Result<(DepthMap, AffineDepthTransform)> {
    let (h, w) = reference.dims();
    source.ensure_dims(h, w, "alignment source vs reference")?;
    let fit = fit_scale_shift(&reference.sample(source), &reference.depths())?;
    let mut out = source.affine(fit.scale, fit.shift);
    out.metric = true;
    Ok((out, fit))
}

/// Maps the condition into the value scale of a dense estimate: samples the
/// estimate at the condition positions and fits condition values onto them.
pub fn align_condition(
    c: &SparseDepth,
    estimate: &DepthMap,
) -> Result<(SparseDepth, AffineDepthTransform)> {
    let (h, w) = c.dims();
    estimate.ensure_dims(h, w, "condition vs estimate")?;
    let depths = c.depths();
    let fit = fit_scale_shift(&depths, &c.sample(estimate))?;
    let values: Vec<f64> = depths.iter().map(|v| fit.apply(*v)).collect();
    Ok((c.with_values(&values)?, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthPoint;
    use proptest::prelude::*;

    fn sse(s: f64, b: f64, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(x, y)| (s * x + b - y).powi(2)).sum()
    }

    #[test]
    fn identity_and_exact_affine() {
        let x = [1.0, 2.0, 3.5, 4.0];
        let f = fit_scale_shift(&x, &x).unwrap();
        assert!((f.scale - 1.0).abs() < 1e-12 && f.shift.abs() < 1e-12 && f.rmse < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = fit_scale_shift(&x, &y).unwrap();
        assert!((f.scale - 2.0).abs() < 1e-12 && (f.shift - 1.0).abs() < 1e-12 && f.rmse < 1e-12);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            fit_scale_shift(&[1.0], &[2.0]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
        assert!(matches!(
            fit_scale_shift(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateFit)
        ));
    }

    #[test]
    fn negative_scale_is_flagged() {
        let f = fit_scale_shift(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!(f.is_flipped());
    }

    /// Noisy affine data against a dense grid search.
    #[test]
    fn matches_grid_search() {
        let x: Vec<f64> = (0..40).map(|i| 0.5 + 0.1 * i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 1.7 * v - 0.4 + 0.05 * ((i * 7919) % 13) as f64 / 13.0 - 0.025)
            .collect();
        let f = fit_scale_shift(&x, &y).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=1000 {
            let s = 1.5 + 0.4 * i as f64 / 1000.0;
            for j in 0..=1000 {
                let b = -0.6 + 0.4 * j as f64 / 1000.0;
                let e = sse(s, b, &x, &y);
                if e < best.0 {
                    best = (e, s, b);
                }
            }
        }
        assert!((f.scale - best.1).abs() < 1e-3, "{} vs {}", f.scale, best.1);
        assert!((f.shift - best.2).abs() < 1e-3, "{} vs {}", f.shift, best.2);
    }

    fn scene() -> (DepthMap, SparseDepth) {
        let d = DepthMap::from_fn(30, 40, true, |r, c| {
            1.0 + 0.05 * r as f64 + 0.02 * c as f64 + ((r * 3 + c) % 5) as f64 * 0.1
        });
        let pts = (0..100)
            .map(|i| {
                let (row, col) = ((i * 7) % 30, (i * 13) % 40);
                DepthPoint {
                    row,
                    col,
                    depth: d.get(row, col),
                }
            })
            .collect::<Vec<_>>();
        let mut seen = std::collections::HashSet::new();
        let pts = pts
            .into_iter()
            .filter(|p| seen.insert((p.row, p.col)))
            .collect();
        (d.clone(), SparseDepth::new(30, 40, pts).unwrap())
    }

    #[test]
    fn align_recovers_metric_and_is_identity_on_metric() {
        let (d, c) = scene();
        assert!(c.len() >= 2);
        let same = align(&d, &c).unwrap();
        assert!(same
            .values
            .iter()
            .zip(&d.values)
            .all(|(a, b)| (a - b).abs() < 1e-12));
        let rel = d.affine(0.5, -0.5);
        let back = align(&rel, &c).unwrap();
        assert!(back.metric);
        let err = back
            .values
            .iter()
            .zip(&d.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn align_condition_into_estimate_scale() {
        let (d, c) = scene();
        let est = d.affine(0.25, 3.0);
        let (ca, fit) = align_condition(&c, &est).unwrap();
        assert!((fit.scale - 0.25).abs() < 1e-9 && (fit.shift - 3.0).abs() < 1e-9);
        for p in ca.points() {
            assert!((p.depth - est.get(p.row, p.col)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn exact_recovery_and_idempotence(s in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -10.0f64..10.0) {
            let (d, c) = scene();
            let distorted = d.affine(s, b);
            let back = align(&distorted, &c).unwrap();
            let err = back.values.iter().zip(&d.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-6);
            let noisy = DepthMap::from_fn(30, 40, false, |r, col| distorted.get(r, col) + ((r * col) % 3) as f64 * 0.01);
            let once = align(&noisy, &c).unwrap();
            let twice = align(&once, &c).unwrap();
            let diff = once.values.iter().zip(&twice.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(diff < 1e-9);
        }

        #[test]
        fn fit_is_optimal_on_local_grid(seed in any::<u64>()) {
            let mut state = seed | 1;
            let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; (state % 10_000) as f64 / 10_000.0 };
            let x: Vec<f64> = (0..20).map(|_| next() * 4.0).collect();
            let y: Vec<f64> = x.iter().map(|v| 0.8 * v + 0.3 + next() - 0.5).collect();
            prop_assume!(x.iter().any(|v| *v != x[0]));
            let f = fit_scale_shift(&x, &y).unwrap();
            let best = sse(f.scale, f.shift, &x, &y);
            for i in 0..100 {
                for j in 0..100 {
                    let s = f.scale + (i as f64 - 49.5) * 1e-3;
                    let b = f.shift + (j as f64 - 49.5) * 1e-3;
                    prop_assert!(best <= sse(s, b, &x, &y) + 1e-12);
                }
            }
        }
    }
}
