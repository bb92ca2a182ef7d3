//! Dense depth maps, sparse depth conditions and RGB images.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Dense `height x width` depth grid, row-major. Zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// `true` for depth in meters, `false` for relative (affine-ambiguous) depth.
    pub metric: bool,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, metric: bool) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dims(format!(
                "{} values for a {height}x{width} depth map",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            metric,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64, metric: bool) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
            metric,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        metric: bool,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
            metric,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        let v = self.get(row, col);
        v > 0.0 && v.is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.values
            .iter()
            .filter(|v| **v > 0.0 && v.is_finite())
            .count()
    }

    /// Applies `s * d + b` to every pixel.
    pub fn affine(&self, scale: f64, shift: f64) -> DepthMap {
        DepthMap {
            values: self.values.iter().map(|v| scale * v + shift).collect(),
            ..self.clone()
        }
    }

    pub fn ensure_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.dims() != (height, width) {
            return Err(Error::dims(format!(
                "{what}: {}x{} vs {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// One sparse depth observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPoint {
    pub row: usize,
    pub col: usize,
    pub depth: f64,
}

/// Sparse metric depth on a `height x width` image plane (the condition).
///
/// Positions are unique and in bounds; depths are finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    height: usize,
    width: usize,
    points: Vec<DepthPoint>,
}

impl SparseDepth {
    pub fn new(height: usize, width: usize, points: Vec<DepthPoint>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if p.row >= height || p.col >= width {
                return Err(Error::OutOfBounds {
                    row: p.row,
                    col: p.col,
                    height,
                    width,
                });
            }
            if !(p.depth.is_finite() && p.depth > 0.0) {
                return Err(Error::NonPositiveDepth {
                    row: p.row,
                    col: p.col,
                    depth: p.depth,
                });
            }
            if !seen.insert((p.row, p.col)) {
                return Err(Error::DuplicatePosition {
                    row: p.row,
                    col: p.col,
                });
            }
        }
        Ok(Self {
            height,
            width,
            points,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            points: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn points(&self) -> &[DepthPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn depths(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.depth).collect()
    }

    /// Values of `map` at this condition's positions.
    pub fn sample(&self, map: &DepthMap) -> Vec<f64> {
        self.points.iter().map(|p| map.get(p.row, p.col)).collect()
    }

    /// Same positions with new values. Values need not be positive: an
    /// aligned condition lives in the relative scale of an estimate.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.points.len() {
            return Err(Error::dims(format!(
                "{} values for {} points",
                values.len(),
                self.points.len()
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            points: self
                .points
                .iter()
                .zip(values)
                .map(|(p, &depth)| DepthPoint { depth, ..*p })
                .collect(),
        })
    }

    /// Keeps the points for which `keep` returns true.
    pub fn filtered(&self, mut keep: impl FnMut(&DepthPoint) -> bool) -> Self {
        Self {
            height: self.height,
            width: self.width,
            points: self.points.iter().copied().filter(|p| keep(p)).collect(),
        }
    }

    /// Boolean validity mask, row-major.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.height * self.width];
        for p in &self.points {
            m[p.row * self.width + p.col] = true;
        }
        m
    }
}

/// RGB image with intensities normalized to `[0, 1]`, stored interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dims("empty image"));
        }
        if data.len() != 3 * height * width {
            return Err(Error::dims(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("RGB intensities outside [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn gray(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; 3 * height * width],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major planes mapped to `[-1, 1]`, the range codecs expect.
    pub fn to_planes(&self) -> crate::latent::Planes {
        let n = self.height * self.width;
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = f64::from(self.data[3 * i + c]) * 2.0 - 1.0;
            }
        }
        crate::latent::Planes {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }
}
