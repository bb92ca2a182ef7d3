//! Multi-channel grids: pixel-space images handed to a codec and the latent
//! samples the diffusion process works on.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A `channels x height x width` grid stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dims(format!(
                "{} values for a {channels}x{height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn standard_normal<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..channels * height * width)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Repeats a single plane `channels` times.
    pub fn replicate(plane: &[f64], channels: usize, height: usize, width: usize) -> Result<Self> {
        if plane.len() != height * width {
            return Err(Error::dims(format!(
                "plane of {} values for {height}x{width}",
                plane.len()
            )));
        }
        let mut data = Vec::with_capacity(channels * plane.len());
        for _ in 0..channels {
            data.extend_from_slice(plane);
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Per-pixel mean over channels. Accumulates deviations from the first
    /// channel so that identical channels return their common value exactly.
    pub fn channel_mean(&self) -> Vec<f64> {
        if self.channels == 0 {
            return vec![0.0; self.plane_len()];
        }
        let first = self.plane(0);
        let mut dev = vec![0.0; self.plane_len()];
        for c in 1..self.channels {
            for ((d, v), f) in dev.iter_mut().zip(self.plane(c)).zip(first) {
                *d += v - f;
            }
        }
        let inv = 1.0 / self.channels as f64;
        first.iter().zip(&dev).map(|(f, d)| f + d * inv).collect()
    }

    pub fn ensure_same_shape(&self, other: &Planes, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Planes) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &Planes, b: f64) -> Planes {
        debug_assert_eq!(self.shape(), other.shape());
        Planes {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            ..*self
        }
    }

    /// Same shape, new contents.
    pub fn with_data(&self, data: Vec<f64>) -> Planes {
        debug_assert_eq!(data.len(), self.data.len());
        Planes {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn scaled(&self, a: f64) -> Planes {
        Planes {
            data: self.data.iter().map(|x| a * x).collect(),
            ..*self
        }
    }
}

/// A latent tensor tagged with the diffusion timestep it belongs to.
///
/// Holds `x_t`, clean estimates `x0` (tag 0) and denoiser predictions, which
/// all share the latent shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub grid: Planes,
    pub timestep: usize,
}

impl LatentSample {
    pub fn new(grid: Planes, timestep: usize) -> Self {
        Self { grid, timestep }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(Planes::zeros(channels, height, width), 0)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.grid.shape()
    }

    pub fn with_timestep(mut self, t: usize) -> Self {
        self.timestep = t;
        self
    }

    pub fn ensure_same_shape(&self, other: &LatentSample, what: &str) -> Result<()> {
        self.grid.ensure_same_shape(&other.grid, what)
    }

    pub fn max_abs_diff(&self, other: &LatentSample) -> f64 {
        self.grid.max_abs_diff(&other.grid)
    }
}
