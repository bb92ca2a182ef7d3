//! Stationary Gaussian priors on the deviation of a clean sample from a
//! reference, and the matching posterior-mean (Wiener) filter.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A zero-mean Gaussian field: white noise smoothed by a Gaussian kernel
/// of standard deviation `length` pixels, rescaled to pointwise standard
/// deviation `std`. `length = 0` is white noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorComponent {
    pub std: f64,
    pub length: f64,
}

/// Sum of independent [`PriorComponent`]s on a periodic grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recall {
    components: Vec<PriorComponent>,
}

impl Recall {
    pub fn new(components: Vec<PriorComponent>) -> Result<Self> {
        for c in &components {
            if !(c.std >= 0.0 && c.std.is_finite() && c.length >= 0.0 && c.length.is_finite()) {
                return Err(Error::param(format!("invalid prior component {c:?}")));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[PriorComponent] {
        &self.components
    }

    /// Prior power at each DFT bin of an `h x w` grid, row-major.
    pub fn spectrum(&self, h: usize, w: usize) -> Vec<f64> {
        let freq = |k: usize, n: usize| {
            let k = if k <= n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            k / n as f64
        };
        let mut s = vec![0.0; h * w];
        for c in &self.components {
            let shape: Vec<f64> = (0..h * w)
                .map(|i| {
                    let (fy, fx) = (freq(i / w, h), freq(i % w, w));
                    (-4.0 * PI * PI * c.length * c.length * (fx * fx + fy * fy)).exp()
                })
                .collect();
            // Parseval: the pointwise variance is the mean of the spectrum.
            let mean = shape.iter().sum::<f64>() / (h * w) as f64;
            for (s, g) in s.iter_mut().zip(&shape) {
                *s += c.std * c.std * g / mean;
            }
        }
        s
    }
}

/// Posterior mean of a deviation observed through white noise, computed
/// per frequency as `a S / (a S + 1 - a)` for signal fraction `a`.
pub(crate) struct WienerFilter {
    h: usize,
    w: usize,
    spectrum: Vec<f64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for WienerFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WienerFilter")
            .field("h", &self.h)
            .field("w", &self.w)
            .finish()
    }
}

impl WienerFilter {
    pub(crate) fn new(recall: &Recall, h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            spectrum: recall.spectrum(h, w),
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub(crate) fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let (h, w) = (self.h, self.w);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(buf);
        let mut column = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
    }

    /// Filters each `h x w` plane of `planes` in place. Two real planes
    /// share one complex transform; the gain is real and even, so their
    /// results separate into the real and imaginary parts.
    pub(crate) fn apply(&self, planes: &mut [f64], signal_fraction: f64) {
        let n = self.h * self.w;
        let a = signal_fraction;
        let gain: Vec<f64> = self
            .spectrum
            .iter()
            .map(|s| {
                let num = a * s;
                let den = num + (1.0 - a);
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect();
        let scale = 1.0 / n as f64;
        let mut buf = vec![Complex64::default(); n];
        for pair in planes.chunks_mut(2 * n) {
            let (re, im) = pair.split_at_mut(n.min(pair.len()));
            for i in 0..n {
                buf[i] = Complex64::new(re[i], im.get(i).copied().unwrap_or(0.0));
            }
            self.transform(&mut buf, true);
            for (b, g) in buf.iter_mut().zip(&gain) {
                *b *= g * scale;
            }
            self.transform(&mut buf, false);
            for i in 0..n {
                re[i] = buf[i].re;
                if let Some(v) = im.get_mut(i) {
                    *v = buf[i].im;
                }
            }
        }
    }
}
