use crate::alignment::fit_scale_shift;
use crate::ddpm::NoiseSchedule;
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::latent::LatentSample;

use super::prior::{Recall, WienerFilter};

use super::{Denoiser, PredictionKind};

/// The prediction that makes `x_t` consistent with the clean sample `x0`.
pub fn oracle_predict(
    x_t: &LatentSample,
    t: usize,
    x0: &LatentSample,
    kind: PredictionKind,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    sched.check_t(t)?;
    x_t.ensure_same_shape(x0, "oracle prediction")?;
    let ab = sched.alpha_bar(t);
    let noise_std = (1.0 - ab).sqrt();
    if noise_std == 0.0 {
        return Err(Error::Singularity {
            t,
            reason: "alpha_bar is one; noise is unidentifiable",
        });
    }
    let signal = ab.sqrt();
    let data = x_t
        .grid
        .data
        .iter()
        .zip(&x0.grid.data)
        .map(|(x, c)| {
            let eps = (x - signal * c) / noise_std;
            match kind {
                PredictionKind::Epsilon => eps,
                PredictionKind::Velocity => signal * eps - noise_std * c,
            }
        })
        .collect();
    Ok(LatentSample::new(x_t.grid.with_data(data), t))
}

/// Systematic distortion applied to the ground-truth latent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasSpec {
    /// Gaussian blur with standard deviation `radius` latent pixels.
    GaussianBlur { radius: f64 },
    /// Gaussian blur followed by the least-squares affine map back onto the
    /// clean plane, so edges are smeared but the global range is kept.
    CalibratedBlur { radius: f64 },
    /// `scale * x0 + shift` in value.
    AffineWarp { scale: f64, shift: f64 },
    /// Each channel replaced by its least-squares plane in (row, col).
    PlaneFit,
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BiasSpec::GaussianBlur { radius } | BiasSpec::CalibratedBlur { radius }
                if !(radius >= 0.0 && radius.is_finite()) =>
            {
                Err(
                    Error::param(format!("blur radius must be finite and >= 0, got {radius}")),
                )
            }
            BiasSpec::AffineWarp { scale, shift }
                if !(scale.is_finite() && shift.is_finite()) || scale == 0.0 =>
            {
                Err(Error::param(format!(
                    "affine warp needs finite nonzero scale and finite shift, got ({scale}, {shift})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Applies the bias to every channel of a clean latent.
pub fn apply_bias(x0: &LatentSample, bias: &BiasSpec) -> Result<LatentSample> {
    bias.validate()?;
    let g = &x0.grid;
    let (h, w) = (g.height, g.width);
    let mut data = Vec::with_capacity(g.data.len());
    for c in 0..g.channels {
        let plane = g.plane(c);
        match *bias {
            BiasSpec::GaussianBlur { radius } => data.extend(gaussian_blur(plane, h, w, radius)),
            BiasSpec::CalibratedBlur { radius } => {
                let blurred = gaussian_blur(plane, h, w, radius);
                match fit_scale_shift(&blurred, plane) {
                    Ok(t) => data.extend(blurred.iter().map(|v| t.apply(*v))),
                    // A flat plane blurs to itself.
                    Err(_) => data.extend(blurred),
                }
            }
            BiasSpec::AffineWarp { scale, shift } => {
                data.extend(plane.iter().map(|v| scale * v + shift))
            }
            BiasSpec::PlaneFit => data.extend(fit_plane(plane, h, w)),
        }
    }
    Ok(LatentSample::new(g.with_data(data), x0.timestep))
}

/// Least-squares plane `a + b * row + c * col` evaluated on the grid.
fn fit_plane(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    // Rows and columns of a full grid are uncorrelated, so the fit splits
    // into two independent 1D regressions around the means.
    let n = (h * w) as f64;
    let mean = plane.iter().sum::<f64>() / n;
    let mr = (h as f64 - 1.0) / 2.0;
    let mc = (w as f64 - 1.0) / 2.0;
    let (mut srr, mut scc, mut sr, mut sc) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let v = plane[r * w + c] - mean;
            let dr = r as f64 - mr;
            let dc = c as f64 - mc;
            srr += dr * dr;
            scc += dc * dc;
            sr += dr * v;
            sc += dc * v;
        }
    }
    let br = if srr > 0.0 { sr / srr } else { 0.0 };
    let bc = if scc > 0.0 { sc / scc } else { 0.0 };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(mean + br * (r as f64 - mr) + bc * (c as f64 - mc));
        }
    }
    out
}

/// Oracle prediction toward a distorted version of the ground truth.
pub fn biased_oracle_predict(
    x_t: &LatentSample,
    t: usize,
    x0: &LatentSample,
    bias: &BiasSpec,
    kind: PredictionKind,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    oracle_predict(x_t, t, &apply_bias(x0, bias)?, kind, sched)
}

/// Exact oracle: knows the clean latent and always recovers it.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    x0: LatentSample,
    kind: PredictionKind,
}

impl OracleDenoiser {
    pub fn new(x0: LatentSample, kind: PredictionKind) -> Self {
        Self { x0, kind }
    }
}

impl Denoiser for OracleDenoiser {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn predict(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        _rgb_latent: &LatentSample,
        sched: &NoiseSchedule,
    ) -> Result<LatentSample> {
        oracle_predict(x_t, t, &self.x0, self.kind, sched)
    }
}

/// Oracle that steers every estimate toward a biased clean latent.
///
/// Without recall the estimate is exactly the biased target at every step,
/// independent of `x_t`. With a [`Recall`] prior the estimate is the
/// posterior mean of the clean sample when deviations from the target follow
/// that prior: `m + H_t(x_t / sqrt(alpha_bar_t) - m)` with the Wiener gain
/// `H_t`. Noisy steps fall back to the target and late steps follow the
/// sample, so shifts applied to the trajectory persist.
#[derive(Debug)]
pub struct BiasedOracle {
    target: LatentSample,
    kind: PredictionKind,
    recall: Option<Recall>,
    filter: Option<WienerFilter>,
}

impl BiasedOracle {
    pub fn new(x0: &LatentSample, bias: &BiasSpec, kind: PredictionKind) -> Result<Self> {
        Ok(Self {
            target: apply_bias(x0, bias)?,
            kind,
            recall: None,
            filter: None,
        })
    }

    /// Applies a further bias on top of the current target.
    pub fn then_bias(mut self, bias: &BiasSpec) -> Result<Self> {
        self.target = apply_bias(&self.target, bias)?;
        Ok(self)
    }

    pub fn with_recall(mut self, recall: Recall) -> Self {
        self.filter = None;
        self.recall = (!recall.components().is_empty()).then_some(recall);
        self
    }

    pub fn target(&self) -> &LatentSample {
        &self.target
    }

    fn estimate(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        sched: &NoiseSchedule,
    ) -> Result<LatentSample> {
        let Some(recall) = &self.recall else {
            return Ok(self.target.clone());
        };
        x_t.ensure_same_shape(&self.target, "biased oracle")?;
        let g = &x_t.grid;
        if self.filter.as_ref().map(WienerFilter::dims) != Some((g.height, g.width)) {
            self.filter = Some(WienerFilter::new(recall, g.height, g.width));
        }
        let ab = sched.alpha_bar(t);
        let inv = 1.0 / ab.sqrt();
        let m = &self.target.grid.data;
        let mut dev: Vec<f64> = g.data.iter().zip(m).map(|(x, m)| x * inv - m).collect();
        self.filter
            .as_ref()
            .expect("filter built above")
            .apply(&mut dev, ab);
        let data = m.iter().zip(&dev).map(|(m, d)| m + d).collect();
        Ok(LatentSample::new(g.with_data(data), 0))
    }
}

impl Denoiser for BiasedOracle {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn predict(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        _rgb_latent: &LatentSample,
        sched: &NoiseSchedule,
    ) -> Result<LatentSample> {
        sched.check_t(t)?;
        let est = self.estimate(x_t, t, sched)?;
        oracle_predict(x_t, t, &est, self.kind, sched)
    }
}
