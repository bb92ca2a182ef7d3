//! The steering schedule, the per-step shift toward the sparse condition and
//! the full completion loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{align_condition, align_with_transform, AffineDepthTransform};
use crate::codec::{decode_depth, encode_depth, LatentCodec};
use crate::ddpm::{reverse_step, NoiseSchedule};
use crate::denoiser::{estimate_clean, Denoiser};
use crate::depth::{DepthMap, RgbImage, SparseDepth};
use crate::error::{Error, Result};
use crate::geometry::{select_positions, Origin, SamplingPositions};
use crate::latent::{LatentSample, Planes};

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringConfig {
    /// Base steering factor; `lambda_t = k * sqrt(1 - alpha_bar_t)`.
    pub k: f64,
    /// Radius in pixels around condition points that receives no fill samples.
    pub zeta: f64,
    /// Fill samples per `zeta x zeta` cell of the uncovered region.
    pub fill_density: f64,
    /// Number of reverse steps. Must not exceed the schedule length; a
    /// shorter count subsamples the schedule.
    pub steps: usize,
    pub seed: u64,
    /// Re-fit the condition to the decoded estimate at every step instead of
    /// reusing the first fit.
    pub refit_per_step: bool,
    /// Draw fresh fill positions at every step.
    pub resample_positions_per_step: bool,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            k: 0.3,
            zeta: 7.0,
            fill_density: 1.0,
            steps: crate::ddpm::DEFAULT_STEPS,
            seed: 0,
            refit_per_step: true,
            resample_positions_per_step: false,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::param(format!(
                "k must be finite and >= 0, got {}",
                self.k
            )));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::param(format!(
                "zeta must be positive, got {}",
                self.zeta
            )));
        }
        if !(self.fill_density >= 0.0 && self.fill_density.is_finite()) {
            return Err(Error::param(format!(
                "fill density must be finite and >= 0, got {}",
                self.fill_density
            )));
        }
        if self.steps == 0 {
            return Err(Error::param("steps must be at least 1"));
        }
        Ok(())
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// `k * sqrt(1 - alpha_bar_t)`.
pub fn lambda_at(k: f64, t: usize, sched: &NoiseSchedule) -> Result<f64> {
    sched.check_t(t)?;
    Ok(k * (1.0 - sched.alpha_bar(t)).sqrt())
}

/// Dense correction field `phi2 - phi1`: the interpolated difference
/// between the aligned condition and the estimate at condition positions,
/// zero at fill positions.
pub fn condition_residual(
    x0_dec: &DepthMap,
    c_aligned: &SparseDepth,
    p: &SamplingPositions,
) -> Result<DepthMap> {
    let (h, w) = p.dims();
    x0_dec.ensure_dims(h, w, "estimate vs sample positions")?;
    if p.is_empty() {
        return Err(Error::EmptyCondition);
    }
    let cond = c_aligned.points();
    let values = p
        .positions()
        .iter()
        .zip(p.origins())
        .map(|(&(r, c), o)| match *o {
            Origin::Fill => Ok(0.0),
            Origin::Condition(i) => match cond.get(i) {
                Some(pt) if (pt.row, pt.col) == (r, c) => Ok(pt.depth - x0_dec.get(r, c)),
                _ => Err(Error::dims(format!(
                    "aligned condition has no point {i} at ({r}, {c})"
                ))),
            },
        })
        .collect::<Result<Vec<f64>>>()?;
    let field = p.interpolator()?.interpolate(&values)?;
    DepthMap::new(h, w, field, x0_dec.metric)
}

/// `x_prev + lambda * (E(x0_dec - phi1 + phi2) - x0_est)`.
pub fn steer_step<C: LatentCodec + ?Sized>(
    x_prev: &LatentSample,
    x0_est: &LatentSample,
    x0_dec: &DepthMap,
    c_aligned: &SparseDepth,
    p: &SamplingPositions,
    lambda: f64,
    codec: &C,
) -> Result<LatentSample> {
    x_prev.ensure_same_shape(x0_est, "steering")?;
    if !lambda.is_finite() {
        return Err(Error::Numeric("steering factor"));
    }
    let residual = condition_residual(x0_dec, c_aligned, p)?;
    if lambda == 0.0 {
        return Ok(x_prev.clone());
    }
    let mut target = x0_dec.clone();
    for (t, r) in target.values.iter_mut().zip(&residual.values) {
        *t += r;
    }
    let encoded = encode_depth(&target, codec)?;
    x_prev.ensure_same_shape(&encoded, "steering target latent")?;
    let data: Vec<f64> = x_prev
        .grid
        .data
        .iter()
        .zip(&encoded.grid.data)
        .zip(&x0_est.grid.data)
        .map(|((x, e), est)| x + lambda * (e - est))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("steered latent"));
    }
    Ok(LatentSample::new(
        x_prev.grid.with_data(data),
        x_prev.timestep,
    ))
}

/// Output of a completion run.
#[derive(Debug, Clone)]
pub struct Completion {
    /// Metric depth: the final decoded sample aligned to the condition.
    pub depth: DepthMap,
    /// The final decoded sample before alignment.
    pub relative: DepthMap,
    pub transform: AffineDepthTransform,
    /// Positions used for steering; `None` when no step was steered.
    pub positions: Option<SamplingPositions>,
}

/// Stream ids for the two independent random sequences of a run.
const NOISE_STREAM: u64 = 0;
const POSITION_STREAM: u64 = 1;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs the steered reverse process and returns metric depth.
///
/// Initial noise and per-step noise come from one random stream and fill
/// positions from another, so runs that differ only in `k` share their
/// noise realisation.
pub fn complete<D, C>(
    rgb: &RgbImage,
    c: &SparseDepth,
    config: &SteeringConfig,
    denoiser: &mut D,
    codec: &C,
    sched: &NoiseSchedule,
) -> Result<Completion>
where
    D: Denoiser + ?Sized,
    C: LatentCodec + ?Sized,
{
    config.validate()?;
    let (h, w) = c.dims();
    if (rgb.height, rgb.width) != (h, w) {
        return Err(Error::dims(format!(
            "image is {}x{}, condition is {h}x{w}",
            rgb.height, rgb.width
        )));
    }
    if c.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: c.len(),
        });
    }
    let sched = match config.steps.cmp(&sched.steps()) {
        std::cmp::Ordering::Equal => sched.clone(),
        std::cmp::Ordering::Less => sched.subsample(config.steps)?,
        std::cmp::Ordering::Greater => {
            return Err(Error::param(format!(
                "{} steps requested but the schedule has {}",
                config.steps,
                sched.steps()
            )))
        }
    };
    let (lc, lh, lw) = codec.latent_shape(h, w)?;
    let rgb_latent = codec.encode(&rgb.to_planes())?;

    let mut noise_rng = seeded(config.seed, NOISE_STREAM);
    let mut pos_rng = seeded(config.seed, POSITION_STREAM);
    let big_t = sched.steps();
    let mut x = LatentSample::new(Planes::standard_normal(lc, lh, lw, &mut noise_rng), big_t);
    let mut positions: Option<SamplingPositions> = None;
    let mut fixed_fit: Option<AffineDepthTransform> = None;

    for t in (1..=big_t).rev() {
        let x0_est = estimate_clean(denoiser, &x, t, &rgb_latent, &sched)?;
        let mut x_prev = reverse_step(&x, &x0_est, t, &sched, &mut noise_rng)?;
        let lambda = lambda_at(config.k, t, &sched)?;
        if lambda > 0.0 {
            let x0_dec = decode_depth(&x0_est, codec)?;
            let c_aligned = match fixed_fit {
                Some(fit) if !config.refit_per_step => {
                    let v: Vec<f64> = c.depths().iter().map(|d| fit.apply(*d)).collect();
                    c.with_values(&v)?
                }
                _ => {
                    let (ca, fit) = align_condition(c, &x0_dec)?;
                    fixed_fit.get_or_insert(fit);
                    ca
                }
            };
            if positions.is_none() || config.resample_positions_per_step {
                positions = Some(select_positions(
                    c,
                    config.zeta,
                    config.fill_density,
                    &mut pos_rng,
                )?);
            }
            let p = positions.as_ref().expect("positions drawn above");
            x_prev = steer_step(&x_prev, &x0_est, &x0_dec, &c_aligned, p, lambda, codec)?;
        }
        x = x_prev;
    }

    let relative = decode_depth(&x, codec)?;
    let (depth, transform) = align_with_transform(&relative, c)?;
    Ok(Completion {
        depth,
        relative,
        transform,
        positions,
    })
}
