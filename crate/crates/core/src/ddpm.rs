//! Noise schedules and the DDPM forward/reverse arithmetic.
//!
//! Timesteps are 1-indexed (`1..=T`); index 0 is the clean boundary with
//! `alpha_bar(0) = 1`, so `sigma2(1) = 0` and the final reverse step is
//! noiseless.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::latent::LatentSample;

/// How the per-step variances are laid out.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// `beta` evenly spaced between the endpoints.
    Linear { beta_start: f64, beta_end: f64 },
    /// `sqrt(beta)` evenly spaced between the square-rooted endpoints.
    ScaledLinear { beta_start: f64, beta_end: f64 },
    /// A schedule dictated elsewhere (e.g. by a bridge server).
    Explicit(Vec<f64>),
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Linear {
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

pub const DEFAULT_STEPS: usize = 50;

/// Precomputed `beta`, `alpha`, `alpha_bar` and posterior variance tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigma2: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(steps: usize, kind: &ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        let betas = match kind {
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => {
                check_endpoints(*beta_start, *beta_end)?;
                linspace(*beta_start, *beta_end, steps)
            }
            ScheduleKind::ScaledLinear {
                beta_start,
                beta_end,
            } => {
                check_endpoints(*beta_start, *beta_end)?;
                linspace(beta_start.sqrt(), beta_end.sqrt(), steps)
                    .into_iter()
                    .map(|b| b * b)
                    .collect()
            }
            ScheduleKind::Explicit(betas) => {
                if betas.len() != steps {
                    return Err(Error::param(format!(
                        "explicit schedule has {} betas, expected {steps}",
                        betas.len()
                    )));
                }
                betas.clone()
            }
        };
        Self::from_betas(betas)
    }

    /// Default inference schedule: linear 1e-4..0.02 over 50 steps.
    pub fn default_inference() -> Self {
        Self::build(DEFAULT_STEPS, &ScheduleKind::default()).expect("default schedule is valid")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(Error::param(format!(
                "beta[{}] = {b} outside (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for (i, b) in betas.iter().enumerate() {
            let next = prod * (1.0 - b);
            if next >= prod {
                return Err(Error::param(format!(
                    "beta[{}] = {b} too small to decrease alpha_bar",
                    i + 1
                )));
            }
            prod = next;
            alpha_bars.push(prod);
        }
        let sigma2 = std::iter::once(0.0)
            .chain(
                (1..=betas.len())
                    .map(|t| (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t - 1]),
            )
            .collect();
        Ok(Self {
            betas,
            alpha_bars,
            sigma2,
        })
    }

    /// Uniformly subsamples `steps` timesteps of a longer (training) schedule
    /// and re-derives the effective per-step betas so that `alpha_bar` at the
    /// kept timesteps is unchanged.
    pub fn subsample(&self, steps: usize) -> Result<Self> {
        let total = self.steps();
        if steps == 0 || steps > total {
            return Err(Error::param(format!(
                "cannot subsample {steps} steps from {total}"
            )));
        }
        let stride = total / steps;
        // Keep timesteps 1, 1+stride, ... so the first kept step is the
        // least noisy one, matching the usual leading spacing.
        let kept: Vec<usize> = (0..steps).map(|i| 1 + i * stride).collect();
        let mut prev = 1.0;
        let betas = kept
            .iter()
            .map(|&t| {
                let ab = self.alpha_bars[t];
                let b = 1.0 - ab / prev;
                prev = ab;
                b
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Range {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `sigma_t^2`; zero at `t = 1`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t]
    }
}

fn check_endpoints(start: f64, end: f64) -> Result<()> {
    if !(start > 0.0 && start <= end && end < 1.0) {
        return Err(Error::param(format!(
            "beta endpoints must satisfy 0 < start <= end < 1, got {start}..{end}"
        )));
    }
    Ok(())
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn add_noise(
    x0: &LatentSample,
    eps: &LatentSample,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    sched.check_t(t)?;
    x0.ensure_same_shape(eps, "add_noise")?;
    let ab = sched.alpha_bar(t);
    let grid = x0.grid.lincomb(ab.sqrt(), &eps.grid, (1.0 - ab).sqrt());
    Ok(LatentSample::new(grid, t))
}

/// Clean-sample estimate from a noise prediction.
pub fn clean_from_eps(
    x_t: &LatentSample,
    eps_hat: &LatentSample,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    sched.check_t(t)?;
    x_t.ensure_same_shape(eps_hat, "clean_from_eps")?;
    let ab = sched.alpha_bar(t);
    if ab <= 0.0 {
        return Err(Error::Singularity {
            t,
            reason: "alpha_bar is zero",
        });
    }
    let inv = 1.0 / ab.sqrt();
    let s = (1.0 - ab).sqrt();
    let data = x_t
        .grid
        .data
        .iter()
        .zip(&eps_hat.grid.data)
        .map(|(x, e)| (x - s * e) * inv)
        .collect();
    Ok(LatentSample::new(x_t.grid.with_data(data), 0))
}

/// Clean-sample estimate from a velocity prediction.
pub fn clean_from_v(
    x_t: &LatentSample,
    v_hat: &LatentSample,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    sched.check_t(t)?;
    x_t.ensure_same_shape(v_hat, "clean_from_v")?;
    let ab = sched.alpha_bar(t);
    let grid = x_t.grid.lincomb(ab.sqrt(), &v_hat.grid, -(1.0 - ab).sqrt());
    Ok(LatentSample::new(grid, 0))
}

/// Velocity target `sqrt(alpha_bar_t) * eps - sqrt(1 - alpha_bar_t) * x0`.
pub fn velocity(
    x0: &LatentSample,
    eps: &LatentSample,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    sched.check_t(t)?;
    x0.ensure_same_shape(eps, "velocity")?;
    let ab = sched.alpha_bar(t);
    let grid = eps.grid.lincomb(ab.sqrt(), &x0.grid, -(1.0 - ab).sqrt());
    Ok(LatentSample::new(grid, t))
}

/// Posterior mean of `x_{t-1}` given `x_t` and a clean estimate.
pub fn posterior_mean(
    x_t: &LatentSample,
    x0_est: &LatentSample,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    sched.check_t(t)?;
    x_t.ensure_same_shape(x0_est, "reverse_step")?;
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let c0 = ab_prev.sqrt() * sched.beta(t) / (1.0 - ab);
    let ct = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    Ok(LatentSample::new(
        x0_est.grid.lincomb(c0, &x_t.grid, ct),
        t - 1,
    ))
}

/// One ancestral step `x_t -> x_{t-1}`. No noise is drawn at `t = 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &LatentSample,
    x0_est: &LatentSample,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentSample> {
    let mut out = posterior_mean(x_t, x0_est, t, sched)?;
    if t > 1 {
        let sigma = sched.sigma2(t).sqrt();
        for v in out.grid.data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Planes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lin(t: usize) -> NoiseSchedule {
        NoiseSchedule::build(t, &ScheduleKind::default()).unwrap()
    }

    fn random(seed: u64, shape: (usize, usize, usize)) -> LatentSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentSample::new(
            Planes::standard_normal(shape.0, shape.1, shape.2, &mut rng),
            0,
        )
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::from_betas(vec![0.1]).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert_eq!(s.sigma2(1), 0.0);
    }

    #[test]
    fn two_step_alpha_bar_is_direct_product() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.9 * 0.8).abs() < 1e-15);
        // (1 - 0.9) / (1 - 0.72) * 0.2
        assert!((s.sigma2(2) - 0.1 / 0.28 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_is_monotone() {
        let s = lin(50);
        for t in 1..=50 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(50) > 0.0 && s.alpha_bar(50) < 1.0);
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(50) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn bad_endpoints_rejected() {
        for (a, b) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-1.0, 0.5)] {
            let kind = ScheduleKind::Linear {
                beta_start: a,
                beta_end: b,
            };
            assert!(matches!(
                NoiseSchedule::build(10, &kind),
                Err(Error::Parameter(_))
            ));
        }
        assert!(NoiseSchedule::build(0, &ScheduleKind::default()).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1e-20]).is_err());
    }

    #[test]
    fn scaled_linear_endpoints() {
        let kind = ScheduleKind::ScaledLinear {
            beta_start: 0.00085,
            beta_end: 0.012,
        };
        let s = NoiseSchedule::build(1000, &kind).unwrap();
        assert!((s.beta(1) - 0.00085).abs() < 1e-15);
        assert!((s.beta(1000) - 0.012).abs() < 1e-15);
    }

    #[test]
    fn subsampling_preserves_alpha_bar_at_kept_steps() {
        let train = NoiseSchedule::build(
            1000,
            &ScheduleKind::ScaledLinear {
                beta_start: 0.00085,
                beta_end: 0.012,
            },
        )
        .unwrap();
        let inf = train.subsample(50).unwrap();
        assert_eq!(inf.steps(), 50);
        for i in 1..=50 {
            let kept = 1 + (i - 1) * 20;
            assert!((inf.alpha_bar(i) - train.alpha_bar(kept)).abs() < 1e-12);
        }
        assert!(train.subsample(0).is_err());
        assert!(train.subsample(1001).is_err());
    }

    #[test]
    fn zero_noise_and_zero_signal() {
        let s = lin(50);
        let x0 = random(1, (3, 4, 5));
        let zero = LatentSample::zeros(3, 4, 5);
        let t = 17;
        let a = add_noise(&x0, &zero, t, &s).unwrap();
        let expect = x0.grid.scaled(s.alpha_bar(t).sqrt());
        assert!(a.grid.max_abs_diff(&expect) < 1e-15);
        let b = add_noise(&zero, &x0, t, &s).unwrap();
        let expect = x0.grid.scaled((1.0 - s.alpha_bar(t)).sqrt());
        assert!(b.grid.max_abs_diff(&expect) < 1e-15);
        assert_eq!(b.timestep, t);
    }

    #[test]
    fn add_noise_scalar_check_two_step() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let x0 = random(2, (1, 3, 3));
        let eps = random(3, (1, 3, 3));
        let out = add_noise(&x0, &eps, 2, &s).unwrap();
        for i in 0..9 {
            let expect = 0.72f64.sqrt() * x0.grid.data[i] + 0.28f64.sqrt() * eps.grid.data[i];
            assert!((out.grid.data[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_and_range_errors() {
        let s = lin(5);
        let a = LatentSample::zeros(3, 4, 4);
        let b = LatentSample::zeros(3, 4, 5);
        assert!(matches!(add_noise(&a, &b, 1, &s), Err(Error::Dimension(_))));
        assert!(matches!(
            clean_from_v(&a, &b, 1, &s),
            Err(Error::Dimension(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            reverse_step(&a, &a, 0, &s, &mut rng),
            Err(Error::Range { t: 0, .. })
        ));
        assert!(matches!(
            reverse_step(&a, &a, 6, &s, &mut rng),
            Err(Error::Range { t: 6, .. })
        ));
    }

    #[test]
    fn clean_from_eps_scalar_check() {
        let s = NoiseSchedule::from_betas(vec![0.1]).unwrap();
        let xt = random(4, (2, 2, 2));
        let e = random(5, (2, 2, 2));
        let out = clean_from_eps(&xt, &e, 1, &s).unwrap();
        for i in 0..8 {
            let expect = (xt.grid.data[i] - 0.1f64.sqrt() * e.grid.data[i]) / 0.9f64.sqrt();
            assert!((out.grid.data[i] - expect).abs() < 1e-12);
        }
        let zero = LatentSample::zeros(2, 2, 2);
        let out = clean_from_eps(&xt, &zero, 1, &s).unwrap();
        assert!(out.grid.max_abs_diff(&xt.grid.scaled(1.0 / 0.9f64.sqrt())) < 1e-15);
    }

    #[test]
    fn clean_from_v_limits() {
        let s = lin(50);
        let xt = random(6, (1, 4, 4));
        let zero = LatentSample::zeros(1, 4, 4);
        let out = clean_from_v(&xt, &zero, 9, &s).unwrap();
        assert!(
            out.grid
                .max_abs_diff(&xt.grid.scaled(s.alpha_bar(9).sqrt()))
                < 1e-15
        );

        let tiny = NoiseSchedule::from_betas(vec![1e-10]).unwrap();
        let v = random(7, (1, 4, 4));
        let out = clean_from_v(&xt, &v, 1, &tiny).unwrap();
        assert!(out.grid.max_abs_diff(&xt.grid) < 1e-4);
    }

    #[test]
    fn first_step_is_deterministic_mean() {
        let s = lin(50);
        let xt = random(8, (2, 3, 3));
        let x0 = random(9, (2, 3, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = reverse_step(&xt, &x0, 1, &s, &mut rng).unwrap();
        // alpha_bar_0 = 1 makes the mean collapse onto the clean estimate.
        assert!(out.grid.max_abs_diff(&x0.grid) < 1e-12);
        assert_eq!(out.timestep, 0);
    }

    #[test]
    fn zero_inputs_give_pure_noise() {
        let s = lin(50);
        let z = LatentSample::zeros(1, 100, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = reverse_step(&z, &z, 30, &s, &mut rng).unwrap();
        let n = out.grid.data.len() as f64;
        let mean = out.grid.data.iter().sum::<f64>() / n;
        let var = out.grid.data.iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() < 0.02);
        assert!((var / s.sigma2(30) - 1.0).abs() < 0.05);
    }

    #[test]
    fn reverse_step_is_seed_deterministic() {
        let s = lin(50);
        let xt = random(12, (3, 8, 8));
        let x0 = random(13, (3, 8, 8));
        let a = reverse_step(&xt, &x0, 40, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = reverse_step(&xt, &x0, 40, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.grid.data, b.grid.data);
    }
}
