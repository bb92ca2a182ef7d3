//! The pluggable denoiser contract, test oracles and the bridge client for
//! externally hosted pretrained models.

pub mod bridge;
mod oracle;
mod prior;

pub use oracle::{
    apply_bias, biased_oracle_predict, oracle_predict, BiasSpec, BiasedOracle, OracleDenoiser,
};
pub use prior::{PriorComponent, Recall};

use crate::ddpm::{clean_from_eps, clean_from_v, NoiseSchedule};
use crate::error::{Error, Result};
use crate::latent::LatentSample;

/// What a denoiser's output represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictionKind {
    /// The added noise `eps`.
    Epsilon,
    /// The velocity `sqrt(alpha_bar) * eps - sqrt(1 - alpha_bar) * x0`.
    Velocity,
}

impl std::str::FromStr for PredictionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" | "epsilon" => Ok(Self::Epsilon),
            "v" | "velocity" => Ok(Self::Velocity),
            other => Err(Error::param(format!("unknown prediction kind {other:?}"))),
        }
    }
}

pub trait Denoiser {
    fn kind(&self) -> PredictionKind;

    /// Predicts noise or velocity for `x_t`. `rgb_latent` is the encoded
    /// image the prediction is conditioned on.
    fn predict(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        rgb_latent: &LatentSample,
        sched: &NoiseSchedule,
    ) -> Result<LatentSample>;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn kind(&self) -> PredictionKind {
        (**self).kind()
    }

    fn predict(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        rgb_latent: &LatentSample,
        sched: &NoiseSchedule,
    ) -> Result<LatentSample> {
        (**self).predict(x_t, t, rgb_latent, sched)
    }
}

/// Runs the denoiser and converts its output into a clean-sample estimate.
pub fn estimate_clean<D: Denoiser + ?Sized>(
    denoiser: &mut D,
    x_t: &LatentSample,
    t: usize,
    rgb_latent: &LatentSample,
    sched: &NoiseSchedule,
) -> Result<LatentSample> {
    let pred = denoiser.predict(x_t, t, rgb_latent, sched)?;
    if pred.shape() != x_t.shape() {
        return Err(Error::Denoiser(format!(
            "prediction shape {:?} differs from latent shape {:?}",
            pred.shape(),
            x_t.shape()
        )));
    }
    if !pred.grid.is_finite() {
        return Err(Error::Denoiser(format!("non-finite prediction at t={t}")));
    }
    match denoiser.kind() {
        PredictionKind::Epsilon => clean_from_eps(x_t, &pred, t, sched),
        PredictionKind::Velocity => clean_from_v(x_t, &pred, t, sched),
    }
}
