//! Training-free depth completion: a latent denoising diffusion sampler is
//! steered toward sparse metric depth measurements at every reverse step.

pub mod alignment;
pub mod codec;
pub mod ddpm;
pub mod denoiser;
pub mod depth;
mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod latent;
pub mod steering;

pub use error::{Error, Result};
