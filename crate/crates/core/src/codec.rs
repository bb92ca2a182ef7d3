//! Latent codecs: the encoder/decoder pair bounding the diffusion's working
//! space, plus the depth round-trip convention (replicate depth into three
//! channels before encoding, average the three decoded channels after).

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::latent::{LatentSample, Planes};

pub trait LatentCodec {
    /// Spatial downsampling ratio between pixel and latent grids.
    fn scale_factor(&self) -> usize;

    fn latent_channels(&self) -> usize;

    /// Relative round-trip error the codec promises on smooth inputs.
    fn tolerance(&self) -> f64;

    /// Encodes a 3-channel pixel-space grid.
    fn encode(&self, image: &Planes) -> Result<LatentSample>;

    /// Decodes to a 3-channel pixel-space grid.
    fn decode(&self, latent: &LatentSample) -> Result<Planes>;

    fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        let f = self.scale_factor();
        if height == 0 || width == 0 || height % f != 0 || width % f != 0 {
            return Err(Error::dims(format!(
                "{height}x{width} not divisible by codec scale factor {f}"
            )));
        }
        Ok((self.latent_channels(), height / f, width / f))
    }
}

impl<C: LatentCodec + ?Sized> LatentCodec for &C {
    fn scale_factor(&self) -> usize {
        (**self).scale_factor()
    }
    fn latent_channels(&self) -> usize {
        (**self).latent_channels()
    }
    fn tolerance(&self) -> f64 {
        (**self).tolerance()
    }
    fn encode(&self, image: &Planes) -> Result<LatentSample> {
        (**self).encode(image)
    }
    fn decode(&self, latent: &LatentSample) -> Result<Planes> {
        (**self).decode(latent)
    }
}

impl<C: LatentCodec + ?Sized> LatentCodec for Box<C> {
    fn scale_factor(&self) -> usize {
        (**self).scale_factor()
    }
    fn latent_channels(&self) -> usize {
        (**self).latent_channels()
    }
    fn tolerance(&self) -> f64 {
        (**self).tolerance()
    }
    fn encode(&self, image: &Planes) -> Result<LatentSample> {
        (**self).encode(image)
    }
    fn decode(&self, latent: &LatentSample) -> Result<Planes> {
        (**self).decode(latent)
    }
}

/// Replicates depth into three channels and encodes it.
pub fn encode_depth<C: LatentCodec + ?Sized>(depth: &DepthMap, codec: &C) -> Result<LatentSample> {
    if depth.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("depth to encode"));
    }
    codec.latent_shape(depth.height, depth.width)?;
    let planes = Planes::replicate(&depth.values, 3, depth.height, depth.width)?;
    codec.encode(&planes)
}

/// Decodes and averages the three channels into relative depth.
pub fn decode_depth<C: LatentCodec + ?Sized>(latent: &LatentSample, codec: &C) -> Result<DepthMap> {
    if latent.grid.channels != codec.latent_channels() {
        return Err(Error::dims(format!(
            "latent has {} channels, codec expects {}",
            latent.grid.channels,
            codec.latent_channels()
        )));
    }
    let planes = codec.decode(latent)?;
    if planes.channels != 3 {
        return Err(Error::dims(format!(
            "codec decoded {} channels, expected 3",
            planes.channels
        )));
    }
    DepthMap::new(planes.height, planes.width, planes.channel_mean(), false)
}

/// Pixel space is latent space.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn scale_factor(&self) -> usize {
        1
    }

    fn latent_channels(&self) -> usize {
        3
    }

    fn tolerance(&self) -> f64 {
        0.0
    }

    fn encode(&self, image: &Planes) -> Result<LatentSample> {
        check_rgb(image)?;
        Ok(LatentSample::new(image.clone(), 0))
    }

    fn decode(&self, latent: &LatentSample) -> Result<Planes> {
        check_rgb(&latent.grid)?;
        Ok(latent.grid.clone())
    }
}

fn check_rgb(p: &Planes) -> Result<()> {
    if p.channels != 3 {
        return Err(Error::dims(format!(
            "expected 3 channels, got {}",
            p.channels
        )));
    }
    Ok(())
}

/// Lossy stand-in for a VAE.
///
/// Encoding average-pools each input channel over `factor x factor` blocks
/// and adds a fourth channel holding the pooled gradient magnitude of the
/// channel mean. Decoding bilinearly upsamples the first three channels
/// between block centers, extrapolating linearly at the borders, so affine
/// ramps survive the round trip.
#[derive(Debug, Clone, Copy)]
pub struct PoolingCodec {
    factor: usize,
}

impl Default for PoolingCodec {
    fn default() -> Self {
        Self { factor: 8 }
    }
}

impl PoolingCodec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::param("pooling factor must be at least 1"));
        }
        Ok(Self { factor })
    }

    fn pool(&self, plane: &[f64], height: usize, width: usize) -> Vec<f64> {
        let f = self.factor;
        let (lh, lw) = (height / f, width / f);
        let mut out = vec![0.0; lh * lw];
        for r in 0..height {
            let row = &plane[r * width..(r + 1) * width];
            let lr = r / f;
            for (c, v) in row.iter().enumerate() {
                out[lr * lw + c / f] += v;
            }
        }
        let inv = 1.0 / (f * f) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    fn upsample(&self, plane: &[f64], lh: usize, lw: usize) -> Vec<f64> {
        let f = self.factor;
        let (height, width) = (lh * f, lw * f);
        let rows: Vec<(usize, usize, f64)> = (0..height).map(|y| axis_weights(y, f, lh)).collect();
        let cols: Vec<(usize, usize, f64)> = (0..width).map(|x| axis_weights(x, f, lw)).collect();
        let mut out = Vec::with_capacity(height * width);
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                let top = plane[r0 * lw + c0] * (1.0 - fc) + plane[r0 * lw + c1] * fc;
                let bot = plane[r1 * lw + c0] * (1.0 - fc) + plane[r1 * lw + c1] * fc;
                out.push(top * (1.0 - fr) + bot * fr);
            }
        }
        out
    }
}

/// Neighbouring block indices and interpolation fraction for pixel `p`.
/// The fraction leaves `[0, 1]` near borders (linear extrapolation).
fn axis_weights(p: usize, factor: usize, blocks: usize) -> (usize, usize, f64) {
    if blocks == 1 {
        return (0, 0, 0.0);
    }
    let u = (p as f64 - (factor as f64 - 1.0) / 2.0) / factor as f64;
    let i0 = (u.floor().max(0.0) as usize).min(blocks - 2);
    (i0, i0 + 1, u - i0 as f64)
}

impl LatentCodec for PoolingCodec {
    fn scale_factor(&self) -> usize {
        self.factor
    }

    fn latent_channels(&self) -> usize {
        4
    }

    fn tolerance(&self) -> f64 {
        0.01
    }

    fn encode(&self, image: &Planes) -> Result<LatentSample> {
        check_rgb(image)?;
        let (_, lh, lw) = self.latent_shape(image.height, image.width)?;
        let (h, w) = (image.height, image.width);
        let mut data = Vec::with_capacity(4 * lh * lw);
        for c in 0..3 {
            data.extend(self.pool(image.plane(c), h, w));
        }
        let mean = image.channel_mean();
        let mut grad = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let v = mean[r * w + c];
                let gx = if c + 1 < w {
                    mean[r * w + c + 1] - v
                } else {
                    0.0
                };
                let gy = if r + 1 < h {
                    mean[(r + 1) * w + c] - v
                } else {
                    0.0
                };
                grad[r * w + c] = gx.hypot(gy);
            }
        }
        data.extend(self.pool(&grad, h, w));
        Ok(LatentSample::new(Planes::from_vec(4, lh, lw, data)?, 0))
    }

    fn decode(&self, latent: &LatentSample) -> Result<Planes> {
        let g = &latent.grid;
        if g.channels != 4 {
            return Err(Error::dims(format!(
                "pooling codec expects 4 latent channels, got {}",
                g.channels
            )));
        }
        let mut data = Vec::with_capacity(3 * g.plane_len() * self.factor * self.factor);
        for c in 0..3 {
            data.extend(self.upsample(g.plane(c), g.height, g.width));
        }
        Planes::from_vec(3, g.height * self.factor, g.width * self.factor, data)
    }
}
