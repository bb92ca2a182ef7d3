//! Separable Gaussian smoothing with clamped borders.

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Blurs one `height x width` plane. `sigma <= 0` returns a copy.
pub fn gaussian_blur(plane: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, width as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for (i, kv) in k.iter().enumerate() {
            let yy = (y as isize + i as isize - r).clamp(0, height as isize - 1) as usize;
            let src = &tmp[yy * width..(yy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_normalized() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preserves_constants_and_affine_interior() {
        let (h, w) = (20, 30);
        let flat = vec![3.0; h * w];
        assert!(gaussian_blur(&flat, h, w, 1.5)
            .iter()
            .all(|v| (v - 3.0).abs() < 1e-12));
        let ramp: Vec<f64> = (0..h * w).map(|i| (i % w) as f64).collect();
        let out = gaussian_blur(&ramp, h, w, 1.0);
        // Symmetric kernel leaves a ramp unchanged away from the borders.
        assert!((out[10 * w + 15] - 15.0).abs() < 1e-12);
    }
}
