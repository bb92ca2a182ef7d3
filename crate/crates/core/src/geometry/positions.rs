use std::sync::OnceLock;

use rand::seq::index;
use rand::Rng;

use super::distance::distance_to_condition;
use super::interpolate::ScatteredInterpolator;
use crate::depth::SparseDepth;
use crate::error::{Error, Result};

/// Where a steering sample position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Index into the condition's point list.
    Condition(usize),
    /// Random position far from every condition point.
    Fill,
}

/// The steering sample set: every condition position plus random fill
/// positions in regions the condition does not reach.
#[derive(Debug)]
pub struct SamplingPositions {
    height: usize,
    width: usize,
    positions: Vec<(usize, usize)>,
    origins: Vec<Origin>,
    interpolator: OnceLock<ScatteredInterpolator>,
}

impl Clone for SamplingPositions {
    fn clone(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            positions: self.positions.clone(),
            origins: self.origins.clone(),
            interpolator: self.interpolator.clone(),
        }
    }
}

impl PartialEq for SamplingPositions {
    fn eq(&self, other: &Self) -> bool {
        self.dims() == other.dims()
            && self.positions == other.positions
            && self.origins == other.origins
    }
}

impl SamplingPositions {
    pub fn new(
        height: usize,
        width: usize,
        positions: Vec<(usize, usize)>,
        origins: Vec<Origin>,
    ) -> Result<Self> {
        if positions.len() != origins.len() {
            return Err(Error::dims("positions and origins differ in length"));
        }
        let mut seen = vec![false; height * width];
        for &(r, c) in &positions {
            if r >= height || c >= width {
                return Err(Error::OutOfBounds {
                    row: r,
                    col: c,
                    height,
                    width,
                });
            }
            if std::mem::replace(&mut seen[r * width + c], true) {
                return Err(Error::DuplicatePosition { row: r, col: c });
            }
        }
        Ok(Self {
            height,
            width,
            positions,
            origins,
            interpolator: OnceLock::new(),
        })
    }

    /// Every cell of the grid, each tagged as fill.
    pub fn full_grid(height: usize, width: usize) -> Self {
        let positions: Vec<_> = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .collect();
        let origins = vec![Origin::Fill; positions.len()];
        Self::new(height, width, positions, origins).expect("grid positions are unique")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn fill_count(&self) -> usize {
        self.origins.iter().filter(|o| **o == Origin::Fill).count()
    }

    /// Triangulation over these positions, built on first use.
    pub fn interpolator(&self) -> Result<&ScatteredInterpolator> {
        if let Some(i) = self.interpolator.get() {
            return Ok(i);
        }
        let built = ScatteredInterpolator::new(&self.positions, self.height, self.width)?;
        Ok(self.interpolator.get_or_init(|| built))
    }
}

/// Condition positions plus `fill_density` random positions per
/// `zeta x zeta` cell of the region farther than `zeta` from the condition.
pub fn select_positions<R: Rng + ?Sized>(
    c: &SparseDepth,
    zeta: f64,
    fill_density: f64,
    rng: &mut R,
) -> Result<SamplingPositions> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::param(format!("zeta must be positive, got {zeta}")));
    }
    if !(fill_density >= 0.0 && fill_density.is_finite()) {
        return Err(Error::param(format!(
            "fill density must be non-negative, got {fill_density}"
        )));
    }
    let (h, w) = c.dims();
    let mut positions: Vec<(usize, usize)> = c.points().iter().map(|p| (p.row, p.col)).collect();
    let mut origins: Vec<Origin> = (0..c.len()).map(Origin::Condition).collect();

    let eligible: Vec<usize> = if c.is_empty() {
        (0..h * w).collect()
    } else {
        let field = distance_to_condition(c)?;
        let z2 = zeta * zeta;
        (0..h * w).filter(|&i| field.dist2[i] > z2).collect()
    };
    let wanted = (fill_density * eligible.len() as f64 / (zeta * zeta)).round() as usize;
    let count = wanted.min(eligible.len());
    if count > 0 {
        let mut picked: Vec<usize> = index::sample(rng, eligible.len(), count)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        picked.sort_unstable();
        for i in picked {
            positions.push((i / w, i % w));
            origins.push(Origin::Fill);
        }
    }
    SamplingPositions::new(h, w, positions, origins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring_condition(h: usize, w: usize, margin: usize) -> SparseDepth {
        let mut pts = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let inner = r >= margin && r < h - margin && c >= margin && c < w - margin;
                if !inner && (r + c) % 3 == 0 {
                    pts.push(DepthPoint {
                        row: r,
                        col: c,
                        depth: 1.0,
                    });
                }
            }
        }
        SparseDepth::new(h, w, pts).unwrap()
    }

    #[test]
    fn dense_condition_gets_no_fill() {
        let pts = (0..36)
            .map(|i| DepthPoint {
                row: i / 6,
                col: i % 6,
                depth: 1.0,
            })
            .collect();
        let c = SparseDepth::new(6, 6, pts).unwrap();
        let p = select_positions(&c, 7.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.len(), 36);
        assert_eq!(p.fill_count(), 0);
    }

    #[test]
    fn fill_is_farther_than_zeta_and_conditions_appear_once() {
        let c = ring_condition(64, 80, 20);
        let p = select_positions(&c, 7.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(p.fill_count() > 0);
        let field = distance_to_condition(&c).unwrap();
        let mut seen = vec![0; c.len()];
        for (&(r, col), o) in p.positions().iter().zip(p.origins()) {
            match o {
                Origin::Fill => assert!(field.distance(r, col) > 7.0),
                Origin::Condition(i) => {
                    seen[*i] += 1;
                    assert_eq!((c.points()[*i].row, c.points()[*i].col), (r, col));
                }
            }
        }
        assert!(seen.iter().all(|n| *n == 1));
    }

    #[test]
    fn fill_count_tracks_density() {
        let c = ring_condition(64, 80, 20);
        let field = distance_to_condition(&c).unwrap();
        let eligible = field.dist2.iter().filter(|d| **d > 49.0).count();
        let p = select_positions(&c, 7.0, 2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(
            p.fill_count(),
            (2.0 * eligible as f64 / 49.0).round() as usize
        );
    }

    #[test]
    fn seed_determinism() {
        let c = ring_condition(40, 40, 12);
        let a = select_positions(&c, 3.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = select_positions(&c, 3.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zeta_must_be_positive() {
        let c = ring_condition(10, 10, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_positions(&c, 0.0, 1.0, &mut rng).is_err());
    }
}
