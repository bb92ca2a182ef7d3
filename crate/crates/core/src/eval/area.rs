use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, DepthPoint, SparseDepth};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaKind {
    Large,
    Medium,
    Small,
    Custom,
}

/// A centered evaluation rectangle.
///
/// `Large` always covers the whole image. `Medium` (248 x 408) and `Small`
/// (198 x 358) are fixed sizes defined on the 448 x 608 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvaluationArea {
    pub kind: AreaKind,
    /// `(height, width)`; `None` for `Large`.
    pub size: Option<(usize, usize)>,
}

impl EvaluationArea {
    pub const fn large() -> Self {
        Self {
            kind: AreaKind::Large,
            size: None,
        }
    }

    pub const fn medium() -> Self {
        Self {
            kind: AreaKind::Medium,
            size: Some((248, 408)),
        }
    }

    pub const fn small() -> Self {
        Self {
            kind: AreaKind::Small,
            size: Some((198, 358)),
        }
    }

    pub fn custom(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("custom area must be non-empty"));
        }
        Ok(Self {
            kind: AreaKind::Custom,
            size: Some((height, width)),
        })
    }

    /// `(row0, col0, row1, col1)`, half-open.
    pub fn rect(&self, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let (h, w) = self.size.unwrap_or((height, width));
        if h > height || w > width {
            return Err(Error::param(format!(
                "{self} area {h}x{w} does not fit a {height}x{width} image"
            )));
        }
        let r0 = (height - h) / 2;
        let c0 = (width - w) / 2;
        Ok((r0, c0, r0 + h, c0 + w))
    }
}

impl fmt::Display for EvaluationArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.size) {
            (AreaKind::Large, _) => f.write_str("large"),
            (AreaKind::Medium, _) => f.write_str("medium"),
            (AreaKind::Small, _) => f.write_str("small"),
            (AreaKind::Custom, Some((h, w))) => write!(f, "{h}x{w}"),
            (AreaKind::Custom, None) => f.write_str("custom"),
        }
    }
}

impl FromStr for EvaluationArea {
    type Err = Error;

    /// `large`, `medium`, `small` or `HxW`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "large" => Ok(Self::large()),
            "medium" => Ok(Self::medium()),
            "small" => Ok(Self::small()),
            other => {
                let parsed = other
                    .split_once('x')
                    .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)));
                match parsed {
                    Some((h, w)) => Self::custom(h, w),
                    None => Err(Error::param(format!("unknown area {other:?}"))),
                }
            }
        }
    }
}

fn in_rect(rect: (usize, usize, usize, usize), row: usize, col: usize) -> bool {
    row >= rect.0 && row < rect.2 && col >= rect.1 && col < rect.3
}

/// Row-major mask of the area rectangle.
pub fn area_mask(area: &EvaluationArea, height: usize, width: usize) -> Result<Vec<bool>> {
    let rect = area.rect(height, width)?;
    let mut m = vec![false; height * width];
    for r in rect.0..rect.2 {
        m[r * width + rect.1..r * width + rect.3].fill(true);
    }
    Ok(m)
}

/// Area rectangle intersected with valid ground truth.
pub fn evaluation_mask(area: &EvaluationArea, gt: &DepthMap) -> Result<Vec<bool>> {
    let mut m = area_mask(area, gt.height, gt.width)?;
    for (m, v) in m.iter_mut().zip(&gt.values) {
        *m &= *v > 0.0 && v.is_finite();
    }
    Ok(m)
}

/// Samples `n` distinct valid pixels uniformly at random.
///
/// Every pixel draws a random priority in raster order and the `n` valid
/// pixels with the smallest priorities win. Restricting the candidates with
/// `allowed` therefore selects a subset of the unrestricted draw for the same
/// seed, so erasing a region after sampling equals sampling outside it.
pub fn sample_sparse_in<R: Rng + ?Sized>(
    gt: &DepthMap,
    n: usize,
    allowed: Option<&[bool]>,
    rng: &mut R,
) -> Result<SparseDepth> {
    if let Some(a) = allowed {
        if a.len() != gt.values.len() {
            return Err(Error::dims("candidate mask does not match depth map"));
        }
    }
    let priorities: Vec<u64> = (0..gt.values.len()).map(|_| rng.gen()).collect();
    let mut candidates: Vec<(u64, usize)> = gt
        .values
        .iter()
        .enumerate()
        .filter(|&(i, v)| *v > 0.0 && v.is_finite() && allowed.map_or(true, |a| a[i]))
        .map(|(i, _)| (priorities[i], i))
        .collect();
    if candidates.len() < n {
        return Err(Error::Data(format!(
            "requested {n} samples but only {} valid pixels are available",
            candidates.len()
        )));
    }
    if n < candidates.len() {
        candidates.select_nth_unstable(n);
        candidates.truncate(n);
    }
    let mut picked: Vec<usize> = candidates.into_iter().map(|(_, i)| i).collect();
    picked.sort_unstable();
    let points = picked
        .into_iter()
        .map(|i| DepthPoint {
            row: i / gt.width,
            col: i % gt.width,
            depth: gt.values[i],
        })
        .collect();
    SparseDepth::new(gt.height, gt.width, points)
}

pub fn sample_sparse<R: Rng + ?Sized>(gt: &DepthMap, n: usize, rng: &mut R) -> Result<SparseDepth> {
    sample_sparse_in(gt, n, None, rng)
}

/// Removes every point inside the area rectangle. Areas larger than the
/// image are clipped to it.
pub fn erase_region(c: &SparseDepth, area: &EvaluationArea) -> SparseDepth {
    let (h, w) = c.dims();
    let (ah, aw) = area.size.unwrap_or((h, w));
    let (ah, aw) = (ah.min(h), aw.min(w));
    let rect = area.rect(h, w).unwrap_or_else(|_| {
        let r0 = (h - ah) / 2;
        let c0 = (w - aw) / 2;
        (r0, c0, r0 + ah, c0 + aw)
    });
    c.filtered(|p| !in_rect(rect, p.row, p.col))
}
