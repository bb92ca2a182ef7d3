use crate::depth::SparseDepth;
use crate::error::{Error, Result};

/// Exact Euclidean distance (in pixels) to the nearest site, plus the index
/// of that site's pixel.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub height: usize,
    pub width: usize,
    /// Squared distances, row-major. Integral values, exact in `f64`.
    pub dist2: Vec<f64>,
    /// Row-major pixel index of the nearest site.
    pub nearest: Vec<usize>,
}

impl DistanceField {
    pub fn distance(&self, row: usize, col: usize) -> f64 {
        self.dist2[row * self.width + col].sqrt()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.dist2.iter().map(|d| d.sqrt()).collect()
    }
}

/// Distance from every cell to the nearest condition point.
pub fn distance_to_condition(c: &SparseDepth) -> Result<DistanceField> {
    let (h, w) = c.dims();
    nearest_site_transform(&c.mask(), h, w)
}

/// Two-pass lower-envelope Euclidean distance transform with nearest-site
/// tracking. `sites` is a row-major mask; at least one cell must be set.
pub fn nearest_site_transform(
    sites: &[bool],
    height: usize,
    width: usize,
) -> Result<DistanceField> {
    if sites.len() != height * width {
        return Err(Error::dims(format!(
            "mask of {} cells for {height}x{width}",
            sites.len()
        )));
    }
    if !sites.iter().any(|s| *s) {
        return Err(Error::EmptyCondition);
    }

    // Column pass: nearest site within each column.
    let mut col_d2 = vec![f64::INFINITY; height * width];
    let mut col_row = vec![usize::MAX; height * width];
    for c in 0..width {
        let mut last: Option<usize> = None;
        for r in 0..height {
            if sites[r * width + c] {
                last = Some(r);
            }
            if let Some(s) = last {
                let d = (r - s) as f64;
                col_d2[r * width + c] = d * d;
                col_row[r * width + c] = s;
            }
        }
        let mut next: Option<usize> = None;
        for r in (0..height).rev() {
            if sites[r * width + c] {
                next = Some(r);
            }
            if let Some(s) = next {
                let d = (s - r) as f64;
                if d * d < col_d2[r * width + c] {
                    col_d2[r * width + c] = d * d;
                    col_row[r * width + c] = s;
                }
            }
        }
    }

    // Row pass: lower envelope of parabolas rooted at finite column values.
    let mut dist2 = vec![0.0; height * width];
    let mut nearest = vec![0; height * width];
    let mut v = vec![0usize; width];
    let mut z = vec![0.0f64; width + 1];
    for r in 0..height {
        let f = &col_d2[r * width..(r + 1) * width];
        let mut k: isize = -1;
        for q in 0..width {
            if !f[q].is_finite() {
                continue;
            }
            let qf = q as f64;
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                continue;
            }
            loop {
                let p = v[k as usize];
                let pf = p as f64;
                let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
                if s <= z[k as usize] {
                    k -= 1;
                    continue;
                }
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
        // Every row has some finite column because at least one site exists.
        let mut k = 0usize;
        for q in 0..width {
            let qf = q as f64;
            while z[k + 1] < qf {
                k += 1;
            }
            let p = v[k];
            let dq = qf - p as f64;
            dist2[r * width + q] = dq * dq + f[p];
            nearest[r * width + q] = col_row[r * width + p] * width + p;
        }
    }
    Ok(DistanceField {
        height,
        width,
        dist2,
        nearest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthPoint;
    use proptest::prelude::*;

    fn brute(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
        let pts: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| sites[i])
            .map(|i| (i / w, i % w))
            .collect();
        (0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                pts.iter()
                    .map(|&(pr, pc)| {
                        let dr = r as f64 - pr as f64;
                        let dc = c as f64 - pc as f64;
                        dr * dr + dc * dc
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn corner_point_on_3x3() {
        let c = SparseDepth::new(
            3,
            3,
            vec![DepthPoint {
                row: 0,
                col: 0,
                depth: 1.0,
            }],
        )
        .unwrap();
        let f = distance_to_condition(&c).unwrap();
        assert_eq!(f.distance(0, 0), 0.0);
        assert!((f.distance(2, 2) - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.nearest[8], 0);
    }

    #[test]
    fn empty_condition_is_an_error() {
        assert!(matches!(
            distance_to_condition(&SparseDepth::empty(4, 4)),
            Err(Error::EmptyCondition)
        ));
    }

    proptest! {
        #[test]
        fn matches_brute_force(h in 1usize..20, w in 1usize..20, seed in any::<u64>(), density in 0.01f64..0.5) {
            let mut state = seed | 1;
            let mut sites: Vec<bool> = (0..h * w).map(|_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state % 10_000) as f64 / 10_000.0 < density
            }).collect();
            if !sites.iter().any(|s| *s) { sites[(seed as usize) % (h * w)] = true; }
            let f = nearest_site_transform(&sites, h, w).unwrap();
            let b = brute(&sites, h, w);
            prop_assert_eq!(&f.dist2, &b);
            for i in 0..h * w {
                let s = f.nearest[i];
                prop_assert!(sites[s]);
                let dr = (i / w) as f64 - (s / w) as f64;
                let dc = (i % w) as f64 - (s % w) as f64;
                prop_assert_eq!(dr * dr + dc * dc, f.dist2[i]);
            }
        }
    }
}
