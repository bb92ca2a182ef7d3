use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use super::distance::nearest_site_transform;
use super::positions::{Origin, SamplingPositions};
use crate::depth::{DepthMap, SparseDepth};
use crate::error::{Error, Result};

struct Site {
    pos: Point2<f64>,
    index: usize,
}

impl HasPosition for Site {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

/// Precomputed piecewise-linear weights over a fixed set of sample
/// positions: barycentric inside the Delaunay triangulation, nearest sample
/// outside the convex hull (or everywhere, for collinear sets).
///
/// Every grid cell is a fixed combination of at most three samples, so
/// re-interpolating new values costs three multiply-adds per pixel.
#[derive(Debug, Clone)]
pub struct ScatteredInterpolator {
    height: usize,
    width: usize,
    samples: usize,
    vertices: Vec<[u32; 3]>,
    weights: Vec<[f64; 3]>,
}

impl ScatteredInterpolator {
    pub fn new(positions: &[(usize, usize)], height: usize, width: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyCondition);
        }
        let n = height * width;
        let mut vertices = vec![[u32::MAX; 3]; n];
        let mut weights = vec![[0.0; 3]; n];
        let mut assigned = vec![false; n];

        let mut mask = vec![false; n];
        let mut site_at = vec![u32::MAX; n];
        for (i, &(r, c)) in positions.iter().enumerate() {
            if r >= height || c >= width {
                return Err(Error::OutOfBounds {
                    row: r,
                    col: c,
                    height,
                    width,
                });
            }
            let k = r * width + c;
            if mask[k] {
                return Err(Error::DuplicatePosition { row: r, col: c });
            }
            mask[k] = true;
            site_at[k] = i as u32;
            vertices[k] = [i as u32; 3];
            weights[k] = [1.0, 0.0, 0.0];
            assigned[k] = true;
        }

        if positions.len() >= 3 {
            let sites: Vec<Site> = positions
                .iter()
                .enumerate()
                .map(|(index, &(r, c))| Site {
                    pos: Point2::new(c as f64, r as f64),
                    index,
                })
                .collect();
            let tri = DelaunayTriangulation::<Site>::bulk_load(sites)
                .map_err(|e| Error::Numeric(insertion_error(e)))?;
            for face in tri.inner_faces() {
                let vs = face.vertices();
                let idx = [vs[0].data().index, vs[1].data().index, vs[2].data().index];
                rasterize(
                    [positions[idx[0]], positions[idx[1]], positions[idx[2]]],
                    idx.map(|i| i as u32),
                    width,
                    &mut vertices,
                    &mut weights,
                    &mut assigned,
                );
            }
        }

        if assigned.iter().any(|a| !a) {
            let field = nearest_site_transform(&mask, height, width)?;
            for k in 0..n {
                if !assigned[k] {
                    let s = site_at[field.nearest[k]];
                    vertices[k] = [s; 3];
                    weights[k] = [1.0, 0.0, 0.0];
                }
            }
        }

        Ok(Self {
            height,
            width,
            samples: positions.len(),
            vertices,
            weights,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Dense field from one value per sample position.
    pub fn interpolate(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.samples {
            return Err(Error::dims(format!(
                "{} values for {} sample positions",
                values.len(),
                self.samples
            )));
        }
        Ok(self
            .vertices
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| {
                let a = values[v[0] as usize];
                if w[1] == 0.0 && w[2] == 0.0 {
                    a
                } else {
                    w[0] * a + w[1] * values[v[1] as usize] + w[2] * values[v[2] as usize]
                }
            })
            .collect())
    }
}

fn insertion_error(_: spade::InsertionError) -> &'static str {
    "sample position (triangulation insertion)"
}

fn cross(ax: i64, ay: i64, bx: i64, by: i64) -> i64 {
    ax * by - ay * bx
}

/// Writes barycentric weights for every not-yet-assigned pixel center that
/// lies inside (or on the boundary of) the triangle.
fn rasterize(
    pts: [(usize, usize); 3],
    idx: [u32; 3],
    width: usize,
    vertices: &mut [[u32; 3]],
    weights: &mut [[f64; 3]],
    assigned: &mut [bool],
) {
    let p: [(i64, i64); 3] = pts.map(|(r, c)| (c as i64, r as i64));
    let det = cross(
        p[1].0 - p[0].0,
        p[1].1 - p[0].1,
        p[2].0 - p[0].0,
        p[2].1 - p[0].1,
    );
    if det == 0 {
        return;
    }
    let rmin = pts.iter().map(|q| q.0).min().unwrap();
    let rmax = pts.iter().map(|q| q.0).max().unwrap();
    let cmin = pts.iter().map(|q| q.1).min().unwrap();
    let cmax = pts.iter().map(|q| q.1).max().unwrap();
    let inv = 1.0 / det as f64;
    for r in rmin..=rmax {
        for c in cmin..=cmax {
            let k = r * width + c;
            if assigned[k] {
                continue;
            }
            let (x, y) = (c as i64, r as i64);
            let n0 = cross(p[1].0 - x, p[1].1 - y, p[2].0 - x, p[2].1 - y);
            let n1 = cross(p[2].0 - x, p[2].1 - y, p[0].0 - x, p[0].1 - y);
            let n2 = det - n0 - n1;
            let inside = if det > 0 {
                n0 >= 0 && n1 >= 0 && n2 >= 0
            } else {
                n0 <= 0 && n1 <= 0 && n2 <= 0
            };
            if inside {
                vertices[k] = idx;
                weights[k] = [n0 as f64 * inv, n1 as f64 * inv, n2 as f64 * inv];
                assigned[k] = true;
            }
        }
    }
}

/// Piecewise-linear interpolation of scattered values over a
/// `height x width` grid.
pub fn interpolate_scattered(
    positions: &[(usize, usize)],
    values: &[f64],
    dims: (usize, usize),
) -> Result<DepthMap> {
    let interp = ScatteredInterpolator::new(positions, dims.0, dims.1)?;
    DepthMap::new(dims.0, dims.1, interp.interpolate(values)?, false)
}

fn check_dims(x0_dec: &DepthMap, p: &SamplingPositions) -> Result<()> {
    let (h, w) = p.dims();
    x0_dec.ensure_dims(h, w, "estimate vs sample positions")?;
    if p.is_empty() {
        return Err(Error::EmptyCondition);
    }
    Ok(())
}

/// Interpolates the estimate sampled at `p`.
pub fn phi1(x0_dec: &DepthMap, p: &SamplingPositions) -> Result<DepthMap> {
    check_dims(x0_dec, p)?;
    let values: Vec<f64> = p
        .positions()
        .iter()
        .map(|&(r, c)| x0_dec.get(r, c))
        .collect();
    let field = p.interpolator()?.interpolate(&values)?;
    DepthMap::new(x0_dec.height, x0_dec.width, field, x0_dec.metric)
}

/// Interpolates the aligned condition at condition-tagged positions and the
/// estimate at fill positions.
pub fn phi2(x0_dec: &DepthMap, c_aligned: &SparseDepth, p: &SamplingPositions) -> Result<DepthMap> {
    check_dims(x0_dec, p)?;
    let cond = c_aligned.points();
    let values = p
        .positions()
        .iter()
        .zip(p.origins())
        .map(|(&(r, c), o)| match *o {
            Origin::Fill => Ok(x0_dec.get(r, c)),
            Origin::Condition(i) => match cond.get(i) {
                Some(pt) if (pt.row, pt.col) == (r, c) => Ok(pt.depth),
                _ => Err(Error::dims(format!(
                    "aligned condition has no point {i} at ({r}, {c})"
                ))),
            },
        })
        .collect::<Result<Vec<f64>>>()?;
    let field = p.interpolator()?.interpolate(&values)?;
    DepthMap::new(x0_dec.height, x0_dec.width, field, x0_dec.metric)
}
