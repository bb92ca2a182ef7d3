//! Ray-cast synthetic scenes: analytic primitives seen by a pinhole camera.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, RgbImage};
use crate::error::{Error, Result};

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

/// Pinhole intrinsics in pixels. The camera sits at the origin looking down
/// +z with rows growing along +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Indoor RGB-D style intrinsics (about 63 degrees horizontal field of
    /// view) centered on the image.
    pub fn for_size(height: usize, width: usize) -> Self {
        let f = 518.8579 * width as f64 / 640.0;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Viewing ray through a pixel center, scaled to unit z so that the ray
    /// parameter of a hit is its depth.
    pub fn ray(&self, row: usize, col: usize) -> Vec3 {
        [
            (col as f64 - self.cx) / self.fx,
            (row as f64 - self.cy) / self.fy,
            1.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Infinite plane through `point` with normal `normal`.
    Plane {
        point: Vec3,
        normal: Vec3,
        color: [f32; 3],
    },
    Sphere {
        center: Vec3,
        radius: f64,
        color: [f32; 3],
    },
    /// Box rotated by `yaw` radians about the vertical axis.
    Cuboid {
        center: Vec3,
        half_extents: Vec3,
        yaw: f64,
        color: [f32; 3],
    },
}

const MIN_HIT: f64 = 1e-9;

impl Primitive {
    fn color(&self) -> [f32; 3] {
        match self {
            Primitive::Plane { color, .. }
            | Primitive::Sphere { color, .. }
            | Primitive::Cuboid { color, .. } => *color,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Plane { normal, .. } => dot(*normal, *normal) > 0.0,
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Cuboid { half_extents, .. } => half_extents.iter().all(|h| *h > 0.0),
        };
        if !ok {
            return Err(Error::param(format!("degenerate primitive {self:?}")));
        }
        Ok(())
    }

    /// Nearest hit along `dir` from the origin: ray parameter and surface
    /// normal.
    pub fn intersect(&self, dir: Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Primitive::Plane { point, normal, .. } => {
                let denom = dot(normal, dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = dot(normal, point) / denom;
                (s > MIN_HIT).then(|| (s, normalize(normal)))
            }
            Primitive::Sphere { center, radius, .. } => {
                let a = dot(dir, dir);
                let b = dot(dir, center);
                let disc = b * b - a * (dot(center, center) - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let s = [(b - sq) / a, (b + sq) / a]
                    .into_iter()
                    .find(|s| *s > MIN_HIT)?;
                Some((s, normalize(sub(scale(dir, s), center))))
            }
            Primitive::Cuboid {
                center,
                half_extents,
                yaw,
                ..
            } => {
                let (sn, cs) = yaw.sin_cos();
                // World to box frame is a rotation by -yaw about y.
                let to_box = |v: Vec3| [cs * v[0] - sn * v[2], v[1], sn * v[0] + cs * v[2]];
                let o = to_box(scale(center, -1.0));
                let d = to_box(dir);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis_in = 0;
                let mut axis_out = 0;
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i].abs() > half_extents[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[i] - o[i]) / d[i];
                    let b = (half_extents[i] - o[i]) / d[i];
                    let (near, far) = if a < b { (a, b) } else { (b, a) };
                    if near > t0 {
                        t0 = near;
                        axis_in = i;
                    }
                    if far < t1 {
                        t1 = far;
                        axis_out = i;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (s, axis) = if t0 > MIN_HIT {
                    (t0, axis_in)
                } else if t1 > MIN_HIT {
                    (t1, axis_out)
                } else {
                    return None;
                };
                let mut n = [0.0; 3];
                n[axis] = if o[axis] + s * d[axis] > 0.0 {
                    1.0
                } else {
                    -1.0
                };
                // Back to world frame: rotation by +yaw.
                Some((s, [cs * n[0] + sn * n[2], n[1], -sn * n[0] + cs * n[2]]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub camera: Camera,
    pub primitives: Vec<Primitive>,
    pub texture_seed: u64,
}

/// Direction light arrives from (normalized at use).
const LIGHT: Vec3 = [0.35, -0.8, -0.5];

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::param("scene dimensions must be positive"));
        }
        if self.primitives.is_empty() {
            return Err(Error::param("scene has no primitives"));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// A closed room (floor, ceiling, side walls, back wall) with a few
    /// boxes and spheres in front of the camera.
    pub fn random_room<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let color = |rng: &mut R| -> [f32; 3] {
            [
                rng.gen_range(0.2..0.95),
                rng.gen_range(0.2..0.95),
                rng.gen_range(0.2..0.95),
            ]
        };
        let floor = rng.gen_range(1.1..1.5);
        let ceiling = -rng.gen_range(1.0..1.4);
        let left = -rng.gen_range(1.6..2.6);
        let right = rng.gen_range(1.6..2.6);
        let back = rng.gen_range(4.5..7.0);
        let yaw: f64 = rng.gen_range(-0.25..0.25);
        let mut prims = vec![
            Primitive::Plane {
                point: [0.0, floor, 0.0],
                normal: [0.0, -1.0, 0.0],
                color: color(rng),
            },
            Primitive::Plane {
                point: [0.0, ceiling, 0.0],
                normal: [0.0, 1.0, 0.0],
                color: color(rng),
            },
            Primitive::Plane {
                point: [left, 0.0, 0.0],
                normal: [1.0, 0.0, 0.0],
                color: color(rng),
            },
            Primitive::Plane {
                point: [right, 0.0, 0.0],
                normal: [-1.0, 0.0, 0.0],
                color: color(rng),
            },
            Primitive::Plane {
                point: [0.0, 0.0, back],
                normal: [yaw.sin(), 0.0, -yaw.cos()],
                color: color(rng),
            },
        ];
        for _ in 0..rng.gen_range(1..=3) {
            let half = [
                rng.gen_range(0.2..0.6),
                rng.gen_range(0.2..0.6),
                rng.gen_range(0.2..0.6),
            ];
            prims.push(Primitive::Cuboid {
                center: [
                    rng.gen_range(-1.2..1.2),
                    floor - half[1],
                    rng.gen_range(2.0..(back - 1.0).min(4.5)),
                ],
                half_extents: half,
                yaw: rng.gen_range(-0.8..0.8),
                color: color(rng),
            });
        }
        for _ in 0..rng.gen_range(0..=2) {
            let radius = rng.gen_range(0.2..0.5);
            prims.push(Primitive::Sphere {
                center: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.5..floor - radius),
                    rng.gen_range(1.8..4.0),
                ],
                radius,
                color: color(rng),
            });
        }
        Self {
            height,
            width,
            camera: Camera::for_size(height, width),
            primitives: prims,
            texture_seed: rng.gen(),
        }
    }
}

/// Renders the depth (z) of the nearest surface and a shaded, textured
/// color image.
pub fn synth_scene(spec: &SceneSpec) -> Result<(RgbImage, DepthMap)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let light = normalize(scale(LIGHT, -1.0));
    let tex = texture_params(spec.texture_seed, spec.primitives.len());
    let mut depth = Vec::with_capacity(h * w);
    let mut rgb = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let dir = spec.camera.ray(r, c);
            let hit = spec
                .primitives
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.intersect(dir).map(|(s, n)| (s, n, i)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let Some((s, mut n, i)) = hit else {
                return Err(Error::Data(format!("pixel ({r}, {c}) sees no surface")));
            };
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Data(format!("pixel ({r}, {c}) has depth {s}")));
            }
            if dot(n, dir) > 0.0 {
                n = scale(n, -1.0);
            }
            let p = scale(dir, s);
            let shade = 0.25 + 0.75 * dot(n, light).max(0.0);
            let [a, b, cz, phase] = tex[i];
            let pattern = 0.85 + 0.15 * (a * p[0] + b * p[1] + cz * p[2] + phase).sin();
            let base = spec.primitives[i].color();
            for ch in base {
                rgb.push((ch as f64 * shade * pattern).clamp(0.0, 1.0) as f32);
            }
            depth.push(s);
        }
    }
    Ok((RgbImage::new(h, w, rgb)?, DepthMap::new(h, w, depth, true)?))
}

fn texture_params(seed: u64, n: usize) -> Vec<[f64; 4]> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(prims: Vec<Primitive>) -> SceneSpec {
        SceneSpec {
            height: 24,
            width: 32,
            camera: Camera::for_size(24, 32),
            primitives: prims,
            texture_seed: 5,
        }
    }

    #[test]
    fn fronto_parallel_plane() {
        let s = spec(vec![Primitive::Plane {
            point: [0.0, 0.0, 2.0],
            normal: [0.0, 0.0, -1.0],
            color: [0.5; 3],
        }]);
        let (rgb, d) = synth_scene(&s).unwrap();
        assert!(d.values.iter().all(|v| (*v - 2.0).abs() < 1e-12));
        assert!(rgb.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    /// Under a pinhole camera the inverse depth of a plane is affine in the
    /// pixel coordinates: `1/z = (n . ray) / (n . p0)`.
    #[test]
    fn tilted_plane_has_affine_inverse_depth() {
        let normal = [0.2, -0.3, -1.0];
        let point = [0.1, 0.2, 3.0];
        let s = spec(vec![Primitive::Plane {
            point,
            normal,
            color: [0.5; 3],
        }]);
        let (_, d) = synth_scene(&s).unwrap();
        let cam = s.camera;
        let k = dot(normal, point);
        for r in 0..s.height {
            for c in 0..s.width {
                let expect = (normal[0] * (c as f64 - cam.cx) / cam.fx
                    + normal[1] * (r as f64 - cam.cy) / cam.fy
                    + normal[2])
                    / k;
                assert!((1.0 / d.get(r, c) - expect).abs() < 1e-12);
            }
        }
        // Second differences of 1/z vanish along rows and columns.
        let inv = |r: usize, c: usize| 1.0 / d.get(r, c);
        for r in 1..s.height - 1 {
            for c in 1..s.width - 1 {
                assert!((inv(r, c - 1) - 2.0 * inv(r, c) + inv(r, c + 1)).abs() < 1e-12);
                assert!((inv(r - 1, c) - 2.0 * inv(r, c) + inv(r + 1, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overlapping_boxes_take_the_nearest_surface() {
        let a = Primitive::Cuboid {
            center: [0.0, 0.0, 3.0],
            half_extents: [0.5, 0.5, 0.5],
            yaw: 0.3,
            color: [0.8, 0.2, 0.2],
        };
        let b = Primitive::Cuboid {
            center: [0.3, 0.1, 2.8],
            half_extents: [0.4, 0.6, 0.3],
            yaw: -0.5,
            color: [0.2, 0.8, 0.2],
        };
        let wall = Primitive::Plane {
            point: [0.0, 0.0, 6.0],
            normal: [0.0, 0.0, -1.0],
            color: [0.5; 3],
        };
        let s = spec(vec![a.clone(), b.clone(), wall.clone()]);
        let (_, d) = synth_scene(&s).unwrap();
        let mut box_pixels = 0;
        for r in 0..s.height {
            for c in 0..s.width {
                let dir = s.camera.ray(r, c);
                let za = a.intersect(dir).map_or(f64::INFINITY, |h| h.0);
                let zb = b.intersect(dir).map_or(f64::INFINITY, |h| h.0);
                let zw = wall.intersect(dir).unwrap().0;
                let expect = za.min(zb).min(zw);
                box_pixels += usize::from(za.min(zb) < zw);
                assert_eq!(d.get(r, c), expect);
            }
        }
        assert!(box_pixels > 0);
    }

    /// Independent check of the box intersection: the hit point lies on
    /// the box surface in the box frame.
    #[test]
    fn box_hits_lie_on_the_surface() {
        let (center, half, yaw) = ([0.2, -0.1, 3.0], [0.4, 0.3, 0.5], 0.7f64);
        let b = Primitive::Cuboid {
            center,
            half_extents: half,
            yaw,
            color: [0.5; 3],
        };
        let cam = Camera::for_size(24, 32);
        let mut hits = 0;
        for r in 0..24 {
            for c in 0..32 {
                let dir = cam.ray(r, c);
                if let Some((s, _)) = b.intersect(dir) {
                    hits += 1;
                    let p = sub(scale(dir, s), center);
                    let (sn, cs) = yaw.sin_cos();
                    let q = [cs * p[0] - sn * p[2], p[1], sn * p[0] + cs * p[2]];
                    let inside = (0..3).all(|i| q[i].abs() <= half[i] + 1e-9);
                    let on_face = (0..3).any(|i| (q[i].abs() - half[i]).abs() < 1e-9);
                    assert!(inside && on_face);
                }
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn sphere_depth_matches_quadratic() {
        let sp = Primitive::Sphere {
            center: [0.0, 0.0, 3.0],
            radius: 1.0,
            color: [0.5; 3],
        };
        // Central ray hits the front pole.
        let (s, n) = sp.intersect([0.0, 0.0, 1.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!((n[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_is_rejected() {
        assert!(matches!(
            synth_scene(&spec(vec![])),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn random_rooms_render_valid_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let s = SceneSpec::random_room(48, 64, &mut rng);
            let (_, d) = synth_scene(&s).unwrap();
            let (lo, hi) = d.min_max();
            assert!(lo > 0.3 && hi < 20.0, "{lo} {hi}");
            assert_eq!(synth_scene(&s).unwrap().1, d);
        }
    }
}
