//! Analytic ray-cast renderer for box-shaped rooms with textured planes and
//! box furniture. Renders a furnished view and the matching empty room, so
//! removal quality can be measured against exact ground truth.
//!
//! World frame matches the camera convention: x right, y down (the floor is
//! y = 0, so the camera sits at negative y), z forward.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::BinaryMask;
use crate::scene::{canonicalize_plane, save_scene, CameraIntrinsics, InstanceMask, Plane, PlaneKind, SceneBundle};

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Checker { size: f64, a: [u8; 3], b: [u8; 3] },
    /// Stripes of width `period / 2`, rotated by `angle` radians in the plane.
    Stripes { period: f64, angle: f64, a: [u8; 3], b: [u8; 3] },
}

impl Texture {
    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let pick = |first: bool, a: &[u8; 3], b: &[u8; 3]| (if first { a } else { b }).map(|c| c as f64);
        match self {
            Texture::Checker { size, a, b } => {
                let parity = ((u / size).floor() as i64 + (v / size).floor() as i64).rem_euclid(2) == 0;
                pick(parity, a, b)
            }
            Texture::Stripes { period, angle, a, b } => {
                let s = u * angle.cos() + v * angle.sin();
                pick((s / period).rem_euclid(1.0) < 0.5, a, b)
            }
        }
    }
}

/// An infinite world plane `normal . X = offset` with in-plane texture axes.
#[derive(Debug, Clone)]
pub struct RoomPlane {
    pub id: String,
    pub kind: PlaneKind,
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub texture: Texture,
}

impl RoomPlane {
    pub fn floor(texture: Texture) -> Self {
        Self {
            id: "floor".into(),
            kind: PlaneKind::Floor,
            normal: -Vector3::y(),
            offset: 0.0,
            u_axis: Vector3::x(),
            v_axis: Vector3::z(),
            texture,
        }
    }

    /// Wall facing the camera at depth `z`.
    pub fn back_wall(z: f64, texture: Texture) -> Self {
        Self {
            id: "back_wall".into(),
            kind: PlaneKind::Wall,
            normal: Vector3::z(),
            offset: z,
            u_axis: Vector3::x(),
            v_axis: Vector3::y(),
            texture,
        }
    }

    /// Wall on the left at `x` (negative).
    pub fn left_wall(x: f64, texture: Texture) -> Self {
        Self {
            id: "left_wall".into(),
            kind: PlaneKind::Wall,
            normal: Vector3::x(),
            offset: x,
            u_axis: Vector3::z(),
            v_axis: Vector3::y(),
            texture,
        }
    }
}

/// Axis-aligned box resting anywhere in the room.
#[derive(Debug, Clone)]
pub struct Furniture {
    pub id: String,
    pub label: String,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub color: [u8; 3],
}

impl Furniture {
    /// A box standing on the floor with footprint center (x, z).
    pub fn on_floor(id: &str, label: &str, center: (f64, f64), size: Vector3<f64>, color: [u8; 3]) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            min: Vector3::new(center.0 - size.x / 2.0, -size.y, center.1 - size.z / 2.0),
            max: Vector3::new(center.0 + size.x / 2.0, 0.0, center.1 + size.z / 2.0),
            color,
        }
    }

    /// Ray parameter and face axis of the nearest hit.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let (mut t0, mut t1, mut axis) = (0.0f64, f64::INFINITY, 0);
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((self.min[k] - origin[k]) / dir[k], (self.max[k] - origin[k]) / dir[k]);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a > t0 {
                t0 = a;
                axis = k;
            }
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some((t0, axis))
    }

    fn shade(&self, axis: usize) -> [f64; 3] {
        // fixed per-face brightness so box edges read as edges
        let gain = [0.8, 1.0, 0.65][axis];
        self.color.map(|c| (c as f64 * gain).min(255.0))
    }
}

#[derive(Debug, Clone)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub position: Vector3<f64>,
    /// Turn to the right about the vertical axis, radians.
    pub yaw: f64,
    /// Tilt downwards, radians.
    pub pitch: f64,
}

impl Camera {
    /// Camera-from-world rotation.
    pub fn rotation(&self) -> Matrix3<f64> {
        let world_from_cam = Rotation3::from_axis_angle(&Vector3::y_axis(), self.yaw)
            * Rotation3::from_axis_angle(&-Vector3::x_axis(), self.pitch);
        world_from_cam.inverse().into_inner()
    }
}

#[derive(Debug, Clone)]
pub struct Room {
    pub camera: Camera,
    pub planes: Vec<RoomPlane>,
    pub furniture: Vec<Furniture>,
    /// Samples per pixel side.
    pub supersample: u32,
}

#[derive(Debug, Clone)]
pub struct RenderedRoom {
    /// Furnished image with layout and furniture instance masks.
    pub bundle: SceneBundle,
    /// The same view with all furniture removed.
    pub empty: RgbImage,
}

enum Hit {
    Plane(usize, f64),
    Box(usize, usize),
    Nothing,
}

impl Room {
    fn nearest_plane(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, p) in self.planes.iter().enumerate() {
            let denom = p.normal.dot(dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (p.offset - p.normal.dot(origin)) / denom;
            if t > 1e-9 && best.is_none_or(|(_, bt)| t < bt) {
                best = Some((k, t));
            }
        }
        best
    }

    fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, with_furniture: bool) -> Hit {
        let plane = self.nearest_plane(origin, dir);
        let mut best = match plane {
            Some((k, t)) => (t, Hit::Plane(k, t)),
            None => (f64::INFINITY, Hit::Nothing),
        };
        if with_furniture {
            for (k, f) in self.furniture.iter().enumerate() {
                if let Some((t, axis)) = f.hit(origin, dir) {
                    if t < best.0 {
                        best = (t, Hit::Box(k, axis));
                    }
                }
            }
        }
        best.1
    }

    fn color(&self, hit: &Hit, origin: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
        match *hit {
            Hit::Plane(k, t) => {
                let p = &self.planes[k];
                let x = origin + dir * t;
                p.texture.color(x.dot(&p.u_axis), x.dot(&p.v_axis))
            }
            Hit::Box(k, axis) => self.furniture[k].shade(axis),
            Hit::Nothing => [0.0; 3],
        }
    }

    pub fn render(&self) -> Result<RenderedRoom> {
        let intr = &self.camera.intrinsics;
        let problems = intr.problems();
        if !problems.is_empty() {
            return Err(Error::InvalidParam(problems.join("; ")));
        }
        let (w, h) = intr.dims();
        let r = self.camera.rotation();
        let world_from_cam = r.transpose();
        let k_inv = intr.inverse_matrix();
        let origin = self.camera.position;
        let s = self.supersample.max(1);
        let n = (s * s) as f64;

        let mut furnished = RgbImage::new(w, h);
        let mut empty = RgbImage::new(w, h);
        let mut supports: Vec<BinaryMask> = self.planes.iter().map(|_| BinaryMask::new(w, h)).collect();
        let mut instances: Vec<BinaryMask> = self.furniture.iter().map(|_| BinaryMask::new(w, h)).collect();

        for y in 0..h {
            for x in 0..w {
                let ray = |px: f64, py: f64| (world_from_cam * k_inv * Vector3::new(px, py, 1.0)).normalize();
                let center = ray(x as f64, y as f64);
                if let Some((k, _)) = self.nearest_plane(&origin, &center) {
                    supports[k].set(x, y, true);
                }
                let (mut acc_f, mut acc_e) = ([0.0; 3], [0.0; 3]);
                for sy in 0..s {
                    for sx in 0..s {
                        let dir = ray(
                            x as f64 + (sx as f64 + 0.5) / s as f64 - 0.5,
                            y as f64 + (sy as f64 + 0.5) / s as f64 - 0.5,
                        );
                        let bare = self.trace(&origin, &dir, false);
                        let cb = self.color(&bare, &origin, &dir);
                        let full = self.trace(&origin, &dir, true);
                        if let Hit::Box(k, _) = full {
                            instances[k].set(x, y, true);
                        }
                        let cf = self.color(&full, &origin, &dir);
                        for c in 0..3 {
                            acc_e[c] += cb[c];
                            acc_f[c] += cf[c];
                        }
                    }
                }
                let quantize = |a: [f64; 3]| Rgb(a.map(|v| (v / n).round().clamp(0.0, 255.0) as u8));
                furnished.put_pixel(x, y, quantize(acc_f));
                empty.put_pixel(x, y, quantize(acc_e));
            }
        }

        let planes = self
            .planes
            .iter()
            .zip(supports)
            .filter(|(_, m)| !m.is_empty())
            .map(|(p, support_mask)| {
                // camera frame: n_c = R n_w, d_c = d_w - n_w . C
                let (normal, offset) = canonicalize_plane(r * p.normal, p.offset - p.normal.dot(&origin))?;
                Ok(Plane {
                    id: p.id.clone(),
                    normal,
                    offset,
                    support_mask,
                    kind: p.kind,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let instances = self
            .furniture
            .iter()
            .zip(instances)
            .filter(|(_, m)| !m.is_empty())
            .map(|(f, mask)| InstanceMask {
                id: f.id.clone(),
                label: f.label.clone(),
                mask,
            })
            .collect();
        Ok(RenderedRoom {
            bundle: SceneBundle {
                image: furnished,
                intrinsics: *intr,
                planes,
                instances,
            },
            empty,
        })
    }
}

fn intrinsics(width: u32, height: u32, hfov_deg: f64) -> CameraIntrinsics {
    let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    }
}

/// Floor and two walls seen into the corner, with a sofa and a cabinet.
pub fn demo_room(width: u32, height: u32) -> Room {
    Room {
        camera: Camera {
            intrinsics: intrinsics(width, height, 70.0),
            position: Vector3::new(0.4, -1.5, 0.0),
            yaw: -0.3,
            pitch: 0.3,
        },
        planes: vec![
            RoomPlane::floor(Texture::Checker {
                size: 0.5,
                a: [178, 150, 118],
                b: [128, 102, 78],
            }),
            RoomPlane::back_wall(
                5.0,
                Texture::Stripes {
                    period: 0.4,
                    angle: 0.0,
                    a: [206, 200, 186],
                    b: [160, 170, 178],
                },
            ),
            RoomPlane::left_wall(
                -2.5,
                Texture::Stripes {
                    period: 0.5,
                    angle: std::f64::consts::FRAC_PI_2,
                    a: [196, 186, 206],
                    b: [150, 140, 166],
                },
            ),
        ],
        furniture: vec![
            Furniture::on_floor("sofa", "sofa", (-0.6, 3.6), Vector3::new(1.8, 0.8, 0.8), [70, 90, 150]),
            Furniture::on_floor("cabinet", "cabinet", (-1.9, 2.4), Vector3::new(0.6, 1.2, 0.6), [140, 60, 50]),
        ],
        supersample: 3,
    }
}

/// One scene of the oblique-texture suite: the empty room as ground truth,
/// its layout, and a furniture-silhouette mask.
#[derive(Debug, Clone)]
pub struct SuiteScene {
    pub name: String,
    pub bundle: SceneBundle,
    pub mask: BinaryMask,
}

/// Mask coverage of every suite scene lies in this range.
pub const SUITE_COVERAGE: (f64, f64) = (0.15, 0.35);

/// Five rooms with oblique periodic textures, each with one virtual furniture
/// silhouette covering between 15 and 35% of the frame.
pub fn oblique_suite(width: u32, height: u32, seed: u64) -> Result<Vec<SuiteScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::new();
    for i in 0..5 {
        let mut pick = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let tone = |base: u8, delta: i32| [base, (base as i32 + delta).clamp(0, 255) as u8, (base as i32 - delta).clamp(0, 255) as u8];
        let floor = if i % 2 == 0 {
            Texture::Checker {
                size: pick(0.3, 0.6),
                a: tone(180, 8),
                b: tone(110, 10),
            }
        } else {
            Texture::Stripes {
                period: pick(0.3, 0.6),
                angle: pick(0.2, 1.3),
                a: tone(190, -6),
                b: tone(120, 12),
            }
        };
        let back = Texture::Stripes {
            period: pick(0.3, 0.5),
            angle: pick(0.0, 0.6),
            a: tone(210, 4),
            b: tone(150, -8),
        };
        let left = Texture::Checker {
            size: pick(0.3, 0.5),
            a: tone(200, -10),
            b: tone(135, 6),
        };
        let camera = Camera {
            intrinsics: intrinsics(width, height, pick(60.0, 75.0)),
            position: Vector3::new(pick(0.0, 0.8), -pick(1.3, 1.7), 0.0),
            yaw: -pick(0.2, 0.5),
            pitch: pick(0.2, 0.45),
        };
        let target = pick(0.18, 0.32);
        let center = (pick(-1.4, -0.2), pick(2.6, 3.6));
        let aspect = Vector3::new(pick(1.0, 1.6), pick(0.6, 1.0), pick(0.6, 1.0));

        let room = |scale: f64| Room {
            camera: camera.clone(),
            planes: vec![
                RoomPlane::floor(floor.clone()),
                RoomPlane::back_wall(5.0, back.clone()),
                RoomPlane::left_wall(-2.5, left.clone()),
            ],
            furniture: vec![Furniture::on_floor("prop", "furniture", center, aspect * scale, [0, 0, 0])],
            supersample: 1,
        };
        // silhouette area grows with the box scale; bisect towards the target
        let (mut lo, mut hi) = (0.05, 4.0);
        let mut found = None;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let rendered = room(mid).render()?;
            let mask = rendered.bundle.instances.first().map(|m| m.mask.clone()).unwrap_or_else(|| BinaryMask::new(width, height));
            let cov = mask.coverage();
            if (cov - target).abs() < 0.01 {
                found = Some(mask);
                break;
            }
            if cov < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mask = found.ok_or_else(|| Error::InvalidParam(format!("suite scene {i}: cannot reach mask coverage {target:.2}")))?;

        let mut gt_room = room(1.0);
        gt_room.furniture.clear();
        gt_room.supersample = 3;
        let rendered = gt_room.render()?;
        let mut bundle = rendered.bundle;
        bundle.image = rendered.empty;
        scenes.push(SuiteScene {
            name: format!("scene_{i:02}"),
            bundle,
            mask,
        });
    }
    Ok(scenes)
}

/// Write the suite in the evaluation dataset layout.
pub fn write_suite(scenes: &[SuiteScene], dir: &Path) -> Result<()> {
    for s in scenes {
        let scene_dir = dir.join(&s.name);
        save_scene(&s.bundle, &scene_dir)?;
        let masks = scene_dir.join("masks");
        std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
        s.mask.save_png(&masks.join("furniture.png"))?;
    }
    Ok(())
}
