//! Plane-induced rectification.
//!
//! A plane is made fronto-parallel by a virtual camera that shares the real
//! camera's center and whose optical axis is the plane normal:
//! `H = K_v · R · K⁻¹`. Since the centers coincide the map is an exact
//! homography for the whole image, and the rectified plane has uniform scale
//! `f_v / offset` pixels per meter.
//!
//! Pixel centers sit at integer coordinates. A warped point is in bounds when
//! it falls inside a source pixel's footprint, `[-0.5, w - 0.5)`.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;
use crate::scene::{CameraIntrinsics, Plane, SceneBundle};

/// Support pixels closer than this to the rectifying camera's horizon
/// (`n·K⁻¹p`) are rejected.
pub const HORIZON_EPS: f64 = 1e-6;

/// A 3x3 projective map, normalized so `m[2][2] = 1` (or unit Frobenius norm
/// when `m[2][2]` vanishes).
///
/// The sign removed by normalization is kept so that warps can tell points in
/// front of a camera from points that wrapped through infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    sign: f64,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("homography has non-finite entries".into()));
        }
        let scale = if m[(2, 2)].abs() > 1e-9 { m[(2, 2)] } else { m.norm() };
        if scale == 0.0 {
            return Err(Error::InvalidParam("homography is the zero matrix".into()));
        }
        let normalized = m / scale;
        if normalized.determinant().abs() <= 1e-12 {
            return Err(Error::InvalidParam("homography is singular".into()));
        }
        Ok(Self {
            m: normalized,
            sign: scale.signum(),
        })
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
            sign: 1.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
            sign: 1.0,
        }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    fn oriented(&self) -> Matrix3<f64> {
        self.m * self.sign
    }

    pub fn inverse(&self) -> Self {
        let inv = self
            .oriented()
            .try_inverse()
            .expect("determinant checked at construction");
        Self::new(inv).expect("inverse of a regular homography is regular")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.oriented() * other.oriented())
    }

    /// Map a point. `None` when it lands at or beyond infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = (m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)]) * self.sign;
        if w <= 1e-12 {
            return None;
        }
        let s = self.sign / w;
        Some((
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) * s,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) * s,
        ))
    }
}

/// Rotation taking `normal` onto the optical axis `(0, 0, 1)` by the smallest
/// angle, i.e. about `normal × ẑ`.
///
/// When `normal` is (anti)parallel to `-ẑ` the axis is undefined and a half
/// turn about `(1, 0, 0)` is used.
pub fn rectifying_rotation(normal: &Vector3<f64>) -> Matrix3<f64> {
    let z = Vector3::z();
    let axis = normal.cross(&z);
    let sin = axis.norm();
    let cos = normal.dot(&z);
    if sin < 1e-9 {
        if cos > 0.0 {
            return Matrix3::identity();
        }
        return Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    }
    let k = axis / sin;
    let angle = sin.atan2(cos);
    let (s, c) = angle.sin_cos();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() * c + kx * s + (k * k.transpose()) * (1.0 - c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedFrame {
    pub plane_id: String,
    pub h_orig_to_rect: Homography,
    pub rect_width: u32,
    pub rect_height: u32,
    pub pixels_per_meter: f64,
    pub virtual_focal: f64,
}

impl RectifiedFrame {
    pub fn dims(&self) -> (u32, u32) {
        (self.rect_width, self.rect_height)
    }
}

/// JSON view of a frame, as emitted by the `rectify` debug command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub plane_id: String,
    pub h_orig_to_rect: [[f64; 3]; 3],
    pub rect_width: u32,
    pub rect_height: u32,
    pub pixels_per_meter: f64,
    pub virtual_focal: f64,
}

impl From<&RectifiedFrame> for FrameRecord {
    fn from(f: &RectifiedFrame) -> Self {
        Self {
            plane_id: f.plane_id.clone(),
            h_orig_to_rect: f.h_orig_to_rect.rows(),
            rect_width: f.rect_width,
            rect_height: f.rect_height,
            pixels_per_meter: f.pixels_per_meter,
            virtual_focal: f.virtual_focal,
        }
    }
}

/// Fit a fronto-parallel view of `plane` whose longer side is
/// `target_long_side` pixels and whose bounds hug the warped support mask.
pub fn compute_rectification(
    plane: &Plane,
    intrinsics: &CameraIntrinsics,
    target_long_side: u32,
) -> Result<RectifiedFrame> {
    if target_long_side < 32 {
        return Err(Error::InvalidParam(format!(
            "target_long_side must be >= 32 (got {target_long_side})"
        )));
    }
    let support = &plane.support_mask;
    if support.dims() != intrinsics.dims() {
        return Err(Error::Dimensions {
            what: format!("support mask of plane `{}`", plane.id),
            expected: intrinsics.dims(),
            actual: support.dims(),
        });
    }
    if support.is_empty() {
        return Err(Error::Rectification(format!("plane `{}` has an empty support mask", plane.id)));
    }

    let rotation = rectifying_rotation(&plane.normal);
    let to_virtual = rotation * intrinsics.inverse_matrix();

    for (x, y) in support.iter_set() {
        let z = plane.normal.dot(&intrinsics.ray(x as f64, y as f64));
        if z.abs() < HORIZON_EPS {
            return Err(Error::Rectification(format!(
                "support pixel ({x}, {y}) of plane `{}` lies on the horizon",
                plane.id
            )));
        }
        if z < 0.0 {
            return Err(Error::Rectification(format!(
                "support pixel ({x}, {y}) of plane `{}` sees the plane behind the camera",
                plane.id
            )));
        }
    }

    // Bounding box over the corners of every support pixel.
    let (w, h) = support.dims();
    let cw = w as usize + 1;
    let mut corner = vec![false; cw * (h as usize + 1)];
    for (x, y) in support.iter_set() {
        let (x, y) = (x as usize, y as usize);
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            corner[(y + dy) * cw + x + dx] = true;
        }
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (i, _) in corner.iter().enumerate().filter(|(_, &c)| c) {
        let px = (i % cw) as f64 - 0.5;
        let py = (i / cw) as f64 - 0.5;
        let q = to_virtual * Vector3::new(px, py, 1.0);
        if q.z <= HORIZON_EPS {
            return Err(Error::Rectification(format!(
                "support of plane `{}` reaches the horizon",
                plane.id
            )));
        }
        let (u, v) = (q.x / q.z, q.y / q.z);
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let (du, dv) = (umax - umin, vmax - vmin);
    if !(du > 0.0 && dv > 0.0 && du.is_finite() && dv.is_finite()) {
        return Err(Error::Rectification(format!(
            "support of plane `{}` warps to a degenerate region",
            plane.id
        )));
    }

    let long = du.max(dv);
    let focal = target_long_side as f64 / long;
    let short_px = |extent: f64| ((focal * extent - 1e-9).ceil() as u32).clamp(1, target_long_side);
    let (rect_width, rect_height) = if du >= dv {
        (target_long_side, short_px(dv))
    } else {
        (short_px(du), target_long_side)
    };
    let k_virtual = Matrix3::new(
        focal,
        0.0,
        -0.5 - focal * umin,
        0.0,
        focal,
        -0.5 - focal * vmin,
        0.0,
        0.0,
        1.0,
    );
    let h = Homography::new(k_virtual * to_virtual)
        .map_err(|e| Error::Rectification(format!("plane `{}`: {e}", plane.id)))?;

    Ok(RectifiedFrame {
        plane_id: plane.id.clone(),
        h_orig_to_rect: h,
        rect_width,
        rect_height,
        pixels_per_meter: focal / plane.offset,
        virtual_focal: focal,
    })
}

/// Bilinear tap positions for a coordinate inside `[-0.5, len - 0.5)`.
#[inline]
fn taps(p: f64, len: u32) -> Option<(usize, usize, f64)> {
    if !(p >= -0.5 && p < len as f64 - 0.5) {
        return None;
    }
    let clamped = p.clamp(0.0, (len - 1) as f64);
    let i0 = clamped.floor() as usize;
    let i1 = (i0 + 1).min(len as usize - 1);
    Some((i0, i1, clamped - i0 as f64))
}

#[inline]
fn preimage(inv: &Homography, x: u32, y: u32, src_dims: (u32, u32)) -> Option<(usize, usize, usize, usize, f64, f64)> {
    let (px, py) = inv.apply(x as f64, y as f64)?;
    let (x0, x1, tx) = taps(px, src_dims.0)?;
    let (y0, y1, ty) = taps(py, src_dims.1)?;
    Some((x0, x1, y0, y1, tx, ty))
}

/// Backward-warp `src` by `h` into an image of `out_dims`, with bilinear
/// interpolation. Pixels without a preimage are black and flagged invalid.
pub fn warp_image(src: &RgbImage, h: &Homography, out_dims: (u32, u32)) -> (RgbImage, BinaryMask) {
    let inv = h.inverse();
    let (ow, oh) = out_dims;
    let mut out = RgbImage::new(ow, oh);
    let mut valid = BinaryMask::new(ow, oh);
    let sw = src.width() as usize;
    let raw = src.as_raw();
    for y in 0..oh {
        for x in 0..ow {
            let Some((x0, x1, y0, y1, tx, ty)) = preimage(&inv, x, y, src.dimensions()) else {
                continue;
            };
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let at = |xx: usize, yy: usize| raw[(yy * sw + xx) * 3 + c] as f64;
                let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
                let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
                *v = (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, Rgb(px));
            valid.set(x, y, true);
        }
    }
    (out, valid)
}

/// Warp a mask like [`warp_image`], thresholding the interpolated 0/1 field at 0.5.
pub fn warp_mask(src: &BinaryMask, h: &Homography, out_dims: (u32, u32)) -> BinaryMask {
    let inv = h.inverse();
    let (ow, oh) = out_dims;
    let at = |x: usize, y: usize| if src.get(x as u32, y as u32) { 1.0 } else { 0.0 };
    BinaryMask::from_fn(ow, oh, |x, y| {
        let Some((x0, x1, y0, y1, tx, ty)) = preimage(&inv, x, y, src.dims()) else {
            return false;
        };
        let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
        let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty >= 0.5
    })
}

/// Rectified pixels with no preimage inside the original image.
pub fn unknown_mask(frame: &RectifiedFrame, intrinsics: &CameraIntrinsics) -> BinaryMask {
    let inv = frame.h_orig_to_rect.inverse();
    let dims = intrinsics.dims();
    BinaryMask::from_fn(frame.rect_width, frame.rect_height, |x, y| {
        preimage(&inv, x, y, dims).is_none()
    })
}

/// Per-plane claims on the inpaint mask plus the pixels no plane claims.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// One entry per plane, in manifest order.
    pub claims: Vec<(String, BinaryMask)>,
    pub residual: BinaryMask,
}

impl Assignment {
    pub fn claim(&self, plane_id: &str) -> Option<&BinaryMask> {
        self.claims.iter().find(|(id, _)| id == plane_id).map(|(_, m)| m)
    }
}

/// Give each masked pixel to the nearest plane (smallest positive ray depth)
/// whose support contains it; ties go to the earlier plane.
pub fn assign_masked_pixels(bundle: &SceneBundle, inpaint_mask: &BinaryMask) -> Assignment {
    let (w, h) = inpaint_mask.dims();
    let mut claims: Vec<BinaryMask> = bundle.planes.iter().map(|_| BinaryMask::new(w, h)).collect();
    let mut residual = BinaryMask::new(w, h);
    for (x, y) in inpaint_mask.iter_set() {
        let mut best: Option<(usize, f64)> = None;
        for (i, plane) in bundle.planes.iter().enumerate() {
            if plane.support_mask.dims() != (w, h) || !plane.support_mask.get(x, y) {
                continue;
            }
            if let Some(t) = plane.ray_depth(&bundle.intrinsics, x as f64, y as f64) {
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((i, t));
                }
            }
        }
        match best {
            Some((i, _)) => claims[i].set(x, y, true),
            None => residual.set(x, y, true),
        }
    }
    Assignment {
        claims: bundle
            .planes
            .iter()
            .map(|p| p.id.clone())
            .zip(claims)
            .collect(),
        residual,
    }
}
