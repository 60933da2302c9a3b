//! Scene bundles: the image, camera, room layout and instance masks an erase
//! operates on, plus their on-disk directory format.
//!
//! Camera frame: origin at the camera center, x right, y down, z forward.
//! Pixel `(x, y)` (center at integer coordinates) back-projects along
//! `K⁻¹·(x, y, 1)`. Planes are stored as `n·X = d` with `‖n‖ = 1` and `d > 0`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, BinaryMask};

pub const MANIFEST_FILE: &str = "scene.json";

/// Largest deviation of a manifest normal from unit length that is accepted
/// silently; anything beyond is renormalized with a warning (or rejected in
/// strict mode).
pub const NORMAL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Unnormalized viewing ray `K⁻¹·(x, y, 1)` through an image point.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Problems with the intrinsics, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            out.push(format!("fx must be > 0 (got {})", self.fx));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            out.push(format!("fy must be > 0 (got {})", self.fy));
        }
        if self.width < 16 || self.height < 16 {
            out.push(format!(
                "image must be at least 16x16 (got {}x{})",
                self.width, self.height
            ));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) {
            out.push(format!("cx must lie in [0, {}] (got {})", self.width, self.cx));
        }
        if !(0.0..=self.height as f64).contains(&self.cy) {
            out.push(format!("cy must lie in [0, {}] (got {})", self.height, self.cy));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneKind {
    Floor,
    Ceiling,
    Wall,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub id: String,
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Amodal extent of the plane in the image, including occluded parts.
    pub support_mask: BinaryMask,
    pub kind: PlaneKind,
}

impl Plane {
    /// Depth `t` along the ray of pixel `(x, y)` at which it meets the plane,
    /// or `None` when the intersection is behind the camera or at infinity.
    #[inline]
    pub fn ray_depth(&self, intrinsics: &CameraIntrinsics, x: f64, y: f64) -> Option<f64> {
        let denom = self.normal.dot(&intrinsics.ray(x, y));
        let t = self.offset / denom;
        (denom != 0.0 && t > 0.0 && t.is_finite()).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub id: String,
    pub label: String,
    pub mask: BinaryMask,
}

/// Immutable after load; share it by reference across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub image: RgbImage,
    pub intrinsics: CameraIntrinsics,
    pub planes: Vec<Plane>,
    pub instances: Vec<InstanceMask>,
}

impl SceneBundle {
    pub fn dims(&self) -> (u32, u32) {
        self.image.dimensions()
    }

    pub fn plane(&self, id: &str) -> Option<&Plane> {
        self.planes.iter().find(|p| p.id == id)
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceMask> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.id.clone()).collect()
    }
}

/// Bring `n·X = d` into canonical form: unit normal and positive offset.
///
/// A plane through the camera center (`d = 0`) has no canonical form and is
/// rejected, as is a zero normal.
pub fn canonicalize_plane(normal: Vector3<f64>, offset: f64) -> Result<(Vector3<f64>, f64)> {
    let norm = normal.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegeneratePlane(format!(
            "normal {:?} has zero or non-finite length",
            normal.as_slice()
        )));
    }
    let (n, d) = (normal / norm, offset / norm);
    if d == 0.0 || !d.is_finite() {
        return Err(Error::DegeneratePlane(
            "plane passes through the camera center (offset 0)".into(),
        ));
    }
    Ok(if d < 0.0 { (-n, -d) } else { (n, d) })
}

/// A broken type invariant. Violations are data; see [`validate_scene`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Intrinsics(String),
    ImageDims { expected: (u32, u32), actual: (u32, u32) },
    DuplicatePlaneId(String),
    DuplicateInstanceId(String),
    NonUnitNormal { plane: String, norm: f64 },
    NonPositiveOffset { plane: String, offset: f64 },
    SupportMaskDims { plane: String, actual: (u32, u32) },
    InstanceMaskDims { instance: String, actual: (u32, u32) },
    EmptyInstanceMask(String),
    /// Support pixels whose ray meets the plane at non-positive depth.
    PlaneBehindCamera { plane: String, pixels: usize },
}

impl Violation {
    /// The entity (plane, instance, image or intrinsics) the violation concerns.
    pub fn entity(&self) -> String {
        match self {
            Violation::Intrinsics(_) => "intrinsics".into(),
            Violation::ImageDims { .. } => "image".into(),
            Violation::DuplicatePlaneId(id)
            | Violation::NonUnitNormal { plane: id, .. }
            | Violation::NonPositiveOffset { plane: id, .. }
            | Violation::SupportMaskDims { plane: id, .. }
            | Violation::PlaneBehindCamera { plane: id, .. } => format!("plane `{id}`"),
            Violation::DuplicateInstanceId(id)
            | Violation::InstanceMaskDims { instance: id, .. }
            | Violation::EmptyInstanceMask(id) => format!("instance `{id}`"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entity = self.entity();
        match self {
            Violation::Intrinsics(msg) => write!(f, "{entity}: {msg}"),
            Violation::ImageDims { expected, actual } => {
                write!(f, "{entity}: dimensions {actual:?} differ from intrinsics {expected:?}")
            }
            Violation::DuplicatePlaneId(_) | Violation::DuplicateInstanceId(_) => {
                write!(f, "{entity}: duplicate id")
            }
            Violation::NonUnitNormal { norm, .. } => write!(f, "{entity}: normal has length {norm}"),
            Violation::NonPositiveOffset { offset, .. } => {
                write!(f, "{entity}: offset {offset} is not positive")
            }
            Violation::SupportMaskDims { actual, .. } | Violation::InstanceMaskDims { actual, .. } => {
                write!(f, "{entity}: mask dimensions {actual:?} differ from the image")
            }
            Violation::EmptyInstanceMask(_) => write!(f, "{entity}: mask is empty"),
            Violation::PlaneBehindCamera { pixels, .. } => {
                write!(f, "{entity}: {pixels} support pixels see the plane behind the camera")
            }
        }
    }
}

pub fn validate_scene(bundle: &SceneBundle) -> Vec<Violation> {
    let mut out: Vec<Violation> = bundle
        .intrinsics
        .problems()
        .into_iter()
        .map(Violation::Intrinsics)
        .collect();
    let dims = bundle.intrinsics.dims();
    if bundle.image.dimensions() != dims {
        out.push(Violation::ImageDims {
            expected: dims,
            actual: bundle.image.dimensions(),
        });
    }

    let mut seen = HashSet::new();
    for plane in &bundle.planes {
        if !seen.insert(plane.id.as_str()) {
            out.push(Violation::DuplicatePlaneId(plane.id.clone()));
        }
        let norm = plane.normal.norm();
        if (norm - 1.0).abs() > 1e-6 {
            out.push(Violation::NonUnitNormal {
                plane: plane.id.clone(),
                norm,
            });
        }
        if plane.offset.is_nan() || plane.offset <= 0.0 {
            out.push(Violation::NonPositiveOffset {
                plane: plane.id.clone(),
                offset: plane.offset,
            });
        }
        if plane.support_mask.dims() != dims {
            out.push(Violation::SupportMaskDims {
                plane: plane.id.clone(),
                actual: plane.support_mask.dims(),
            });
        } else if plane.offset > 0.0 {
            let behind = plane
                .support_mask
                .iter_set()
                .filter(|&(x, y)| plane.ray_depth(&bundle.intrinsics, x as f64, y as f64).is_none())
                .count();
            if behind > 0 {
                out.push(Violation::PlaneBehindCamera {
                    plane: plane.id.clone(),
                    pixels: behind,
                });
            }
        }
    }

    let mut seen = HashSet::new();
    for inst in &bundle.instances {
        if !seen.insert(inst.id.as_str()) {
            out.push(Violation::DuplicateInstanceId(inst.id.clone()));
        }
        if inst.mask.dims() != dims {
            out.push(Violation::InstanceMaskDims {
                instance: inst.id.clone(),
                actual: inst.mask.dims(),
            });
        } else if inst.mask.is_empty() {
            out.push(Violation::EmptyInstanceMask(inst.id.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    intrinsics: CameraIntrinsics,
    #[serde(default)]
    planes: Vec<PlaneEntry>,
    #[serde(default)]
    instances: Vec<InstanceEntry>,
    image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlaneEntry {
    id: String,
    normal: [f64; 3],
    offset: f64,
    kind: PlaneKind,
    mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceEntry {
    id: String,
    label: String,
    mask: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject normals whose length deviates from 1 by more than
    /// [`NORMAL_TOLERANCE`] instead of renormalizing them.
    pub strict_normals: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub bundle: SceneBundle,
    pub warnings: Vec<String>,
}

pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    load_scene_with(dir, LoadOptions::default())
}

pub fn load_scene_with(dir: &Path, options: LoadOptions) -> Result<LoadedScene> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    let mp = manifest_path.as_path();
    let mut warnings = Vec::new();

    let intrinsics = manifest.intrinsics;
    if let Some(problem) = intrinsics.problems().into_iter().next() {
        return Err(Error::scene(mp, "intrinsics", problem));
    }
    let dims = intrinsics.dims();

    let image_path = resolve(dir, mp, "image", &manifest.image)?;
    let image = raster::load_rgb(&image_path)?;
    if image.dimensions() != dims {
        return Err(Error::scene(
            &image_path,
            "image",
            format!("dimensions {:?} differ from intrinsics {:?}", image.dimensions(), dims),
        ));
    }

    let mut planes = Vec::with_capacity(manifest.planes.len());
    let mut ids = HashSet::new();
    for (i, entry) in manifest.planes.iter().enumerate() {
        if !ids.insert(entry.id.clone()) {
            return Err(Error::scene(mp, format!("planes[{i}].id"), format!("duplicate id `{}`", entry.id)));
        }
        let raw = Vector3::from(entry.normal);
        let norm = raw.norm();
        if (norm - 1.0).abs() > NORMAL_TOLERANCE {
            let msg = format!("normal of plane `{}` has length {norm}", entry.id);
            if options.strict_normals || norm == 0.0 {
                return Err(Error::scene(mp, format!("planes[{i}].normal"), msg));
            }
            log::warn!("{msg}; renormalized");
            warnings.push(format!("{msg}; renormalized"));
        }
        let (normal, offset) = canonicalize_plane(raw, entry.offset)
            .map_err(|e| Error::scene(mp, format!("planes[{i}]"), e.to_string()))?;
        let mask_path = resolve(dir, mp, &format!("planes[{i}].mask"), &entry.mask)?;
        let support_mask = load_mask(&mask_path, dims, &format!("planes[{i}].mask"))?;
        planes.push(Plane {
            id: entry.id.clone(),
            normal,
            offset,
            support_mask,
            kind: entry.kind,
        });
    }

    let mut instances = Vec::with_capacity(manifest.instances.len());
    let mut ids = HashSet::new();
    for (i, entry) in manifest.instances.iter().enumerate() {
        if !ids.insert(entry.id.clone()) {
            return Err(Error::scene(mp, format!("instances[{i}].id"), format!("duplicate id `{}`", entry.id)));
        }
        let mask_path = resolve(dir, mp, &format!("instances[{i}].mask"), &entry.mask)?;
        let mask = load_mask(&mask_path, dims, &format!("instances[{i}].mask"))?;
        if mask.is_empty() {
            return Err(Error::scene(&mask_path, format!("instances[{i}].mask"), "mask is empty"));
        }
        instances.push(InstanceMask {
            id: entry.id.clone(),
            label: entry.label.clone(),
            mask,
        });
    }

    let bundle = SceneBundle {
        image,
        intrinsics,
        planes,
        instances,
    };
    if let Some(v) = validate_scene(&bundle).into_iter().next() {
        return Err(Error::scene(mp, v.entity(), v.to_string()));
    }
    Ok(LoadedScene { bundle, warnings })
}

fn resolve(dir: &Path, manifest: &Path, field: &str, rel: &str) -> Result<PathBuf> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(Error::scene(manifest, field, format!("missing file {}", path.display())));
    }
    Ok(path)
}

fn load_mask(path: &Path, dims: (u32, u32), field: &str) -> Result<BinaryMask> {
    let mask = BinaryMask::load_png(path)?;
    if mask.dims() != dims {
        return Err(Error::scene(
            path,
            field,
            format!("dimension mismatch: mask is {:?}, image is {:?}", mask.dims(), dims),
        ));
    }
    Ok(mask)
}

fn file_stem_for(id: &str) -> Result<&str> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::InvalidParam(format!("id `{id}` cannot be used as a file name")));
    }
    Ok(id)
}

/// Write a bundle in the directory layout [`load_scene`] reads.
pub fn save_scene(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    for sub in ["planes", "instances"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    raster::save_rgb(&bundle.image, &dir.join("image.png"))?;

    let mut planes = Vec::new();
    for plane in &bundle.planes {
        let rel = format!("planes/{}.png", file_stem_for(&plane.id)?);
        plane.support_mask.save_png(&dir.join(&rel))?;
        planes.push(PlaneEntry {
            id: plane.id.clone(),
            normal: [plane.normal.x, plane.normal.y, plane.normal.z],
            offset: plane.offset,
            kind: plane.kind,
            mask: rel,
        });
    }
    let mut instances = Vec::new();
    for inst in &bundle.instances {
        let rel = format!("instances/{}.png", file_stem_for(&inst.id)?);
        inst.mask.save_png(&dir.join(&rel))?;
        instances.push(InstanceEntry {
            id: inst.id.clone(),
            label: inst.label.clone(),
            mask: rel,
        });
    }
    let manifest = Manifest {
        intrinsics: bundle.intrinsics,
        planes,
        instances,
        image: "image.png".into(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
