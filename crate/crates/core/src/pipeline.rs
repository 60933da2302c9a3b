//! End-to-end erase: mask construction, per-plane rectify / fill / unrectify,
//! compositing, and a final full-resolution pass over non-planar pixels.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use image::RgbImage;
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{assign_masked_pixels, compute_rectification, warp_image, warp_mask, RectifiedFrame};
use crate::inpaint::{histogram_match, inpaint, BackendConfig, InpaintRequest};
use crate::raster::{check_dims, BinaryMask};
use crate::scene::{InstanceMask, Plane, SceneBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: BackendConfig,
    pub target_long_side: u32,
    pub mask_dilation_px: u32,
    pub feather_px: u32,
    pub histogram_match: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            target_long_side: 512,
            mask_dilation_px: 3,
            feather_px: 2,
            histogram_match: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_long_side < 32 {
            return Err(Error::InvalidParam(format!(
                "target_long_side must be at least 32 (got {})",
                self.target_long_side
            )));
        }
        self.backend.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Backend seed for the plane at `index`; the final pass uses `index = planes.len()`.
    fn stage_seed(&self, index: usize) -> u64 {
        let mut z = self.seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    All,
    Ids(Vec<String>),
}

/// Union of the selected instance masks, dilated by a disk.
pub fn build_inpaint_mask(
    instances: &[InstanceMask],
    dims: (u32, u32),
    selection: &Selection,
    dilation_px: u32,
) -> Result<BinaryMask> {
    let chosen: Vec<&InstanceMask> = match selection {
        Selection::All => instances.iter().collect(),
        Selection::Ids(ids) => ids
            .iter()
            .map(|id| {
                instances.iter().find(|i| &i.id == id).ok_or_else(|| Error::UnknownInstance {
                    id: id.clone(),
                    valid: instances.iter().map(|i| i.id.clone()).collect(),
                })
            })
            .collect::<Result<_>>()?,
    };
    let mut mask = BinaryMask::new(dims.0, dims.1);
    for inst in chosen {
        check_dims(&format!("instance `{}` mask", inst.id), dims, inst.mask.dims())?;
        mask = mask.or(&inst.mask);
    }
    Ok(if dilation_px > 0 { mask.dilate_disk(dilation_px) } else { mask })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    EmptyClaim,
    /// Nothing of the plane is visible outside the mask; its claim is handed
    /// to the final pass.
    NoKnownPixels,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PlaneTimings {
    pub rectify_ms: f64,
    pub backend_ms: f64,
    pub unrectify_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PlaneFill {
    pub frame: RectifiedFrame,
    pub rectified_input: RgbImage,
    /// Pixels the backend had to fill (furniture, out-of-frame, off-plane).
    pub rectified_mask: BinaryMask,
    pub rectified_output: RgbImage,
    /// Backend output mapped back to image dims; only claimed pixels are used.
    pub unrectified_patch: RgbImage,
    pub timings: PlaneTimings,
}

#[derive(Debug, Clone)]
pub struct PlaneInpaintResult {
    pub plane_id: String,
    pub claim: BinaryMask,
    pub fill: Option<PlaneFill>,
    pub skipped: Option<SkipReason>,
}

impl PlaneInpaintResult {
    fn skipped(plane: &Plane, claim: &BinaryMask, reason: SkipReason) -> Self {
        Self {
            plane_id: plane.id.clone(),
            claim: claim.clone(),
            fill: None,
            skipped: Some(reason),
        }
    }
}

/// Wall-clock durations in milliseconds. The per-plane stages are summed over
/// planes, which run concurrently, so they can exceed `planes_ms`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub mask_ms: f64,
    pub rectify_ms: f64,
    pub backend_ms: f64,
    pub unrectify_ms: f64,
    pub planes_ms: f64,
    pub composite_ms: f64,
    pub final_pass_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub final_image: RgbImage,
    pub inpaint_mask: BinaryMask,
    pub per_plane: Vec<PlaneInpaintResult>,
    pub residual_mask: BinaryMask,
    pub final_pass_ran: bool,
    pub timings: Timings,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Fill one plane's share of the inpaint mask in its rectified frame.
pub fn inpaint_plane(
    bundle: &SceneBundle,
    plane: &Plane,
    inpaint_mask: &BinaryMask,
    claim: &BinaryMask,
    config: &PipelineConfig,
) -> Result<PlaneInpaintResult> {
    let id = plane.id.as_str();
    if claim.is_empty() {
        return Ok(PlaneInpaintResult::skipped(plane, claim, SkipReason::EmptyClaim));
    }
    if !claim.is_subset_of(&inpaint_mask.and(&plane.support_mask)) {
        return Err(Error::InvalidRequest(format!(
            "claim of plane `{id}` is not inside its support and the inpaint mask"
        )));
    }

    let started = Instant::now();
    let frame = compute_rectification(plane, &bundle.intrinsics, config.target_long_side)
        .map_err(|e| e.in_stage("rectify", Some(id)))?;
    let h = &frame.h_orig_to_rect;
    let dims = frame.dims();
    let (rectified_input, _) = warp_image(&bundle.image, h, dims);
    // Eroding first keeps every bilinear tap of a known rectified pixel on a
    // known source pixel, so masked content cannot bleed into the context.
    let known = warp_mask(&plane.support_mask.and_not(inpaint_mask).erode3(), h, dims);
    let rectified_mask = known.not();
    let rectify_ms = ms(started.elapsed());
    if known.is_empty() {
        return Ok(PlaneInpaintResult::skipped(plane, claim, SkipReason::NoKnownPixels));
    }

    let started = Instant::now();
    let request = InpaintRequest::new(rectified_input.clone(), rectified_mask.clone())
        .map_err(|e| e.in_stage("backend", Some(id)))?;
    let mut rectified_output = inpaint(&request, &config.backend).map_err(|e| e.in_stage("backend", Some(id)))?;
    if config.histogram_match {
        rectified_output = histogram_match(&rectified_output, &rectified_mask, &known)
            .map_err(|e| e.in_stage("backend", Some(id)))?;
    }
    let backend_ms = ms(started.elapsed());

    let started = Instant::now();
    let (unrectified_patch, valid) = warp_image(&rectified_output, &h.inverse(), bundle.dims());
    let missing = claim.and_not(&valid).count();
    if missing > 0 {
        // Claimed pixels always lie inside the frame's support bounding box.
        warn!("plane `{id}`: {missing} claimed pixels fell outside the rectified frame");
    }
    let unrectify_ms = ms(started.elapsed());

    Ok(PlaneInpaintResult {
        plane_id: plane.id.clone(),
        claim: claim.clone(),
        fill: Some(PlaneFill {
            frame,
            rectified_input,
            rectified_mask,
            rectified_output,
            unrectified_patch,
            timings: PlaneTimings {
                rectify_ms,
                backend_ms,
                unrectify_ms,
            },
        }),
        skipped: None,
    })
}

/// Paste each filled plane's patch over its claim. Claimed pixels within
/// `feather_px` (8-connected steps) of a pixel outside `inpaint_mask` are
/// blended: at step k the patch weight is k / (feather_px + 1).
pub fn composite(
    base: &RgbImage,
    inpaint_mask: &BinaryMask,
    results: &[PlaneInpaintResult],
    feather_px: u32,
) -> Result<RgbImage> {
    let (w, h) = base.dimensions();
    check_dims("composite inpaint mask", (w, h), inpaint_mask.dims())?;
    let mut owner: Vec<Option<usize>> = vec![None; (w * h) as usize];
    for (k, r) in results.iter().enumerate() {
        let Some(fill) = &r.fill else { continue };
        check_dims(&format!("plane `{}` claim", r.plane_id), (w, h), r.claim.dims())?;
        check_dims(&format!("plane `{}` patch", r.plane_id), (w, h), fill.unrectified_patch.dimensions())?;
        for (x, y) in r.claim.iter_set() {
            let slot = &mut owner[(y * w + x) as usize];
            if let Some(prev) = *slot {
                return Err(Error::InvalidRequest(format!(
                    "claims of planes `{}` and `{}` overlap at ({x}, {y})",
                    results[prev].plane_id, r.plane_id
                )));
            }
            *slot = Some(k);
        }
    }

    let steps = steps_from_known(inpaint_mask, &owner, feather_px);
    let mut out = base.clone();
    for (i, o) in owner.iter().enumerate() {
        let Some(k) = *o else { continue };
        let (x, y) = (i as u32 % w, i as u32 / w);
        let patch = results[k].fill.as_ref().expect("owner has a fill").unrectified_patch.get_pixel(x, y);
        let px = match steps[i] {
            Some(step) => {
                let alpha = step as f64 / (feather_px + 1) as f64;
                let b = base.get_pixel(x, y);
                image::Rgb(std::array::from_fn(|c| {
                    (alpha * patch[c] as f64 + (1.0 - alpha) * b[c] as f64).round() as u8
                }))
            }
            None => *patch,
        };
        out.put_pixel(x, y, px);
    }
    Ok(out)
}

/// For claimed pixels, the 8-connected step count (1 = touching) to the
/// nearest pixel outside the inpaint mask, if it is at most `limit`.
fn steps_from_known(inpaint_mask: &BinaryMask, owner: &[Option<usize>], limit: u32) -> Vec<Option<u32>> {
    let (w, h) = inpaint_mask.dims();
    let mut steps = vec![None; owner.len()];
    if limit == 0 {
        return steps;
    }
    let mut queue = VecDeque::new();
    for (x, y) in inpaint_mask.not().iter_set() {
        queue.push_back((x, y, 0u32));
    }
    let mut seen: Vec<bool> = inpaint_mask.bits().iter().map(|b| !b).collect();
    while let Some((x, y, d)) = queue.pop_front() {
        if d == limit {
            continue;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let i = (ny as u32 * w + nx as u32) as usize;
                // unclaimed masked pixels do not carry the ramp
                if seen[i] || owner[i].is_none() {
                    continue;
                }
                seen[i] = true;
                steps[i] = Some(d + 1);
                queue.push_back((nx as u32, ny as u32, d + 1));
            }
        }
    }
    steps
}

/// Remove the selected instances from the scene.
pub fn erase(bundle: &SceneBundle, selection: &Selection, config: &PipelineConfig) -> Result<PipelineResult> {
    let started = Instant::now();
    let mask = build_inpaint_mask(&bundle.instances, bundle.dims(), selection, config.mask_dilation_px)
        .map_err(|e| e.in_stage("mask", None))?;
    let mask_ms = ms(started.elapsed());
    let mut result = run_with_mask(bundle, &mask, config)?;
    result.timings.mask_ms = mask_ms;
    result.timings.total_ms += mask_ms;
    Ok(result)
}

/// The erase pipeline for an explicit inpaint mask.
pub fn run_with_mask(bundle: &SceneBundle, inpaint_mask: &BinaryMask, config: &PipelineConfig) -> Result<PipelineResult> {
    config.validate()?;
    check_dims("inpaint mask", bundle.dims(), inpaint_mask.dims())?;
    let started = Instant::now();
    let mut timings = Timings::default();

    if inpaint_mask.is_empty() {
        return Ok(PipelineResult {
            final_image: bundle.image.clone(),
            inpaint_mask: inpaint_mask.clone(),
            per_plane: Vec::new(),
            residual_mask: inpaint_mask.clone(),
            final_pass_ran: false,
            timings,
        });
    }

    let assignment = assign_masked_pixels(bundle, inpaint_mask);
    let planes_started = Instant::now();
    let per_plane: Vec<PlaneInpaintResult> = bundle
        .planes
        .par_iter()
        .zip(assignment.claims.par_iter())
        .enumerate()
        .map(|(index, (plane, (_, claim)))| {
            let plane_config = PipelineConfig {
                backend: config.backend.with_seed(config.stage_seed(index)),
                ..config.clone()
            };
            inpaint_plane(bundle, plane, inpaint_mask, claim, &plane_config)
        })
        .collect::<Result<_>>()?;
    timings.planes_ms = ms(planes_started.elapsed());

    let mut residual = assignment.residual;
    for r in &per_plane {
        if let Some(fill) = &r.fill {
            timings.rectify_ms += fill.timings.rectify_ms;
            timings.backend_ms += fill.timings.backend_ms;
            timings.unrectify_ms += fill.timings.unrectify_ms;
        }
        if r.skipped == Some(SkipReason::NoKnownPixels) {
            debug!("plane `{}` has no visible pixels; deferring its claim", r.plane_id);
            residual = residual.or(&r.claim);
        }
    }

    let composite_started = Instant::now();
    let composited = composite(&bundle.image, inpaint_mask, &per_plane, config.feather_px)
        .map_err(|e| e.in_stage("composite", None))?;
    timings.composite_ms = ms(composite_started.elapsed());

    let final_started = Instant::now();
    let final_pass_ran = !residual.is_empty();
    let mut final_image = if final_pass_ran {
        let backend = config.backend.with_seed(config.stage_seed(bundle.planes.len()));
        let request = InpaintRequest::new(composited, residual.clone()).map_err(|e| e.in_stage("final pass", None))?;
        inpaint(&request, &backend).map_err(|e| e.in_stage("final pass", None))?
    } else {
        composited
    };
    timings.final_pass_ms = ms(final_started.elapsed());

    // Belt and braces: nothing outside the mask may change.
    let outside = inpaint_mask.not();
    crate::raster::paste_masked(&mut final_image, &bundle.image, &outside);
    timings.total_ms = ms(started.elapsed());

    Ok(PipelineResult {
        final_image,
        inpaint_mask: inpaint_mask.clone(),
        per_plane,
        residual_mask: residual,
        final_pass_ran,
        timings,
    })
}

/// Write the rectified input, mask, and output of every filled plane, plus a
/// JSON summary of frames and timings.
pub fn dump_debug(result: &PipelineResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = BTreeMap::new();
    for r in &result.per_plane {
        let Some(fill) = &r.fill else { continue };
        let stem = dir.join(&r.plane_id);
        let path = |suffix: &str| stem.with_file_name(format!("{}_{suffix}.png", r.plane_id));
        crate::raster::save_rgb(&fill.rectified_input, &path("input"))?;
        fill.rectified_mask.save_png(&path("mask"))?;
        crate::raster::save_rgb(&fill.rectified_output, &path("output"))?;
        crate::raster::save_rgb(&fill.unrectified_patch, &path("patch"))?;
        frames.insert(r.plane_id.clone(), crate::geometry::FrameRecord::from(&fill.frame));
    }
    result.inpaint_mask.save_png(&dir.join("inpaint_mask.png"))?;
    result.residual_mask.save_png(&dir.join("residual_mask.png"))?;
    let summary = serde_json::json!({ "frames": frames, "timings": result.timings });
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&summary).expect("serializable"))
        .map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn square(id: &str, x0: u32, y0: u32, side: u32) -> InstanceMask {
        InstanceMask {
            id: id.into(),
            label: "thing".into(),
            mask: BinaryMask::from_fn(20, 20, |x, y| (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)),
        }
    }

    #[test]
    fn mask_union_counts() {
        let none = build_inpaint_mask(&[], (20, 20), &Selection::All, 3).unwrap();
        assert!(none.is_empty());
        // two 3x3 squares sharing one 3x1 column
        let inst = [square("a", 2, 2, 3), square("b", 4, 2, 3)];
        let m = build_inpaint_mask(&inst, (20, 20), &Selection::All, 0).unwrap();
        assert_eq!(m.count(), 15);
        let only_b = build_inpaint_mask(&inst, (20, 20), &Selection::Ids(vec!["b".into()]), 0).unwrap();
        assert_eq!(only_b.count(), 9);
        let err = build_inpaint_mask(&inst, (20, 20), &Selection::Ids(vec!["c".into()]), 0).unwrap_err();
        assert!(matches!(err, Error::UnknownInstance { ref valid, .. } if valid.len() == 2));
    }

    fn fake_result(id: &str, claim: BinaryMask, color: [u8; 3]) -> PlaneInpaintResult {
        let (w, h) = claim.dims();
        PlaneInpaintResult {
            plane_id: id.into(),
            claim,
            fill: Some(PlaneFill {
                frame: RectifiedFrame {
                    plane_id: id.into(),
                    h_orig_to_rect: crate::geometry::Homography::identity(),
                    rect_width: w,
                    rect_height: h,
                    pixels_per_meter: 1.0,
                    virtual_focal: 1.0,
                },
                rectified_input: RgbImage::new(w, h),
                rectified_mask: BinaryMask::new(w, h),
                rectified_output: RgbImage::new(w, h),
                unrectified_patch: RgbImage::from_pixel(w, h, Rgb(color)),
                timings: PlaneTimings::default(),
            }),
            skipped: None,
        }
    }

    #[test]
    fn hard_paste_without_feather() {
        let base = RgbImage::from_fn(12, 12, |x, y| Rgb([x as u8, y as u8, 5]));
        let mask = BinaryMask::from_fn(12, 12, |x, _| x >= 6);
        let out = composite(&base, &mask, &[fake_result("p", mask.clone(), [200, 0, 0])], 0).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let want = if x >= 6 { Rgb([200, 0, 0]) } else { *base.get_pixel(x, y) };
                assert_eq!(*out.get_pixel(x, y), want);
            }
        }
        assert_eq!(composite(&base, &mask, &[], 2).unwrap(), base);
    }

    #[test]
    fn feather_ramp_across_straight_boundary() {
        let base = RgbImage::from_pixel(12, 6, Rgb([0, 0, 0]));
        let mask = BinaryMask::from_fn(12, 6, |x, _| x >= 4);
        let out = composite(&base, &mask, &[fake_result("p", mask.clone(), [90, 90, 90])], 2).unwrap();
        // patch weights 1/3 and 2/3 on the two columns next to the boundary
        assert_eq!(out.get_pixel(4, 3)[0], 30);
        assert_eq!(out.get_pixel(5, 3)[0], 60);
        assert_eq!(out.get_pixel(6, 3)[0], 90);
        assert_eq!(out.get_pixel(3, 3)[0], 0);
    }

    #[test]
    fn overlapping_claims_rejected() {
        let base = RgbImage::new(8, 8);
        let a = BinaryMask::from_fn(8, 8, |x, _| x < 5);
        let b = BinaryMask::from_fn(8, 8, |x, _| x > 3);
        let mask = a.or(&b);
        let err = composite(&base, &mask, &[fake_result("a", a, [1, 1, 1]), fake_result("b", b, [2, 2, 2])], 0);
        assert!(err.unwrap_err().to_string().contains("overlap"));
    }

    #[test]
    fn config_json_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"backend": {"kind": "diffusion"}, "seed": 4}"#).unwrap();
        assert_eq!(c.target_long_side, 512);
        assert_eq!((c.mask_dilation_px, c.feather_px, c.histogram_match, c.seed), (3, 2, true, 4));
        let bad = PipelineConfig {
            target_long_side: 16,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let c = PipelineConfig::default();
        assert_ne!(c.stage_seed(0), c.stage_seed(1));
        assert_eq!(c.stage_seed(3), c.stage_seed(3));
    }
}
