//! Multiscale PatchMatch image completion.
//!
//! Coarse to fine: the hole is seeded by onion peeling at the coarsest level,
//! then each level alternates NNF search and patch voting. The NNF of a level
//! (offsets doubled) seeds the next finer one.

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nnf::{search, NNField, SourceSet};
use super::planar::{onion_peel, Planar};
use super::InpaintRequest;
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchMatchParams {
    pub patch_size: u32,
    /// Search-then-vote rounds per pyramid level.
    pub em_iters: u32,
    /// Propagation/random-search sweeps per NNF update.
    pub nnf_iters: u32,
    /// Shrink factor of the random search window.
    pub search_decay: f64,
    /// Smallest side of the coarsest level; `None` means twice the patch size.
    pub min_pyramid_side: Option<u32>,
    pub seed: u64,
}

impl Default for PatchMatchParams {
    fn default() -> Self {
        Self {
            patch_size: 7,
            em_iters: 8,
            nnf_iters: 5,
            search_decay: 0.5,
            min_pyramid_side: None,
            seed: 0,
        }
    }
}

impl PatchMatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!(
                "patch_size must be odd and >= 3 (got {})",
                self.patch_size
            )));
        }
        if !(self.search_decay > 0.0 && self.search_decay < 1.0) {
            return Err(Error::InvalidParam(format!(
                "search_decay must lie in (0, 1) (got {})",
                self.search_decay
            )));
        }
        if self.em_iters == 0 || self.nnf_iters == 0 {
            return Err(Error::InvalidParam("em_iters and nnf_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn min_side(&self) -> u32 {
        self.min_pyramid_side.unwrap_or(2 * self.patch_size)
    }

    fn radius(&self) -> u32 {
        self.patch_size / 2
    }

    /// Voting bandwidth: `exp(-d / 2σ²)` with `σ = 0.5 · patch_size · 255`.
    fn vote_sigma(&self) -> f64 {
        0.5 * self.patch_size as f64 * 255.0
    }
}

/// Search statistics of one pyramid level.
#[derive(Debug, Clone)]
pub struct LevelTrace {
    pub dims: (u32, u32),
    /// Per EM round: mean NNF distance after init and after each sweep.
    pub sweep_means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PatchMatchOutput {
    pub image: RgbImage,
    /// Finest-level field with distances measured on the returned image.
    pub nnf: NNField,
    /// Coarsest level first.
    pub levels: Vec<LevelTrace>,
}

struct Level {
    image: Planar,
    hole: BinaryMask,
}

/// Mask-aware 2x reduction. A coarse pixel is known only when every fine pixel
/// of its 2x2 block is known; its value is the binomial-weighted mean of the
/// known fine pixels around it.
fn reduce(level: &Level) -> Level {
    const TAPS: [f32; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    let (w, h) = (level.image.width, level.image.height);
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let mut image = Planar::new(cw, ch);
    let hole = BinaryMask::from_fn(cw, ch, |cx, cy| {
        (0..2).any(|dy| {
            (0..2).any(|dx| {
                let (x, y) = (2 * cx + dx, 2 * cy + dy);
                x < w && y < h && level.hole.get(x, y)
            })
        })
    });
    for cy in 0..ch {
        for cx in 0..cw {
            let mut acc = [0.0f32; 3];
            let mut wsum = 0.0f32;
            for (j, wy) in TAPS.iter().enumerate() {
                let y = (2 * cy) as i64 + j as i64 - 2;
                if y < 0 || y >= h as i64 {
                    continue;
                }
                for (i, wx) in TAPS.iter().enumerate() {
                    let x = (2 * cx) as i64 + i as i64 - 2;
                    if x < 0 || x >= w as i64 || level.hole.get(x as u32, y as u32) {
                        continue;
                    }
                    let v = level.image.at(x as u32, y as u32);
                    let wgt = wx * wy;
                    for k in 0..3 {
                        acc[k] += wgt * v[k];
                    }
                    wsum += wgt;
                }
            }
            if wsum > 0.0 {
                image.set(cx, cy, acc.map(|a| a / wsum));
            }
        }
    }
    Level { image, hole }
}

fn build_pyramid(image: &RgbImage, hole: &BinaryMask, params: &PatchMatchParams) -> Vec<Level> {
    let mut levels = vec![Level {
        image: Planar::from_rgb(image),
        hole: hole.clone(),
    }];
    let min_side = params.min_side().max(params.patch_size);
    loop {
        let last = levels.last().expect("pyramid has a base level");
        let (w, h) = (last.image.width, last.image.height);
        if w.div_ceil(2).min(h.div_ceil(2)) < min_side {
            break;
        }
        let next = reduce(last);
        if SourceSet::new(&next.hole.not(), params.radius()).is_empty() {
            break;
        }
        levels.push(next);
    }
    levels
}

/// Patch centers whose patch overlaps the hole.
fn target_mask(hole: &BinaryMask, radius: u32) -> BinaryMask {
    let (w, h) = hole.dims();
    let mut out = BinaryMask::new(w, h);
    let r = radius as i64;
    for (x, y) in hole.iter_set() {
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
    }
    out
}

/// Recolor hole pixels as the weighted mean of every matched patch covering them.
fn vote(img: &mut Planar, hole: &BinaryMask, nnf: &NNField, params: &PatchMatchParams) {
    let (w, h) = (img.width as i64, img.height as i64);
    let r = params.radius() as i64;
    let two_sigma_sq = 2.0 * params.vote_sigma().powi(2);
    let weights: Vec<f64> = (0..(w * h) as usize)
        .map(|i| {
            nnf.get((i as i64 % w) as u32, (i as i64 / w) as u32)
                .map_or(0.0, |e| (-(e.distance as f64) / two_sigma_sq).exp())
        })
        .collect();

    let mut updates = Vec::with_capacity(hole.count());
    for (qx, qy) in hole.iter_set() {
        let (qx, qy) = (qx as i64, qy as i64);
        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0f64;
        for py in (qy - r).max(0)..=(qy + r).min(h - 1) {
            for px in (qx - r).max(0)..=(qx + r).min(w - 1) {
                let Some(e) = nnf.get(px as u32, py as u32) else {
                    continue;
                };
                let wgt = weights[(py * w + px) as usize];
                let v = img.at((qx + e.dx as i64) as u32, (qy + e.dy as i64) as u32);
                for k in 0..3 {
                    acc[k] += wgt * v[k] as f64;
                }
                wsum += wgt;
            }
        }
        if wsum > 0.0 {
            updates.push((qx as u32, qy as u32, acc.map(|a| (a / wsum) as f32)));
        }
    }
    for (x, y, v) in updates {
        img.set(x, y, v);
    }
}

fn upsample_into(fine: &mut Level, coarse: &Planar) {
    let sx = coarse.width as f32 / fine.image.width as f32;
    let sy = coarse.height as f32 / fine.image.height as f32;
    for (x, y) in fine.hole.iter_set() {
        let v = coarse.sample((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5);
        fine.image.set(x, y, v);
    }
}

pub fn patchmatch_inpaint(request: &InpaintRequest, params: &PatchMatchParams) -> Result<RgbImage> {
    Ok(patchmatch_inpaint_detailed(request, params)?.image)
}

/// [`patchmatch_inpaint`] returning the final NNF and per-level search traces.
pub fn patchmatch_inpaint_detailed(request: &InpaintRequest, params: &PatchMatchParams) -> Result<PatchMatchOutput> {
    params.validate()?;
    let radius = params.radius();
    let hole = request.mask();
    let base_sources = SourceSet::new(&hole.not(), radius);
    if base_sources.is_empty() {
        return Err(Error::NoValidPatch(format!(
            "the known region holds no complete {0}x{0} patch",
            params.patch_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut levels = build_pyramid(request.image(), hole, params);
    let mut traces = Vec::with_capacity(levels.len());
    let mut prev_nnf: Option<NNField> = None;
    let mut prev_image: Option<Planar> = None;

    while let Some(mut level) = levels.pop() {
        let targets = target_mask(&level.hole, radius);
        match &prev_image {
            None => onion_peel(&mut level.image, &level.hole),
            Some(coarse) => upsample_into(&mut level, coarse),
        }
        let sources = SourceSet::new(&level.hole.not(), radius);
        let mut nnf = prev_nnf.take().map(|f| f.upsample(targets.clone()));
        if let Some(init) = &nnf {
            // Rebuild the hole from full-resolution source patches so texture
            // detail the coarse level could not hold is present before the search.
            let copy_only = PatchMatchParams {
                nnf_iters: 0,
                ..params.clone()
            };
            let seeded = search(&level.image, &sources, &targets, &copy_only, Some(init), &mut rng)?;
            vote(&mut level.image, &level.hole, &seeded.field, params);
            nnf = Some(seeded.field);
        }
        let mut trace = LevelTrace {
            dims: (level.image.width, level.image.height),
            sweep_means: Vec::new(),
        };
        for _ in 0..params.em_iters {
            let found = search(&level.image, &sources, &targets, params, nnf.as_ref(), &mut rng)?;
            vote(&mut level.image, &level.hole, &found.field, params);
            trace.sweep_means.push(found.sweep_means);
            nnf = Some(found.field);
        }
        traces.push(trace);
        prev_nnf = nnf;
        if levels.is_empty() {
            let image = level.image.to_rgb();
            // re-measure the final field on the quantized output
            let quantized = Planar::from_rgb(&image);
            let mut field = prev_nnf.expect("at least one EM round ran");
            field.remeasure(&quantized, radius as i32);
            return Ok(PatchMatchOutput {
                image,
                nnf: field,
                levels: traces,
            });
        }
        prev_image = Some(level.image);
    }
    unreachable!("pyramid always has a base level")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn params_validation() {
        assert!(PatchMatchParams::default().validate().is_ok());
        for bad in [
            PatchMatchParams { patch_size: 4, ..Default::default() },
            PatchMatchParams { patch_size: 1, ..Default::default() },
            PatchMatchParams { search_decay: 1.0, ..Default::default() },
            PatchMatchParams { em_iters: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(PatchMatchParams::default().min_side(), 14);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RgbImage::from_pixel(64, 64, Rgb([90, 140, 30]));
        let mask = BinaryMask::from_fn(64, 64, |x, y| (20..44).contains(&x) && (10..30).contains(&y));
        let req = InpaintRequest::new(img.clone(), mask).unwrap();
        let out = patchmatch_inpaint(&req, &PatchMatchParams::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn pyramid_reduces_to_min_side() {
        let img = RgbImage::from_pixel(100, 60, Rgb([1, 2, 3]));
        let hole = BinaryMask::from_fn(100, 60, |x, y| (40..50).contains(&x) && (20..30).contains(&y));
        let levels = build_pyramid(&img, &hole, &PatchMatchParams::default());
        let dims: Vec<_> = levels.iter().map(|l| (l.image.width, l.image.height)).collect();
        assert_eq!(dims, vec![(100, 60), (50, 30), (25, 15)]);
        // hole grows conservatively: the coarse hole covers every block it touches
        assert_eq!(levels[1].hole.count(), 25);
    }

    #[test]
    fn targets_cover_patches_touching_hole() {
        let hole = BinaryMask::from_fn(10, 10, |x, y| (x, y) == (5, 5));
        assert_eq!(target_mask(&hole, 1).count(), 9);
        assert_eq!(target_mask(&hole, 3).count(), 49);
    }
}
