//! Nearest-neighbor field search (PatchMatch).
//!
//! Every target pixel maps to the center of a source patch that lies fully
//! inside the image and fully inside the known region. Target patches may
//! hang over the image border; their out-of-bounds pixels are skipped when
//! measuring distance, which is the same set for every candidate.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::patchmatch::PatchMatchParams;
use super::planar::Planar;
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Draws per random-search radius before giving up on finding a valid center.
const RANDOM_SEARCH_TRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnfEntry {
    pub dx: i32,
    pub dy: i32,
    /// Sum of squared RGB differences over the patch.
    pub distance: f32,
}

#[derive(Debug, Clone)]
pub struct NNField {
    width: u32,
    height: u32,
    targets: BinaryMask,
    offsets: Vec<(i32, i32)>,
    distances: Vec<f32>,
}

impl NNField {
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn targets(&self) -> &BinaryMask {
        &self.targets
    }

    pub fn get(&self, x: u32, y: u32) -> Option<NnfEntry> {
        if x >= self.width || y >= self.height || !self.targets.get(x, y) {
            return None;
        }
        let i = (y * self.width + x) as usize;
        let (dx, dy) = self.offsets[i];
        Some(NnfEntry {
            dx,
            dy,
            distance: self.distances[i],
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = ((u32, u32), NnfEntry)> + '_ {
        self.targets
            .iter_set()
            .map(move |(x, y)| ((x, y), self.get(x, y).expect("target has an entry")))
    }

    pub fn mean_distance(&self) -> f64 {
        mean_over(&self.targets, &self.distances)
    }

    pub fn max_distance(&self) -> f32 {
        self.entries().map(|(_, e)| e.distance).fold(0.0, f32::max)
    }

    /// Build a field from explicit offsets; distances are filled in by the
    /// next search. Intended for seeding [`nnf_search`].
    pub fn from_offsets(targets: BinaryMask, mut offset: impl FnMut(u32, u32) -> (i32, i32)) -> Self {
        let (width, height) = targets.dims();
        let mut offsets = vec![(0, 0); (width * height) as usize];
        for (x, y) in targets.iter_set() {
            offsets[(y * width + x) as usize] = offset(x, y);
        }
        Self {
            width,
            height,
            distances: vec![0.0; offsets.len()],
            targets,
            offsets,
        }
    }

    /// Recompute every target distance against `img`.
    pub(crate) fn remeasure(&mut self, img: &Planar, radius: i32) {
        let w = self.width;
        for (i, &is_target) in self.targets.bits().iter().enumerate() {
            if is_target {
                let (x, y) = ((i as u32 % w) as i32, (i as u32 / w) as i32);
                let (dx, dy) = self.offsets[i];
                self.distances[i] = patch_distance(img, radius, x, y, x + dx, y + dy, f32::INFINITY);
            }
        }
    }

    /// Nearest-neighbor upsampling to a level twice as large, doubling offsets.
    pub(crate) fn upsample(&self, targets: BinaryMask) -> Self {
        let (cw, ch) = self.dims();
        Self::from_offsets(targets, |x, y| {
            let (qx, qy) = ((x / 2).min(cw - 1), (y / 2).min(ch - 1));
            let (dx, dy) = self.offsets[(qy * cw + qx) as usize];
            (dx * 2, dy * 2)
        })
    }
}

fn mean_over(mask: &BinaryMask, values: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, &b) in mask.bits().iter().enumerate() {
        if b {
            sum += values[i] as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct NnfSearch {
    pub field: NNField,
    /// Mean target distance after initialization, then after every sweep.
    pub sweep_means: Vec<f64>,
}

/// Centers whose full patch is in bounds and entirely known.
#[derive(Debug, Clone)]
pub(crate) struct SourceSet {
    width: u32,
    valid: Vec<bool>,
    list: Vec<(i32, i32)>,
}

impl SourceSet {
    pub(crate) fn new(known: &BinaryMask, radius: u32) -> Self {
        let (w, h) = known.dims();
        let (wu, hu) = (w as usize, h as usize);
        // integral image of unknown pixels
        let mut integral = vec![0u32; (wu + 1) * (hu + 1)];
        for y in 0..hu {
            let mut row = 0u32;
            for x in 0..wu {
                row += u32::from(!known.get(x as u32, y as u32));
                integral[(y + 1) * (wu + 1) + x + 1] = integral[y * (wu + 1) + x + 1] + row;
            }
        }
        let r = radius as usize;
        let mut valid = vec![false; wu * hu];
        let mut list = Vec::new();
        if wu > 2 * r && hu > 2 * r {
            for y in r..hu - r {
                for x in r..wu - r {
                    let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
                    let unknown = integral[y1 * (wu + 1) + x1] + integral[y0 * (wu + 1) + x0]
                        - integral[y0 * (wu + 1) + x1]
                        - integral[y1 * (wu + 1) + x0];
                    if unknown == 0 {
                        valid[y * wu + x] = true;
                        list.push((x as i32, y as i32));
                    }
                }
            }
        }
        Self { width: w, valid, list }
    }

    #[inline]
    pub(crate) fn contains(&self, x: i32, y: i32) -> bool {
        x >= 0
            && y >= 0
            && (x as u32) < self.width
            && self.valid.get((y as usize) * self.width as usize + x as usize) == Some(&true)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> (i32, i32) {
        self.list[rng.random_range(0..self.list.len())]
    }
}

/// Patch SSD between the target patch at `(tx, ty)` and the source patch at
/// `(sx, sy)`, abandoning the sum once it reaches `bound`.
#[inline]
pub(crate) fn patch_distance(img: &Planar, radius: i32, tx: i32, ty: i32, sx: i32, sy: i32, bound: f32) -> f32 {
    let (w, h) = (img.width as i32, img.height as i32);
    let dy0 = (-radius).max(-ty);
    let dy1 = radius.min(h - 1 - ty);
    let dx0 = (-radius).max(-tx);
    let dx1 = radius.min(w - 1 - tx);
    let data = &img.data;
    let mut sum = 0.0f32;
    for dy in dy0..=dy1 {
        let trow = ((ty + dy) * w + tx) as isize;
        let srow = ((sy + dy) * w + sx) as isize;
        for dx in dx0..=dx1 {
            let a = &data[(trow + dx as isize) as usize];
            let b = &data[(srow + dx as isize) as usize];
            let (d0, d1, d2) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
            sum += d0 * d0 + d1 * d1 + d2 * d2;
        }
        if sum >= bound {
            return sum;
        }
    }
    sum
}

/// Search an NNF for every target pixel over the image's known patches.
///
/// The generator is seeded from `params.seed`.
pub fn nnf_search(
    image: &RgbImage,
    known: &BinaryMask,
    targets: &BinaryMask,
    params: &PatchMatchParams,
    init: Option<&NNField>,
) -> Result<NnfSearch> {
    params.validate()?;
    let planar = Planar::from_rgb(image);
    if known.dims() != image.dimensions() || targets.dims() != image.dimensions() {
        return Err(Error::InvalidParam("nnf_search masks must match the image".into()));
    }
    let sources = SourceSet::new(known, params.patch_size / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    search(&planar, &sources, targets, params, init, &mut rng)
}

pub(crate) fn search(
    img: &Planar,
    sources: &SourceSet,
    targets: &BinaryMask,
    params: &PatchMatchParams,
    init: Option<&NNField>,
    rng: &mut ChaCha8Rng,
) -> Result<NnfSearch> {
    if sources.is_empty() {
        return Err(Error::NoValidPatch(format!(
            "no fully known {0}x{0} patch in a {1}x{2} image",
            params.patch_size, img.width, img.height
        )));
    }
    let (w, h) = (img.width, img.height);
    let radius = (params.patch_size / 2) as i32;
    let n = (w * h) as usize;
    let mut offsets = vec![(0i32, 0i32); n];
    let mut distances = vec![0f32; n];

    let order: Vec<(i32, i32)> = targets.iter_set().map(|(x, y)| (x as i32, y as i32)).collect();
    let seeded = init.filter(|f| f.dims() == (w, h));
    for &(x, y) in &order {
        let i = (y as u32 * w + x as u32) as usize;
        let candidate = seeded
            .and_then(|f| f.get(x as u32, y as u32))
            .map(|e| (x + e.dx, y + e.dy))
            .filter(|&(sx, sy)| sources.contains(sx, sy));
        let (sx, sy) = candidate.unwrap_or_else(|| sources.random(rng));
        offsets[i] = (sx - x, sy - y);
        distances[i] = patch_distance(img, radius, x, y, sx, sy, f32::INFINITY);
    }

    let mut sweep_means = vec![mean_over(targets, &distances)];
    let max_radius = w.max(h) as f64;
    for sweep in 0..params.nnf_iters {
        let forward = sweep % 2 == 0;
        let step: i32 = if forward { -1 } else { 1 };
        for k in 0..order.len() {
            let (x, y) = if forward { order[k] } else { order[order.len() - 1 - k] };
            let i = (y as u32 * w + x as u32) as usize;
            let (mut bx, mut by) = (x + offsets[i].0, y + offsets[i].1);
            let mut best = distances[i];

            // propagation from the already-visited neighbors
            for (nx, ny) in [(x + step, y), (x, y + step)] {
                if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                    continue;
                }
                if !targets.get(nx as u32, ny as u32) {
                    continue;
                }
                let (odx, ody) = offsets[(ny as u32 * w + nx as u32) as usize];
                let (sx, sy) = (x + odx, y + ody);
                if (sx, sy) == (bx, by) || !sources.contains(sx, sy) {
                    continue;
                }
                let d = patch_distance(img, radius, x, y, sx, sy, best);
                if d < best {
                    best = d;
                    (bx, by) = (sx, sy);
                }
            }

            // random search around the current best, shrinking geometrically
            let mut r = max_radius;
            while r >= 1.0 {
                let ri = r as i32;
                let (x0, x1) = ((bx - ri).max(0), (bx + ri).min(w as i32 - 1));
                let (y0, y1) = ((by - ri).max(0), (by + ri).min(h as i32 - 1));
                // redraw invalid centers a few times; holes can leave few sources
                for _ in 0..RANDOM_SEARCH_TRIES {
                    let (sx, sy) = (rng.random_range(x0..=x1), rng.random_range(y0..=y1));
                    if !sources.contains(sx, sy) {
                        continue;
                    }
                    if (sx, sy) != (bx, by) {
                        let d = patch_distance(img, radius, x, y, sx, sy, best);
                        if d < best {
                            best = d;
                            (bx, by) = (sx, sy);
                        }
                    }
                    break;
                }
                r *= params.search_decay;
            }

            offsets[i] = (bx - x, by - y);
            distances[i] = best;
        }
        sweep_means.push(mean_over(targets, &distances));
    }

    Ok(NnfSearch {
        field: NNField {
            width: w,
            height: h,
            targets: targets.clone(),
            offsets,
            distances,
        },
        sweep_means,
    })
}
