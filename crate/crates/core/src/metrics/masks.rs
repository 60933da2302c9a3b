//! Virtual-furniture test masks: placed silhouettes or random blob unions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MaskSource {
    /// Silhouettes cycled in order, each scaled by a factor drawn from
    /// `[scale_min, scale_max]` and placed uniformly inside the frame.
    Silhouettes {
        #[serde(skip)]
        shapes: Vec<BinaryMask>,
        count: usize,
        scale_min: f64,
        scale_max: f64,
    },
    /// Unions of 3 to 8 overlapping ellipses.
    Generator { count: usize, coverage_min: f64, coverage_max: f64 },
}

/// Largest number of blob configurations tried for one mask.
const MAX_ATTEMPTS: usize = 64;

pub fn synthesize_test_masks(dims: (u32, u32), source: &MaskSource, seed: u64) -> Result<Vec<BinaryMask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match source {
        MaskSource::Silhouettes {
            shapes,
            count,
            scale_min,
            scale_max,
        } => {
            if shapes.is_empty() {
                return Err(Error::InvalidParam("no silhouettes given".into()));
            }
            if !(*scale_min > 0.0 && scale_min <= scale_max) {
                return Err(Error::InvalidParam(format!("bad scale range [{scale_min}, {scale_max}]")));
            }
            (0..*count)
                .map(|i| place_silhouette(&shapes[i % shapes.len()], dims, *scale_min, *scale_max, &mut rng))
                .collect()
        }
        MaskSource::Generator {
            count,
            coverage_min,
            coverage_max,
        } => {
            if !(*coverage_min > 0.0 && coverage_min <= coverage_max && *coverage_max < 0.9) {
                return Err(Error::InvalidParam(format!(
                    "coverage range [{coverage_min}, {coverage_max}] must lie within (0, 0.9)"
                )));
            }
            (0..*count)
                .map(|_| blob_mask(dims, *coverage_min, *coverage_max, &mut rng))
                .collect()
        }
    }
}

fn place_silhouette(shape: &BinaryMask, dims: (u32, u32), lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<BinaryMask> {
    let (fw, fh) = dims;
    let (sw, sh) = shape.dims();
    let fits = |s: f64| (sw as f64 * s).round() as u32 <= fw && (sh as f64 * s).round() as u32 <= fh;
    if !fits(lo) {
        return Err(Error::InvalidParam(format!(
            "{sw}x{sh} silhouette does not fit a {fw}x{fh} frame at scale {lo}"
        )));
    }
    let max_fit = (fw as f64 / sw as f64).min(fh as f64 / sh as f64);
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi.min(max_fit).max(lo)) };
    let scale = if fits(scale) { scale } else { lo };
    let (tw, th) = (
        ((sw as f64 * scale).round() as u32).max(1),
        ((sh as f64 * scale).round() as u32).max(1),
    );
    let ox = rng.random_range(0..=fw - tw);
    let oy = rng.random_range(0..=fh - th);
    Ok(BinaryMask::from_fn(fw, fh, |x, y| {
        if x < ox || y < oy || x >= ox + tw || y >= oy + th {
            return false;
        }
        // nearest-neighbour resample at pixel centers
        let sx = (((x - ox) as f64 + 0.5) * sw as f64 / tw as f64) as u32;
        let sy = (((y - oy) as f64 + 0.5) * sh as f64 / th as f64) as u32;
        shape.get(sx.min(sw - 1), sy.min(sh - 1))
    }))
}

struct Ellipse {
    dx: f64,
    dy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

/// Each ellipse contains the blob center, so the union is star-shaped about it
/// and its area grows monotonically with a common scale factor.
fn blob_mask(dims: (u32, u32), lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<BinaryMask> {
    let (w, h) = dims;
    let side = w.min(h) as f64;
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.random_range(3..=8);
        let ellipses: Vec<Ellipse> = (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(0.15..0.4);
                let b: f64 = rng.random_range(0.1..0.3);
                let reach = rng.random_range(0.0..0.8) * a.min(b);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                Ellipse {
                    dx: reach * dir.cos(),
                    dy: reach * dir.sin(),
                    a,
                    b,
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                }
            })
            .collect();
        let cx = rng.random_range(0.3..0.7) * w as f64;
        let cy = rng.random_range(0.3..0.7) * h as f64;
        let target = rng.random_range(lo..=hi);
        let render = |s: f64| {
            BinaryMask::from_fn(w, h, |x, y| {
                let (px, py) = ((x as f64 - cx) / (s * side), (y as f64 - cy) / (s * side));
                ellipses.iter().any(|e| {
                    let (qx, qy) = (px - e.dx, py - e.dy);
                    let (c, sn) = (e.angle.cos(), e.angle.sin());
                    let (u, v) = (c * qx + sn * qy, -sn * qx + c * qy);
                    (u / e.a).powi(2) + (v / e.b).powi(2) <= 1.0
                })
            })
        };
        let (mut s_lo, mut s_hi) = (1e-3, 8.0);
        for _ in 0..40 {
            let mid = 0.5 * (s_lo + s_hi);
            let m = render(mid);
            let cov = m.coverage();
            if (lo..=hi).contains(&cov) {
                return Ok(m);
            }
            if cov < target {
                s_lo = mid;
            } else {
                s_hi = mid;
            }
        }
        let m = render(0.5 * (s_lo + s_hi));
        if (lo..=hi).contains(&m.coverage()) {
            return Ok(m);
        }
    }
    Err(Error::InvalidParam(format!(
        "coverage range [{lo}, {hi}] is unattainable on a {w}x{h} frame"
    )))
}
