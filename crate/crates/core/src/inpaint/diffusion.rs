//! Harmonic (membrane) fill by Jacobi iteration.
//!
//! Jacobi sweeps converge slowly on large holes, so the sweep stopping rule
//! alone would leave visible error. Each level is therefore seeded with the
//! upsampled solution of a half-resolution copy of the same problem.

use image::RgbImage;

use super::InpaintRequest;
use crate::raster::BinaryMask;

/// Stop once no hole pixel moves by this much in one sweep.
const CONVERGED_CHANGE: f64 = 0.5;

/// Below this side length the problem is solved directly from a flat seed.
const MIN_LEVEL_SIDE: u32 = 8;

pub fn diffusion_fill(request: &InpaintRequest) -> RgbImage {
    let img = request.image();
    let (w, h) = img.dimensions();
    let values: Vec<[f64; 3]> = img
        .pixels()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let solved = solve(&values, w, h, request.mask());
    let mut out = img.clone();
    for (x, y) in request.mask().iter_set() {
        let v = solved[(y * w + x) as usize];
        out.put_pixel(x, y, image::Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8)));
    }
    out
}

fn solve(values: &[[f64; 3]], w: u32, h: u32, hole: &BinaryMask) -> Vec<[f64; 3]> {
    let mut seed = values.to_vec();
    if hole.is_empty() {
        return seed;
    }
    if w.min(h) >= MIN_LEVEL_SIDE {
        let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
        let mut coarse = vec![[0.0; 3]; (cw * ch) as usize];
        let mut coarse_hole = BinaryMask::new(cw, ch);
        for cy in 0..ch {
            for cx in 0..cw {
                let mut sum = [0.0; 3];
                let mut n = 0;
                for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)].map(|(dx, dy)| (2 * cx + dx, 2 * cy + dy)) {
                    if x < w && y < h && !hole.get(x, y) {
                        let v = values[(y * w + x) as usize];
                        for k in 0..3 {
                            sum[k] += v[k];
                        }
                        n += 1;
                    }
                }
                if n == 0 {
                    coarse_hole.set(cx, cy, true);
                } else {
                    coarse[(cy * cw + cx) as usize] = sum.map(|s| s / n as f64);
                }
            }
        }
        let coarse = solve(&coarse, cw, ch, &coarse_hole);
        for (x, y) in hole.iter_set() {
            seed[(y * w + x) as usize] = coarse[((y / 2) * cw + x / 2) as usize];
        }
    } else {
        let mut sum = [0.0; 3];
        let mut n = 0;
        for (i, v) in values.iter().enumerate() {
            if !hole.bits()[i] {
                for k in 0..3 {
                    sum[k] += v[k];
                }
                n += 1;
            }
        }
        let mean = sum.map(|s| s / n.max(1) as f64);
        for (x, y) in hole.iter_set() {
            seed[(y * w + x) as usize] = mean;
        }
    }
    jacobi(seed, w, h, hole)
}

fn jacobi(mut cur: Vec<[f64; 3]>, w: u32, h: u32, hole: &BinaryMask) -> Vec<[f64; 3]> {
    let pixels: Vec<(u32, u32)> = hole.iter_set().collect();
    let max_sweeps = 10 * w.max(h) as usize;
    let mut next = vec![[0.0; 3]; pixels.len()];
    for _ in 0..max_sweeps {
        for (slot, &(x, y)) in next.iter_mut().zip(&pixels) {
            let mut sum = [0.0; 3];
            let mut n = 0;
            for (nx, ny) in [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)] {
                if nx < w && ny < h {
                    let v = cur[(ny * w + nx) as usize];
                    for k in 0..3 {
                        sum[k] += v[k];
                    }
                    n += 1;
                }
            }
            *slot = sum.map(|s| s / n as f64);
        }
        let mut change = 0.0f64;
        for (v, &(x, y)) in next.iter().zip(&pixels) {
            let old = &mut cur[(y * w + x) as usize];
            for k in 0..3 {
                change = change.max((v[k] - old[k]).abs());
            }
            *old = *v;
        }
        if change < CONVERGED_CHANGE {
            break;
        }
    }
    cur
}
