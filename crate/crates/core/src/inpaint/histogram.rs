//! Per-channel histogram specification of filled pixels against known ones.
//!
//! Matching is done by rank: target pixels are ordered by intensity and each
//! takes the reference intensity at the same quantile. Unlike a CDF lookup
//! this can split a single input level (e.g. a flat gray fill) across several
//! output levels. Ties are ordered by a fixed per-pixel hash so that the split
//! carries no spatial structure.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::raster::{check_dims, BinaryMask};

fn tie_key(index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = (index as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn histogram_match(
    image: &RgbImage,
    target_mask: &BinaryMask,
    reference_mask: &BinaryMask,
) -> Result<RgbImage> {
    check_dims("histogram target mask", image.dimensions(), target_mask.dims())?;
    check_dims("histogram reference mask", image.dimensions(), reference_mask.dims())?;
    if reference_mask.is_empty() {
        return Err(Error::InvalidParam("histogram reference mask is empty".into()));
    }
    let mut out = image.clone();
    if target_mask.is_empty() {
        return Ok(out);
    }

    let w = image.width() as usize;
    let targets: Vec<usize> = target_mask
        .iter_set()
        .map(|(x, y)| y as usize * w + x as usize)
        .collect();
    let references: Vec<usize> = reference_mask
        .iter_set()
        .map(|(x, y)| y as usize * w + x as usize)
        .collect();
    let raw = image.as_raw();
    let out_raw: &mut [u8] = &mut out;

    for c in 0..3 {
        let mut reference: Vec<u8> = references.iter().map(|&i| raw[i * 3 + c]).collect();
        reference.sort_unstable();
        let mut order: Vec<(u8, u64, usize)> = targets
            .iter()
            .map(|&i| (raw[i * 3 + c], tie_key(i), i))
            .collect();
        order.sort_unstable();
        let (nt, nr) = (order.len(), reference.len());
        for (rank, &(_, _, i)) in order.iter().enumerate() {
            let q = (((rank as f64 + 0.5) * nr as f64 / nt as f64) as usize).min(nr - 1);
            out_raw[i * 3 + c] = reference[q];
        }
    }
    Ok(out)
}
