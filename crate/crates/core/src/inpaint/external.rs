//! Inpainting by an out-of-process model.
//!
//! Command adapters get `{input}`, `{mask}` and `{output}` paths (PNG; mask is
//! 8-bit gray with 255 = hole). HTTP adapters receive a multipart POST with
//! `image` and `mask` parts and must answer with a PNG body.

use image::RgbImage;

use super::InpaintRequest;
use crate::adapter::{post_multipart, run_command, AdapterConfig, AdapterKind};
use crate::error::{Error, Result};
use crate::raster::{check_dims, encode_png_luma, encode_png_rgb, paste_masked};

pub fn external_inpaint(request: &InpaintRequest, adapter: &AdapterConfig) -> Result<RgbImage> {
    let fail = |cause: String| Error::Backend {
        backend: format!("external ({})", adapter.describe()),
        cause,
    };
    adapter.validate().map_err(Error::InvalidParam)?;

    let decoded = match adapter.kind {
        AdapterKind::Command => {
            let dir = tempfile::tempdir().map_err(|e| fail(format!("tempdir: {e}")))?;
            let input = dir.path().join("input.png");
            let mask = dir.path().join("mask.png");
            let output = dir.path().join("output.png");
            std::fs::write(&input, encode_png_rgb(request.image())).map_err(|e| fail(e.to_string()))?;
            std::fs::write(&mask, encode_png_luma(&request.mask().to_luma())).map_err(|e| fail(e.to_string()))?;
            run_command(adapter, &[("input", &input), ("mask", &mask), ("output", &output)]).map_err(fail)?;
            let bytes = std::fs::read(&output).map_err(|e| fail(format!("no output image at {}: {e}", output.display())))?;
            decode(&bytes).map_err(fail)?
        }
        AdapterKind::Http => {
            let parts = vec![
                ("image", encode_png_rgb(request.image())),
                ("mask", encode_png_luma(&request.mask().to_luma())),
            ];
            let body = post_multipart(adapter, parts).map_err(fail)?;
            decode(&body).map_err(fail)?
        }
    };
    check_dims("external backend output", request.image().dimensions(), decoded.dimensions())?;
    let mut out = request.image().clone();
    paste_masked(&mut out, &decoded, request.mask());
    Ok(out)
}

fn decode(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| format!("output is not a readable image: {e}"))
}
