//! Evaluation metrics: edge maps, incoherence, PSNR, and an LPIPS adapter.

mod evaluate;
mod masks;

pub use evaluate::{evaluate, EvalFailure, EvalOptions, EvalRecord, EvalReport, MethodKind, MethodSpec, MethodSummary, PsnrRegion};
pub use masks::{synthesize_test_masks, MaskSource};

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::adapter::{post_multipart, run_command, AdapterConfig, AdapterKind};
use crate::error::{Error, Result};
use crate::raster::{check_dims, encode_png_rgb, BinaryMask};

/// Per-pixel edge probability in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl EdgeMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != (width * height) as usize {
            return Err(Error::Metric(format!(
                "edge map has {} values for {width}x{height}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Metric(format!("edge value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Load an 8-bit grayscale PNG scaled to [0, 1].
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.pixels().map(|p| p[0] as f64 / 255.0).collect())
    }
}

/// Largest possible Sobel magnitude on 8-bit input.
const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2 * 255.0;

/// Normalized 3x3 Sobel gradient magnitude of the BT.601 luma.
pub fn sobel_edges(image: &RgbImage) -> EdgeMap {
    let (w, h) = image.dimensions();
    let gray: Vec<f64> = image
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let at = |x: i64, y: i64| {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        gray[(y * w + x) as usize]
    };
    let mut values = Vec::with_capacity(gray.len());
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            values.push((gx.hypot(gy) / SOBEL_MAX).clamp(0.0, 1.0));
        }
    }
    EdgeMap {
        width: w,
        height: h,
        values,
    }
}

/// Separable Gaussian blur, kernel radius ceil(3 sigma), replicated borders.
pub fn gaussian_blur(map: &EdgeMap, sigma: f64) -> EdgeMap {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (map.width as i64, map.height as i64);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, i) in kernel.iter().zip(-radius..=radius) {
                    let (sx, sy) = if horizontal {
                        ((x + i).clamp(0, w - 1), y)
                    } else {
                        (x, (y + i).clamp(0, h - 1))
                    };
                    acc += k * src[(sy * w + sx) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let values = pass(&pass(&map.values, true), false);
    EdgeMap {
        width: map.width,
        height: map.height,
        values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeDetector {
    #[default]
    Sobel,
    /// Precomputed edge maps (e.g. from HED) for the ground truth and prediction.
    ExternalFile { gt: PathBuf, pred: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncoherenceParams {
    pub gt_enhance_threshold: f64,
    pub residual_threshold: f64,
    pub blur_sigma: f64,
    pub edge_detector: EdgeDetector,
}

impl Default for IncoherenceParams {
    fn default() -> Self {
        Self {
            gt_enhance_threshold: 0.1,
            residual_threshold: 0.01,
            blur_sigma: 2.0,
            edge_detector: EdgeDetector::Sobel,
        }
    }
}

impl IncoherenceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gt_enhance_threshold > 0.0
            && self.gt_enhance_threshold < 1.0
            && (0.0..1.0).contains(&self.residual_threshold)
            && self.blur_sigma > 0.0
            && self.blur_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid incoherence parameters: {self:?}")))
        }
    }
}

/// Mean false-edge strength of `image_pred` over the mask.
pub fn incoherence(
    image_gt: &RgbImage,
    image_pred: &RgbImage,
    inpaint_mask: &BinaryMask,
    params: &IncoherenceParams,
) -> Result<f64> {
    check_dims("predicted image", image_gt.dimensions(), image_pred.dimensions())?;
    let (edge_gt, edge_pred) = match &params.edge_detector {
        EdgeDetector::Sobel => (sobel_edges(image_gt), sobel_edges(image_pred)),
        EdgeDetector::ExternalFile { gt, pred } => (EdgeMap::load_png(gt)?, EdgeMap::load_png(pred)?),
    };
    check_dims("ground-truth edge map", image_gt.dimensions(), edge_gt.dims())?;
    incoherence_from_edges(&edge_gt, &edge_pred, inpaint_mask, params)
}

/// Incoherence from precomputed edge maps; `edge_gt` is blurred here.
pub fn incoherence_from_edges(
    edge_gt: &EdgeMap,
    edge_pred: &EdgeMap,
    inpaint_mask: &BinaryMask,
    params: &IncoherenceParams,
) -> Result<f64> {
    params.validate()?;
    check_dims("predicted edge map", edge_gt.dims(), edge_pred.dims())?;
    check_dims("incoherence mask", edge_gt.dims(), inpaint_mask.dims())?;
    if inpaint_mask.is_empty() {
        return Err(Error::Metric("incoherence mask is empty".into()));
    }
    let blurred = gaussian_blur(edge_gt, params.blur_sigma);
    let w = edge_gt.width;
    let mut sum = 0.0;
    for (x, y) in inpaint_mask.iter_set() {
        let i = (y * w + x) as usize;
        let mut g = blurred.values[i];
        if g > params.gt_enhance_threshold {
            g = 1.0;
        }
        let mut d = edge_pred.values[i] - g;
        if d <= params.residual_threshold {
            d = 0.0;
        }
        sum += d;
    }
    Ok(sum / inpaint_mask.count() as f64)
}

/// Peak signal-to-noise ratio in dB over `region` (whole image when `None`).
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(image_gt: &RgbImage, image_pred: &RgbImage, region: Option<&BinaryMask>) -> Result<f64> {
    check_dims("predicted image", image_gt.dimensions(), image_pred.dimensions())?;
    let (w, h) = image_gt.dimensions();
    let full;
    let region = match region {
        Some(r) => {
            check_dims("psnr region", (w, h), r.dims())?;
            r
        }
        None => {
            full = BinaryMask::full(w, h);
            &full
        }
    };
    if region.is_empty() {
        return Err(Error::Metric("psnr region is empty".into()));
    }
    let mut sse = 0.0;
    for (x, y) in region.iter_set() {
        let (a, b) = (image_gt.get_pixel(x, y), image_pred.get_pixel(x, y));
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            sse += d * d;
        }
    }
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / (3 * region.count()) as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// Perceptual distance from an external LPIPS model.
///
/// Command adapters get `{gt}` and `{pred}` PNG paths and must print one
/// number; HTTP adapters receive `gt` and `pred` parts and answer with one.
pub fn lpips_external(image_gt: &RgbImage, image_pred: &RgbImage, adapter: &AdapterConfig) -> Result<f64> {
    check_dims("predicted image", image_gt.dimensions(), image_pred.dimensions())?;
    adapter.validate().map_err(Error::InvalidParam)?;
    let fail = |cause: String| Error::Backend {
        backend: format!("lpips ({})", adapter.describe()),
        cause,
    };
    let payload = match adapter.kind {
        AdapterKind::Command => {
            let dir = tempfile::tempdir().map_err(|e| fail(format!("tempdir: {e}")))?;
            let gt = dir.path().join("gt.png");
            let pred = dir.path().join("pred.png");
            std::fs::write(&gt, encode_png_rgb(image_gt)).map_err(|e| fail(e.to_string()))?;
            std::fs::write(&pred, encode_png_rgb(image_pred)).map_err(|e| fail(e.to_string()))?;
            run_command(adapter, &[("gt", &gt), ("pred", &pred)]).map_err(fail)?.stdout
        }
        AdapterKind::Http => {
            let body = post_multipart(adapter, vec![("gt", encode_png_rgb(image_gt)), ("pred", encode_png_rgb(image_pred))])
                .map_err(fail)?;
            String::from_utf8_lossy(&body).into_owned()
        }
    };
    parse_score(&payload)
}

fn parse_score(payload: &str) -> Result<f64> {
    let text = payload.trim();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => {
            let shown: String = text.chars().take(80).collect();
            Err(Error::Metric(format!("cannot parse LPIPS score from {shown:?}")))
        }
    }
}
