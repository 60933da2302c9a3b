//! Hole-filling backends behind one request/response contract.
//!
//! Every backend receives an RGB image and a hole mask and must return an
//! image of the same size. [`inpaint`] enforces the rest of the contract:
//! pixels outside the mask come back bit-identical to the input.

pub mod diffusion;
pub mod external;
pub mod histogram;
pub mod nnf;
pub mod patchmatch;
mod planar;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::error::{Error, Result};
use crate::raster::{check_dims, BinaryMask};

pub use diffusion::diffusion_fill;
pub use external::external_inpaint;
pub use histogram::histogram_match;
pub use nnf::{nnf_search, NNField, NnfEntry, NnfSearch};
pub use patchmatch::{patchmatch_inpaint, patchmatch_inpaint_detailed, LevelTrace, PatchMatchOutput, PatchMatchParams};

/// A validated image + hole pair.
#[derive(Debug, Clone)]
pub struct InpaintRequest {
    image: RgbImage,
    mask: BinaryMask,
}

impl InpaintRequest {
    pub fn new(image: RgbImage, mask: BinaryMask) -> Result<Self> {
        check_dims("inpaint mask", image.dimensions(), mask.dims())?;
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::InvalidRequest("image is empty".into()));
        }
        if mask.count() == mask.bits().len() {
            return Err(Error::InvalidRequest(
                "mask covers the whole image; nothing is left to fill from".into(),
            ));
        }
        Ok(Self { image, mask })
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn into_parts(self) -> (RgbImage, BinaryMask) {
        (self.image, self.mask)
    }
}

pub trait InpaintBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Fill the masked pixels. Pixels outside the mask may be returned in any
    /// state; [`inpaint`] restores them.
    fn fill(&self, request: &InpaintRequest) -> Result<RgbImage>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    #[serde(rename = "patchmatch")]
    PatchMatch(#[serde(default)] PatchMatchParams),
    Diffusion,
    External { adapter: AdapterConfig },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::PatchMatch(PatchMatchParams::default())
    }
}

impl BackendConfig {
    /// Same backend with its random stream re-seeded (no-op for deterministic ones).
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            BackendConfig::PatchMatch(p) => BackendConfig::PatchMatch(PatchMatchParams { seed, ..p.clone() }),
            other => other.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackendConfig::PatchMatch(p) => p.validate(),
            BackendConfig::Diffusion => Ok(()),
            BackendConfig::External { adapter } => adapter
                .validate()
                .map_err(|m| Error::InvalidParam(format!("external backend: {m}"))),
        }
    }
}

impl InpaintBackend for BackendConfig {
    fn name(&self) -> &str {
        match self {
            BackendConfig::PatchMatch(_) => "patchmatch",
            BackendConfig::Diffusion => "diffusion",
            BackendConfig::External { .. } => "external",
        }
    }

    fn fill(&self, request: &InpaintRequest) -> Result<RgbImage> {
        match self {
            BackendConfig::PatchMatch(p) => patchmatch_inpaint(request, p),
            BackendConfig::Diffusion => Ok(diffusion_fill(request)),
            BackendConfig::External { adapter } => external_inpaint(request, adapter),
        }
    }
}

/// Run `backend` on `request` and enforce the output contract.
pub fn inpaint(request: &InpaintRequest, backend: &dyn InpaintBackend) -> Result<RgbImage> {
    if request.mask().is_empty() {
        return Ok(request.image().clone());
    }
    let filled = backend.fill(request)?;
    check_dims(
        &format!("{} backend output", backend.name()),
        request.image().dimensions(),
        filled.dimensions(),
    )?;
    let mut out = request.image().clone();
    crate::raster::paste_masked(&mut out, &filled, request.mask());
    Ok(out)
}
