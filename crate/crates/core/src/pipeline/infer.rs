//! Patchwise inference with Re/Im averaging.

use super::patches::{stitch_patches, OverlapPolicy, PatchGrid};
use crate::error::{Error, Result};
use crate::network::NetworkCheckpoint;
use crate::raster::Raster;
use crate::speckle::{Component, PolStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceOptions {
    pub patch_size: usize,
    pub stride: usize,
    pub overlap: OverlapPolicy,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            patch_size: 64,
            stride: 64,
            overlap: OverlapPolicy::Average,
        }
    }
}

/// Both single-direction reflectance estimates for one stack.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalEstimates {
    /// Predicted with the Re stack hidden.
    pub r_re: Raster,
    /// Predicted with the Im stack hidden.
    pub r_im: Raster,
}

impl DirectionalEstimates {
    /// `r′ = (r_Re + r_Im) / 2`.
    pub fn average(&self) -> Raster {
        let data = self
            .r_re
            .data()
            .iter()
            .zip(self.r_im.data())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let (c, h, w) = self.r_re.shape();
        Raster::from_vec(c, h, w, data).expect("estimates share a shape")
    }
}

/// Whole-stack forward passes in both directions, no spatial masking.
pub fn directional_estimates(image: &PolStack, ckpt: &NetworkCheckpoint) -> Result<DirectionalEstimates> {
    Ok(DirectionalEstimates {
        r_re: ckpt.forward(image, Component::Re)?.reflectance(),
        r_im: ckpt.forward(image, Component::Im)?.reflectance(),
    })
}

/// Despeckled reflectance `r′`, `P×H×W` in linear intensity.
///
/// The patch size is clipped to the image extents, so images smaller than
/// the configured patch are processed whole.
pub fn despeckle(image: &PolStack, ckpt: &NetworkCheckpoint, opts: &InferenceOptions) -> Result<Raster> {
    if image.polarizations() != ckpt.polarizations() {
        return Err(Error::contract(format!(
            "checkpoint handles {} polarizations, image has {}",
            ckpt.polarizations(),
            image.polarizations()
        )));
    }
    let size = opts.patch_size.min(image.height()).min(image.width());
    let grid = PatchGrid::new(image.height(), image.width(), size, opts.stride.min(size), opts.overlap)?;
    let patches = grid
        .coords
        .iter()
        .map(|&(y, x)| {
            let patch = image.crop(y, x, size, size)?;
            Ok(directional_estimates(&patch, ckpt)?.average())
        })
        .collect::<Result<Vec<_>>>()?;
    stitch_patches(&patches, &grid)
}

/// Runs a single-polarization checkpoint on each polarization of `image`
/// and stacks the results.
pub fn despeckle_per_polarization(
    image: &PolStack,
    ckpt: &NetworkCheckpoint,
    opts: &InferenceOptions,
) -> Result<Raster> {
    if ckpt.polarizations() != 1 {
        return Err(Error::contract(format!(
            "per-polarization inference needs a single-polarization checkpoint, got P = {}",
            ckpt.polarizations()
        )));
    }
    let (h, w) = (image.height(), image.width());
    let mut data = Vec::with_capacity(image.polarizations() * h * w);
    for p in 0..image.polarizations() {
        data.extend(despeckle(&image.polarization(p), ckpt, opts)?.into_vec());
    }
    Raster::from_vec(image.polarizations(), h, w, data)
}
