//! Channel and spatial masks applied as Hadamard products on a [`PolStack`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::speckle::{rng_from_seed, Component, PolStack};

/// Hides every channel of one component (all Re or all Im channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelMask {
    pub target: Component,
    pub polarizations: usize,
}

impl ChannelMask {
    /// Indices of the zeroed channels in `[a₁, b₁, …]` order.
    pub fn zeroed_channels(&self) -> Vec<usize> {
        (0..self.polarizations).map(|p| 2 * p + self.target.offset()).collect()
    }

    pub fn hides(&self, channel: usize) -> bool {
        channel % 2 == self.target.offset() && channel / 2 < self.polarizations
    }
}

pub fn make_channel_mask(polarizations: usize, target: Component) -> Result<ChannelMask> {
    if polarizations == 0 {
        return Err(Error::contract("channel mask needs at least one polarization"));
    }
    Ok(ChannelMask { target, polarizations })
}

/// How spatial drop decisions are shared between channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMaskMode {
    /// Independent draw for every pixel of every channel.
    #[default]
    PerChannel,
    /// One draw per pixel, applied to all channels.
    Shared,
}

/// Binary keep map over `2P×H×W` (channel-planar).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMask {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub drop_probability: f64,
    pub seed: u64,
    keep: Vec<bool>,
}

impl SpatialMask {
    pub fn all_keep(channels: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels,
            drop_probability: 0.0,
            seed: 0,
            keep: vec![true; channels * height * width],
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| !k).count() as f64 / self.keep.len().max(1) as f64
    }
}

/// Bernoulli(1 − p) keep map for a `P`-polarization stack.
pub fn make_spatial_mask(
    height: usize,
    width: usize,
    polarizations: usize,
    drop_probability: f64,
    seed: u64,
    mode: SpatialMaskMode,
) -> Result<SpatialMask> {
    if !(0.0..1.0).contains(&drop_probability) {
        return Err(Error::contract(format!(
            "spatial drop probability must lie in [0, 1), got {drop_probability}"
        )));
    }
    let channels = 2 * polarizations;
    let n = height * width;
    let mut rng = rng_from_seed(seed);
    let keep = match mode {
        SpatialMaskMode::PerChannel => (0..channels * n)
            .map(|_| rng.gen::<f64>() >= drop_probability)
            .collect(),
        SpatialMaskMode::Shared => {
            let plane: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() >= drop_probability).collect();
            plane.iter().copied().cycle().take(channels * n).collect()
        }
    };
    Ok(SpatialMask {
        height,
        width,
        channels,
        drop_probability,
        seed,
        keep,
    })
}

/// `M_c ∘ M_s ∘ x`; masked entries become exactly `+0.0`.
pub fn apply_masks(
    x: &PolStack,
    channel_mask: Option<&ChannelMask>,
    spatial_mask: Option<&SpatialMask>,
) -> Result<PolStack> {
    let keep = keep_map(x, channel_mask, spatial_mask)?;
    let mut out = x.clone();
    for (v, k) in out.raster_mut().data_mut().iter_mut().zip(keep) {
        if !k {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Combined per-entry keep flags of a channel mask and a spatial mask.
pub fn keep_map(
    x: &PolStack,
    channel_mask: Option<&ChannelMask>,
    spatial_mask: Option<&SpatialMask>,
) -> Result<Vec<bool>> {
    let (c, h, w) = x.raster().shape();
    if let Some(mc) = channel_mask {
        if 2 * mc.polarizations != c {
            return Err(Error::contract(format!(
                "channel mask for {} polarizations applied to {c} channels",
                mc.polarizations
            )));
        }
    }
    if let Some(ms) = spatial_mask {
        if (ms.channels, ms.height, ms.width) != (c, h, w) {
            return Err(Error::contract(format!(
                "spatial mask {}x{}x{} does not match stack {c}x{h}x{w}",
                ms.channels, ms.height, ms.width
            )));
        }
    }
    let mut keep = match spatial_mask {
        Some(ms) => ms.keep.clone(),
        None => vec![true; c * h * w],
    };
    let n = h * w;
    for ch in 0..c {
        if channel_mask.is_some_and(|mc| mc.hides(ch)) {
            keep[ch * n..(ch + 1) * n].fill(false);
        }
    }
    Ok(keep)
}
