//! Despeckling network, likelihood loss and the training checkpoint.

pub mod flops;
pub mod loss;
pub mod preprocess;
pub mod unet;

pub use flops::{count_flops, count_sequential_flops, LayerSpec};
pub use loss::{nll_loss, nll_value, step_loss, LossEval, Objective, ReflectanceEstimate};
pub use preprocess::{log_intensity, preprocess, NormStats, LOG_FLOOR};
pub use unet::{UNet, UNetConfig};

use crate::autodiff::{AdamWConfig, OptimizerState, Tensor};
use crate::error::{Error, Result};
use crate::masking::{apply_masks, make_channel_mask};
use crate::raster::Raster;
use crate::speckle::{Component, PolStack};

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint {
    pub net: UNet,
    pub optimizer: OptimizerState,
    pub stats: NormStats,
    pub epoch: u64,
    /// Mean training loss of each completed epoch.
    pub loss_history: Vec<f64>,
}

impl NetworkCheckpoint {
    pub fn new(net: UNet, stats: NormStats, optimizer: AdamWConfig) -> Result<Self> {
        let ckpt = Self {
            optimizer: OptimizerState::new(optimizer, &net.params),
            net,
            stats,
            epoch: 0,
            loss_history: Vec::new(),
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.net.config
    }

    pub fn polarizations(&self) -> usize {
        self.net.config.polarizations()
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.stats.validate()?;
        if self.stats.channels() != self.net.config.in_channels {
            return Err(Error::contract(format!(
                "normalisation covers {} channels, network takes {}",
                self.stats.channels(),
                self.net.config.in_channels
            )));
        }
        let ok = self.optimizer.first_moment.len() == self.net.params.len()
            && self
                .optimizer
                .first_moment
                .iter()
                .zip(&self.optimizer.second_moment)
                .zip(&self.net.params)
                .all(|((m, v), p)| m.len() == p.len() && v.len() == p.len());
        if !ok {
            return Err(Error::contract("optimizer state does not match parameters"));
        }
        Ok(())
    }

    /// Hides the `hidden` stack of `x` and predicts its log-reflectance.
    pub fn forward(&self, x: &PolStack, hidden: Component) -> Result<ReflectanceEstimate> {
        if x.polarizations() != self.polarizations() {
            return Err(Error::contract(format!(
                "checkpoint handles {} polarizations, input has {}",
                self.polarizations(),
                x.polarizations()
            )));
        }
        let mc = make_channel_mask(x.polarizations(), hidden)?;
        let masked = apply_masks(x, Some(&mc), None)?;
        self.forward_masked(&masked)
    }

    /// Runs the network on an already-masked stack.
    pub fn forward_masked(&self, x_masked: &PolStack) -> Result<ReflectanceEstimate> {
        let input: Tensor = preprocess(x_masked, &self.stats)?;
        let out = self.net.forward(&input)?;
        let (c, h, w) = out.chw()?;
        Ok(ReflectanceEstimate {
            log_r: Raster::from_vec(c, h, w, out.into_data())?,
        })
    }
}
