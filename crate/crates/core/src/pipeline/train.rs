//! Mini-batch training loop.

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adamw_step, AdamWConfig};
use crate::error::{Error, Result};
use crate::masking::SpatialMaskMode;
use crate::network::loss::{masked_passes_loss, pass_masks, Objective};
use crate::network::{NetworkCheckpoint, NormStats, UNet, UNetConfig};
use crate::raster::Raster;
use crate::speckle::{rng_from_seed, Component, PolStack};

/// Training objective variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Channel and spatial masking on the full multi-polarization stack.
    #[default]
    Polmerlin,
    /// Channel masking only (spatial drop forced to zero).
    ChannelOnly,
    /// Each polarization trained separately as a single-pol sample.
    MerlinSinglePol,
    /// Squared log error against known clean reflectance.
    SupervisedMse,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polmerlin" => Ok(Self::Polmerlin),
            "channel_only" => Ok(Self::ChannelOnly),
            "merlin_single_pol" => Ok(Self::MerlinSinglePol),
            "supervised_mse" => Ok(Self::SupervisedMse),
            _ => Err(Error::contract(format!(
                "unknown mode '{s}' (polmerlin, channel_only, merlin_single_pol, supervised_mse)"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Polmerlin => "polmerlin",
            Self::ChannelOnly => "channel_only",
            Self::MerlinSinglePol => "merlin_single_pol",
            Self::SupervisedMse => "supervised_mse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Spatial drop probability `p`.
    pub drop_probability: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Use one masking direction per step (Re on even steps, Im on odd)
    /// instead of both.
    pub alternate_directions: bool,
    pub spatial_mask_mode: SpatialMaskMode,
    pub base_width: usize,
    pub depth: usize,
    /// Anneal the step size from `lr` to zero over `epochs` along a half
    /// cosine.
    #[serde(default)]
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 1e-5,
            weight_decay: 0.01,
            drop_probability: 0.02,
            seed: 0,
            mode: TrainMode::Polmerlin,
            alternate_directions: false,
            spatial_mask_mode: SpatialMaskMode::PerChannel,
            base_width: 16,
            depth: 2,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    /// Small network and step size suited to a few hundred CPU steps on
    /// 64×64 patches.
    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            lr: 1e-3,
            base_width: 8,
            cosine_decay: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(Error::contract(format!(
                "spatial drop probability must lie in [0, 1), got {}",
                self.drop_probability
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::contract(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::contract("weight decay must be >= 0"));
        }
        Ok(())
    }

    fn effective_drop(&self) -> f64 {
        match self.mode {
            TrainMode::ChannelOnly => 0.0,
            _ => self.drop_probability,
        }
    }

    /// Step size for optimisation step `step` (0-based) given `steps_per_epoch`.
    pub fn lr_at(&self, step: u64, steps_per_epoch: usize) -> f64 {
        if !self.cosine_decay {
            return self.lr;
        }
        let total = (self.epochs * steps_per_epoch).max(1) as f64;
        let t = (step as f64 / total).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One optimisation step of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    /// Batch-mean loss.
    pub loss: f64,
}

/// `epoch,step,loss`
pub fn loss_log_csv(records: &[LossRecord]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("epoch,step,loss\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.step, r.loss);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: NetworkCheckpoint,
    pub log: Vec<LossRecord>,
}

/// Stepwise trainer; [`train`] runs it to completion.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    samples: Vec<PolStack>,
    targets: Option<Vec<Raster>>,
    ckpt: NetworkCheckpoint,
    rng: ChaCha8Rng,
    step: u64,
    log: Vec<LossRecord>,
}

fn check_dataset(dataset: &[PolStack], depth: usize) -> Result<()> {
    let Some(first) = dataset.first() else {
        return Err(Error::contract("training set is empty"));
    };
    let shape = first.raster().shape();
    if let Some(i) = dataset.iter().position(|s| s.raster().shape() != shape) {
        return Err(Error::contract(format!(
            "sample {i} has shape {:?}, expected {shape:?}",
            dataset[i].raster().shape()
        )));
    }
    UNetConfig::default()
        .with_depth(depth)
        .check_extents(first.height(), first.width())
}

impl Trainer {
    /// `targets` holds one `P×H×W` clean reflectance per sample and is
    /// required by [`TrainMode::SupervisedMse`] only.
    pub fn new(dataset: &[PolStack], targets: Option<&[Raster]>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_dataset(dataset, cfg.depth)?;
        let p = dataset[0].polarizations();
        let targets = match (cfg.mode, targets) {
            (TrainMode::SupervisedMse, None) => return Err(Error::contract("supervised_mse needs clean targets")),
            (TrainMode::SupervisedMse, Some(t)) => {
                if t.len() != dataset.len() {
                    return Err(Error::contract(format!(
                        "{} targets for {} samples",
                        t.len(),
                        dataset.len()
                    )));
                }
                let want = (p, dataset[0].height(), dataset[0].width());
                if t.iter().any(|r| r.shape() != want) {
                    return Err(Error::contract(format!("targets must be {want:?}")));
                }
                Some(t.to_vec())
            }
            _ => None,
        };

        let (samples, pols) = if cfg.mode == TrainMode::MerlinSinglePol {
            let s = dataset
                .iter()
                .flat_map(|x| (0..p).map(move |q| x.polarization(q)))
                .collect();
            (s, 1)
        } else {
            (dataset.to_vec(), p)
        };

        let mut rng = rng_from_seed(cfg.seed);
        let net_cfg = UNetConfig::for_polarizations(pols)
            .with_width(cfg.base_width)
            .with_depth(cfg.depth);
        let net = UNet::new(net_cfg, rng.next_u64())?;
        let stats = NormStats::fit(&samples)?;
        let ckpt = NetworkCheckpoint::new(net, stats, cfg.optimizer())?;
        Ok(Self {
            cfg: cfg.clone(),
            samples,
            targets,
            ckpt,
            rng,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> &NetworkCheckpoint {
        &self.ckpt
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    /// Number of training samples after any per-polarization expansion.
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// One pass over the shuffled training set; returns the epoch mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.ckpt.epoch as usize;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        let p = self.cfg.effective_drop();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let mut total = 0.0;
            let mut grads: Vec<Vec<f64>> = self.ckpt.net.params.iter().map(|t| vec![0.0; t.len()]).collect();
            for &i in batch {
                let x = &self.samples[i];
                let [m_re, m_im] = pass_masks(x, p, self.rng.next_u64(), self.cfg.spatial_mask_mode)?;
                let both = [(Component::Re, Some(&m_re)), (Component::Im, Some(&m_im))];
                let passes: &[_] = if !self.cfg.alternate_directions {
                    &both
                } else if self.step.is_multiple_of(2) {
                    &both[..1]
                } else {
                    &both[1..]
                };
                let objective = match &self.targets {
                    Some(t) => Objective::Supervised { target: &t[i] },
                    None => Objective::Likelihood,
                };
                let eval = masked_passes_loss(&self.ckpt.net, &self.ckpt.stats, x, passes, objective, true)?;
                if !eval.loss.is_finite() {
                    return Err(Error::Domain(format!(
                        "non-finite loss at epoch {epoch}, step {}",
                        self.step
                    )));
                }
                total += eval.loss;
                for (acc, g) in grads.iter_mut().zip(eval.grads.unwrap_or_default()) {
                    acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
            }
            let n = batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g /= n);
            let steps_per_epoch = self.samples.len().div_ceil(self.cfg.batch_size);
            self.ckpt.optimizer.config.lr = self.cfg.lr_at(self.step, steps_per_epoch);
            adamw_step(&mut self.ckpt.net.params, &grads, &mut self.ckpt.optimizer)?;
            self.log.push(LossRecord {
                epoch,
                step: self.step,
                loss: total / n,
            });
            self.step += 1;
            epoch_loss += total;
        }
        let mean = epoch_loss / self.samples.len() as f64;
        self.ckpt.epoch += 1;
        self.ckpt.loss_history.push(mean);
        Ok(mean)
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            checkpoint: self.ckpt,
            log: self.log,
        }
    }
}

/// Self-supervised training (every mode except [`TrainMode::SupervisedMse`]).
pub fn train(dataset: &[PolStack], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_targets(dataset, None, cfg)
}

pub fn train_with_targets(dataset: &[PolStack], targets: Option<&[Raster]>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, targets, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}
