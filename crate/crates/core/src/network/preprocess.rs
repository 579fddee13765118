use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::speckle::PolStack;

/// Floor added to squared components before taking the log.
pub const LOG_FLOOR: f64 = 1e-6;

/// `ln(a² + ε)`.
#[inline]
pub fn log_intensity(a: f64) -> f64 {
    (a * a + LOG_FLOOR).ln()
}

/// Per-channel mean and standard deviation of log-intensity, fitted once on
/// the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over every pixel of every stack; a channel
    /// with zero spread keeps unit scale.
    pub fn fit<'a>(stacks: impl IntoIterator<Item = &'a PolStack>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for s in stacks {
            let r = s.raster();
            if sum.is_empty() {
                sum = vec![0.0; r.channels()];
                sum_sq = vec![0.0; r.channels()];
            } else if sum.len() != r.channels() {
                return Err(Error::contract("stacks disagree on channel count"));
            }
            for c in 0..r.channels() {
                for &a in r.channel(c) {
                    let v = log_intensity(a);
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += r.plane_len();
        }
        if count == 0 {
            return Err(Error::contract("cannot fit normalisation on an empty set"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| {
                let var = (s2 / n - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::contract("normalisation mean/std length mismatch"));
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::contract("normalisation standard deviations must be positive"));
        }
        Ok(())
    }
}

/// Standardised log-intensity network input, `2P×H×W`. Components that are
/// exactly zero, which is how masking marks them, map to the channel mean
/// (0 after standardisation).
pub fn preprocess(x_masked: &PolStack, stats: &NormStats) -> Result<Tensor> {
    let r = x_masked.raster();
    if stats.channels() != r.channels() {
        return Err(Error::contract(format!(
            "normalisation has {} channels, stack has {}",
            stats.channels(),
            r.channels()
        )));
    }
    let mut data = Vec::with_capacity(r.data().len());
    for c in 0..r.channels() {
        let (m, s) = (stats.mean[c], stats.std[c]);
        data.extend(
            r.channel(c)
                .iter()
                .map(|&a| if a == 0.0 { 0.0 } else { (log_intensity(a) - m) / s }),
        );
    }
    Tensor::new(vec![r.channels(), r.height(), r.width()], data)
}

/// Graph form of [`preprocess`] applied to an already masked stack.
pub fn preprocess_graph(g: &mut Graph, x_masked: Var, stats: &NormStats) -> Result<Var> {
    let sq = g.square(x_masked)?;
    let floored = g.add_scalar(sq, LOG_FLOOR)?;
    let logs = g.log(floored)?;
    let z = g.standardize_channels(logs, &stats.mean, &stats.std)?;
    let present = g.value(x_masked).data().iter().map(|&a| a != 0.0).collect();
    g.keep_mask(z, present)
}
