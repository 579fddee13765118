//! Procedural clean images and the synthetic evaluation protocol.

use rand::Rng;

use super::infer::{despeckle, despeckle_per_polarization, InferenceOptions};
use crate::error::{Error, Result};
use crate::metrics::{enl, psnr, ssim, MetricsReport, Roi};
use crate::network::NetworkCheckpoint;
use crate::raster::Raster;
use crate::speckle::{rng_from_seed, synth_gamma_stack, PolStack, GAMMA_SPECKLE_SECOND_MOMENT};

pub const SYNTHETIC_MIN: f64 = 0.1;
pub const SYNTHETIC_MAX: f64 = 1.0;

/// Grayscale `size×size` scene: a flat background with random rectangles
/// and disks, all values in `[0.1, 1]`.
pub fn procedural_image(size: usize, seed: u64) -> Raster {
    let mut rng = rng_from_seed(seed);
    let mut img = vec![rng.gen_range(SYNTHETIC_MIN..=SYNTHETIC_MAX); size * size];
    let s = size as f64;
    let shapes = rng.gen_range(4..=9);
    for _ in 0..shapes {
        let value = rng.gen_range(SYNTHETIC_MIN..=SYNTHETIC_MAX);
        if rng.gen_bool(0.5) {
            let w = rng.gen_range(0.1 * s..0.5 * s);
            let h = rng.gen_range(0.1 * s..0.5 * s);
            let x0 = rng.gen_range(0.0..s - w);
            let y0 = rng.gen_range(0.0..s - h);
            for y in 0..size {
                for x in 0..size {
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    if fx >= x0 && fx < x0 + w && fy >= y0 && fy < y0 + h {
                        img[y * size + x] = value;
                    }
                }
            }
        } else {
            let r = rng.gen_range(0.05 * s..0.25 * s);
            let cx = rng.gen_range(0.0..s);
            let cy = rng.gen_range(0.0..s);
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        img[y * size + x] = value;
                    }
                }
            }
        }
    }
    Raster::from_vec(1, size, size, img).expect("size matches")
}

/// `count` scenes from consecutive seeds, each replicated to `P` channels.
pub fn procedural_corpus(count: usize, size: usize, polarizations: usize, seed: u64) -> Vec<Raster> {
    (0..count as u64)
        .map(|i| {
            let g = procedural_image(size, seed.wrapping_add(i));
            let planes: Vec<&[f64]> = (0..polarizations).map(|_| g.channel(0)).collect();
            Raster::from_planes(size, size, &planes).expect("planes share a size")
        })
        .collect()
}

/// Likelihood-optimal reflectance for gamma replicas of a clean image `c`:
/// `E[n²]·c²`, counted once per component.
pub fn gamma_reflectance_from_clean(clean: &Raster) -> Raster {
    clean.map(|c| 2.0 * GAMMA_SPECKLE_SECOND_MOMENT * c * c)
}

/// Inverse of [`gamma_reflectance_from_clean`]; maps a despeckled `r′`
/// back to clean-image units.
pub fn clean_from_gamma_reflectance(r: &Raster) -> Raster {
    r.map(|v| (v / (2.0 * GAMMA_SPECKLE_SECOND_MOMENT)).max(0.0).sqrt())
}

/// PSNR and SSIM of the despeckled and noisy-intensity images against the
/// clean reference per polarization, plus ENL on each ROI.
pub fn evaluate_synthetic(
    clean: &Raster,
    despeckled: &Raster,
    noisy: &PolStack,
    rois: &[Roi],
    peak: f64,
) -> Result<MetricsReport> {
    let noisy_i = noisy.replica_mean();
    if !clean.same_shape(despeckled) || !clean.same_shape(&noisy_i) {
        return Err(Error::contract(format!(
            "shapes disagree: clean {:?}, despeckled {:?}, noisy {:?}",
            clean.shape(),
            despeckled.shape(),
            noisy_i.shape()
        )));
    }
    let (p, h, w) = clean.shape();
    let names = noisy.polarization_names();
    let mut report = MetricsReport::default();
    for (c, name) in names.iter().enumerate().take(p) {
        for (label, img) in [("despeckled", despeckled), ("noisy", &noisy_i)] {
            let ps = psnr(clean.channel(c), img.channel(c), peak)?;
            report.push(&format!("psnr_{label}"), name, "full", ps.db, ps.saturated);
            let ss = ssim(clean.channel(c), img.channel(c), h, w, peak)?;
            report.push(&format!("ssim_{label}"), name, "full", ss, false);
        }
        for roi in rois {
            let region = format!("roi:{roi}");
            for (label, img) in [("despeckled", despeckled), ("noisy", &noisy_i)] {
                let v = enl(img.channel(c), h, w, *roi)?;
                report.push(&format!("enl_{label}"), name, &region, v, false);
            }
        }
    }
    Ok(report)
}

/// Procedural corpus with gamma speckle, split into training and held-out
/// images.
#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub train_noisy: Vec<PolStack>,
    pub train_clean: Vec<Raster>,
    pub test_noisy: Vec<PolStack>,
    pub test_clean: Vec<Raster>,
}

impl SyntheticSplit {
    /// The last `held_out` of `count` scenes are kept for evaluation.
    pub fn generate(count: usize, held_out: usize, size: usize, polarizations: usize, seed: u64) -> Result<Self> {
        if held_out >= count {
            return Err(Error::contract("held-out set must leave training images"));
        }
        let clean = procedural_corpus(count, size, polarizations, seed);
        let noisy = clean
            .iter()
            .enumerate()
            .map(|(i, c)| synth_gamma_stack(c, seed ^ (0x5eed_0000 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let split = count - held_out;
        Ok(Self {
            train_noisy: noisy[..split].to_vec(),
            train_clean: clean[..split].to_vec(),
            test_noisy: noisy[split..].to_vec(),
            test_clean: clean[split..].to_vec(),
        })
    }

    /// Training targets for supervised training.
    pub fn train_targets(&self) -> Vec<Raster> {
        self.train_clean.iter().map(gamma_reflectance_from_clean).collect()
    }

    /// Despeckles every held-out image, maps `r′` to clean units and
    /// evaluates it at peak 1. A single-polarization checkpoint is applied
    /// per polarization.
    pub fn evaluate(&self, ckpt: &NetworkCheckpoint, opts: &InferenceOptions) -> Result<MetricsReport> {
        let mut report = MetricsReport::default();
        for (clean, noisy) in self.test_clean.iter().zip(&self.test_noisy) {
            let r = if ckpt.polarizations() == 1 && noisy.polarizations() != 1 {
                despeckle_per_polarization(noisy, ckpt, opts)?
            } else {
                despeckle(noisy, ckpt, opts)?
            };
            let est = clean_from_gamma_reflectance(&r);
            report
                .rows
                .extend(evaluate_synthetic(clean, &est, noisy, &[], 1.0)?.rows);
        }
        Ok(report)
    }
}
