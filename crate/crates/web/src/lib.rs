//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! [`Demo`] holds the plain Rust state and is what the native tests drive;
//! [`Scene`] wraps it for JavaScript.

use despeckle_core::masking::{apply_masks, make_channel_mask, make_spatial_mask, SpatialMaskMode};
use despeckle_core::metrics::{enl, psnr, ssim, Roi};
use despeckle_core::pipeline::{
    clean_from_gamma_reflectance, despeckle, extract_patches, procedural_image, InferenceOptions, TrainConfig,
    TrainMode, Trainer,
};
use despeckle_core::speckle::{synth_gamma_stack, Component, PolStack};
use despeckle_core::{Error, Raster};
use wasm_bindgen::prelude::*;

const PATCH: usize = 32;

pub struct Demo {
    clean: Raster,
    noisy: PolStack,
    trainer: Option<Trainer>,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[wasm_bindgen]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub enl: f64,
}

impl Demo {
    /// Procedural `size × size` scene replicated to `polarizations` channels
    /// and speckled with gamma replicas.
    pub fn new(size: usize, polarizations: usize, seed: u64) -> Result<Self, Error> {
        if size < PATCH || !size.is_multiple_of(PATCH) || polarizations == 0 {
            return Err(Error::Contract(format!(
                "size must be a positive multiple of {PATCH} and polarizations at least 1, got {size} and {polarizations}"
            )));
        }
        let gray = procedural_image(size, seed);
        let planes: Vec<&[f64]> = (0..polarizations).map(|_| gray.channel(0)).collect();
        let clean = Raster::from_planes(size, size, &planes)?;
        let noisy = synth_gamma_stack(&clean, seed.wrapping_add(1))?;
        Ok(Self {
            clean,
            noisy,
            trainer: None,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.clean.height()
    }

    pub fn clean(&self) -> &[f64] {
        self.clean.channel(0)
    }

    /// Replica-mean intensity of the first polarization.
    pub fn noisy(&self) -> Vec<f64> {
        self.noisy.replica_mean().channel(0).to_vec()
    }

    /// Real part of the first polarization as the network sees it when the
    /// imaginary parts are the target and a fraction `p` of pixels is dropped.
    pub fn masked_input(&self, p: f64, seed: u64) -> Result<Vec<f64>, Error> {
        let (h, w) = (self.noisy.height(), self.noisy.width());
        let channel = make_channel_mask(self.noisy.polarizations(), Component::Im)?;
        let spatial = make_spatial_mask(h, w, self.noisy.polarizations(), p, seed, SpatialMaskMode::PerChannel)?;
        let masked = apply_masks(&self.noisy, Some(&channel), Some(&spatial))?;
        Ok(masked.component(0, Component::Re).to_vec())
    }

    /// Runs `epochs` more epochs of polmerlin training on the scene's own
    /// 32×32 patches; returns the last epoch's mean loss.
    pub fn train(&mut self, epochs: usize) -> Result<f64, Error> {
        if self.trainer.is_none() {
            let (patches, _) = extract_patches(self.noisy.raster(), PATCH, PATCH)?;
            let names = self.noisy.polarization_names().to_vec();
            let data = patches
                .into_iter()
                .map(|p| PolStack::new(p, names.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = TrainConfig {
                mode: TrainMode::Polmerlin,
                epochs: 200,
                seed: self.seed,
                ..TrainConfig::desk()
            };
            self.trainer = Some(Trainer::new(&data, None, &cfg)?);
        }
        let trainer = self.trainer.as_mut().expect("initialised above");
        let mut loss = f64::NAN;
        for _ in 0..epochs {
            loss = trainer.run_epoch()?;
        }
        Ok(loss)
    }

    pub fn epochs_done(&self) -> u64 {
        self.trainer.as_ref().map_or(0, |t| t.checkpoint().epoch)
    }

    /// Despeckled first polarization in clean-image units; the untrained
    /// network is used when no epoch has run yet.
    pub fn despeckled(&mut self) -> Result<Vec<f64>, Error> {
        if self.trainer.is_none() {
            self.train(0)?;
        }
        let ckpt = self.trainer.as_ref().expect("initialised above").checkpoint();
        let opts = InferenceOptions {
            patch_size: PATCH,
            stride: PATCH / 2,
            ..InferenceOptions::default()
        };
        let r = despeckle(&self.noisy, ckpt, &opts)?;
        Ok(clean_from_gamma_reflectance(&r).channel(0).to_vec())
    }

    /// PSNR/SSIM of `estimate` against the clean image (peak 1) and ENL of
    /// `estimate` inside `roi`.
    pub fn quality(&self, estimate: &[f64], roi: Roi) -> Result<Quality, Error> {
        let n = self.size();
        Ok(Quality {
            psnr: psnr(self.clean(), estimate, 1.0)?.db,
            ssim: ssim(self.clean(), estimate, n, n, 1.0)?,
            enl: enl(estimate, n, n, roi)?,
        })
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Scene(Demo);

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, polarizations: usize, seed: u64) -> Result<Scene, JsError> {
        Demo::new(size, polarizations, seed).map(Scene).map_err(js)
    }

    pub fn size(&self) -> usize {
        self.0.size()
    }

    pub fn clean(&self) -> Vec<f64> {
        self.0.clean().to_vec()
    }

    pub fn noisy(&self) -> Vec<f64> {
        self.0.noisy()
    }

    pub fn masked_input(&self, p: f64, seed: u64) -> Result<Vec<f64>, JsError> {
        self.0.masked_input(p, seed).map_err(js)
    }

    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.0.train(epochs).map_err(js)
    }

    pub fn epochs_done(&self) -> u64 {
        self.0.epochs_done()
    }

    pub fn despeckled(&mut self) -> Result<Vec<f64>, JsError> {
        self.0.despeckled().map_err(js)
    }

    pub fn quality(&self, estimate: &[f64], x: usize, y: usize, w: usize, h: usize) -> Result<Quality, JsError> {
        self.0.quality(estimate, Roi::new(x, y, w, h)).map_err(js)
    }
}
