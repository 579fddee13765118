//! Patching, training, inference and the synthetic experiment.

pub mod infer;
pub mod patches;
pub mod synthetic;
pub mod train;

pub use infer::{despeckle, despeckle_per_polarization, directional_estimates, DirectionalEstimates, InferenceOptions};
pub use patches::{extract_patches, stitch_patches, OverlapPolicy, PatchGrid};
pub use synthetic::{
    clean_from_gamma_reflectance, evaluate_synthetic, gamma_reflectance_from_clean, procedural_corpus,
    procedural_image, SyntheticSplit,
};
pub use train::{loss_log_csv, train, train_with_targets, LossRecord, TrainConfig, TrainMode, TrainOutcome, Trainer};
