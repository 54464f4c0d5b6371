//! Patch-similarity stereo matching.
//!
//! Each patch is seen twice: max-pooled to half size (wide field of view)
//! and center-cropped to half size (full resolution). Both branches share
//! weights between the left and right inputs and are concatenated before a
//! similarity head.

mod baseline;
mod net;
mod patches;
mod train;
mod volume;

pub use baseline::{baseline_block_match, BlockMatchOptions};
pub use net::{Head, HeadParams, StereoConfig, StereoNet};
pub use patches::{
    copy_patch, extract_branches, jitter_brightness, patch_at, patch_fits, sample_patch, standardize, Augmentation,
    PatchWarp,
};
pub use train::{
    example_scores, examples_from_pairs, mean_hinge, ranking_accuracy, sample_examples, sample_sited_examples,
    train_stereo, Label, PatchExample, PatchPair, PatchSite, StereoSchedule, TrainTrace, NEGATIVE_BAND,
};
pub use volume::{
    bad_pixel_rate, build_cost_volume, wta_disparity, wta_disparity_with, CostVolume, DisparityMap, DisparityRange,
};
