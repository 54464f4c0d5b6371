//! Pipeline configuration: one TOML file, every section optional, unknown
//! keys rejected.

use std::path::{Path, PathBuf};

use serde::de::{DeserializeOwned, Deserializer, Error as _};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::restoration::{BubbleProfile, ProjectedPattern, RemovalConfig};
use crate::segmentation::UNetConfig;
use crate::stereo::{BlockMatchOptions, DisparityRange, StereoConfig};

// Network sections fill missing keys from the desk-scale settings the
// pipeline defaults to, not from the full-size network defaults.
fn overlay<'de, D: Deserializer<'de>, T: Serialize + DeserializeOwned>(d: D, base: T) -> std::result::Result<T, D::Error> {
    let given = toml::Table::deserialize(d)?;
    let mut table = toml::Table::try_from(base).map_err(D::Error::custom)?;
    table.extend(given);
    T::deserialize(table).map_err(D::Error::custom)
}

fn desk_stereo<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<StereoConfig, D::Error> {
    overlay(d, StereoConfig::desk())
}

fn desk_unet<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<UNetConfig, D::Error> {
    overlay(d, UNetConfig::desk())
}

fn desk_removal<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<RemovalConfig, D::Error> {
    overlay(d, RemovalConfig::desk())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub optics: OpticsConfig,
    pub stereo: StereoSection,
    pub synthesis: SynthesisConfig,
    pub train: TrainConfig,
    pub reconstruct: ReconstructConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub output: PathBuf,
    /// Directory written by `make-dataset`.
    pub dataset: Option<PathBuf>,
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
    /// Rig file written by `calibrate`.
    pub calibration: Option<PathBuf>,
    pub stereo_weights: Option<PathBuf>,
    pub segmentation_weights: Option<PathBuf>,
    pub removal_weights: Option<PathBuf>,
    /// Ground-truth disparity (PFM) in the rectified left frame.
    pub ground_truth: Option<PathBuf>,
    /// Gray-code correspondence map (PFM, two channels) for `calibrate`.
    pub correspondences: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            dataset: None,
            left: None,
            right: None,
            calibration: None,
            stereo_weights: None,
            segmentation_weights: None,
            removal_weights: None,
            ground_truth: None,
            correspondences: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsConfig {
    pub width: usize,
    pub height: usize,
    /// In-air focal length, pixels.
    pub focal: f64,
    /// Camera center to port distance, meters.
    pub interface_distance: f64,
    /// `n_air / n_water`.
    pub eta: f64,
    pub calibration_depth: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub depth_steps: usize,
    /// Rig baseline used by `calibrate`, meters.
    pub baseline: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 1024,
            focal: 1400.0,
            interface_distance: 0.05,
            eta: 1.0 / 1.33,
            calibration_depth: 0.6,
            depth_min: 0.1,
            depth_max: 1.0,
            depth_steps: 37,
            baseline: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatcherKind {
    Learned,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StereoSection {
    pub matcher: MatcherKind,
    /// Inclusive `[min, max]`; derived from the ground truth of built-in
    /// scenes when absent.
    pub disparity: Option<[usize; 2]>,
    pub subpixel: bool,
    pub window: usize,
    pub lr_tolerance: f64,
    pub min_deviation: f64,
    #[serde(deserialize_with = "desk_stereo")]
    pub network: StereoConfig,
}

impl Default for StereoSection {
    fn default() -> Self {
        let b = BlockMatchOptions::default();
        Self {
            matcher: MatcherKind::Baseline,
            disparity: None,
            subpixel: true,
            window: b.window,
            lr_tolerance: b.lr_tolerance,
            min_deviation: b.min_deviation,
            network: StereoConfig::desk(),
        }
    }
}

impl StereoSection {
    pub fn block_match(&self) -> BlockMatchOptions {
        BlockMatchOptions { window: self.window, lr_tolerance: self.lr_tolerance, min_deviation: self.min_deviation }
    }

    pub fn range(&self) -> Result<Option<DisparityRange>> {
        self.disparity.map(|[a, b]| DisparityRange::new(a, b).map_err(|e| Error::Config(e.to_string()))).transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub seed: u64,
    /// Stereo scenes written by `make-dataset`.
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    /// Bubble profile over stereo scenes, e.g. `far-much`; none when absent.
    pub bubbles: Option<String>,
    pub examples_per_scene: usize,
    /// Distance band of negative patches from the true match, pixels.
    pub negative_band: [f64; 2],
    /// Per restoration task.
    pub restoration_images: usize,
    pub restoration_size: usize,
    pub restoration_bubbles: String,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenes: 16,
            width: 160,
            height: 120,
            bubbles: Some("far-much".into()),
            examples_per_scene: 400,
            negative_band: [2.0, 10.0],
            restoration_images: 40,
            restoration_size: 128,
            restoration_bubbles: "near-much".into(),
        }
    }
}

impl SynthesisConfig {
    pub fn bubble_profile(&self) -> Result<Option<BubbleProfile>> {
        self.bubbles.as_deref().map(BubbleProfile::parse).transpose()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stereo: StereoTraining,
    pub segmentation: SegmentationTraining,
    pub removal: RemovalTraining,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StereoTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub margin: f64,
    pub seed: u64,
    pub freeze_features: bool,
    /// Random rotation, scale and brightness jitter of training patches.
    pub augment: bool,
}

impl Default for StereoTraining {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            margin: 0.2,
            seed: 1,
            freeze_features: false,
            augment: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub crop: Option<usize>,
    pub seed: u64,
    /// Dataset growth by joint geometric augmentation; 1 disables it.
    pub augment_factor: f64,
    #[serde(deserialize_with = "desk_unet")]
    pub network: UNetConfig,
}

impl Default for SegmentationTraining {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            crop: Some(96),
            seed: 3,
            augment_factor: 4.0,
            network: UNetConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemovalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub augment_factor: f64,
    #[serde(deserialize_with = "desk_removal")]
    pub network: RemovalConfig,
}

impl Default for RemovalTraining {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 4,
            augment_factor: 1.0,
            network: RemovalConfig::desk(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TexturedPlane,
    TexturelessPlane,
    Step,
    Sphere,
}

/// Built-in scene used by `reconstruct` when no input pair is configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub kind: SceneKind,
    /// Distance of the (back) plane, meters.
    pub depth: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub baseline: f64,
    /// Standard deviation of additive sensor noise.
    pub noise: f64,
    pub seed: u64,
    /// Project this pattern onto the scene when present.
    pub pattern: Option<ProjectedPattern>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::TexturedPlane,
            depth: 0.6,
            width: 320,
            height: 240,
            focal: 800.0,
            baseline: 0.1,
            noise: 0.004,
            seed: 7,
            pattern: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub scene: SceneConfig,
    /// Restrict matching to the segmented target when weights are given.
    pub segmentation: bool,
    pub dilation: usize,
    pub outlier_neighbors: usize,
    pub outlier_sigma: f64,
    /// Longest mesh edge kept, meters.
    pub max_edge: f64,
    pub depth_bins: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            segmentation: true,
            dilation: crate::segmentation::DEFAULT_DILATION,
            outlier_neighbors: crate::recon::DEFAULT_NEIGHBORS,
            outlier_sigma: crate::recon::DEFAULT_SIGMA,
            max_edge: 0.01,
            depth_bins: 5,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

/// Fails with a configuration error naming `path` unless it exists.
pub fn require(path: Option<&Path>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::Config(format!("{what} path is not configured")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(p.to_path_buf())
}
