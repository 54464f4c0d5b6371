//! The command implementations behind the `uwstereo` binary.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{require, MatcherKind, PipelineConfig, SceneConfig, SceneKind, StereoSection};
use super::plot::line_plot;
use crate::error::{Error, Result};
use crate::image::{psnr, Image, Mask};
use crate::io::{read_correspondence_map, read_mask, read_pfm, read_png, write_mask, write_pfm, write_png16, write_png8};
use crate::kv::KvDoc;
use crate::optics::{approximation_error_curve, depth_range, fit_depth_calibration, CalibrationGrid, CameraModel, FlatInterface};
use crate::recon::{
    disparity_to_cloud, evaluate_against_gt, grid_mesh, remove_outliers, write_cloud_ply, write_mesh_ply, EvalReport,
    GroundTruth, PointCloud,
};
use crate::restoration::{
    augment_pairs, read_manifest, removal_forward, task_sample, train_removal, write_manifest, ManifestEntry, RemovalNet,
    RemovalSchedule, Task,
};
use crate::rig::{fit_distortion_from_correspondences, CorrespondenceMap, StereoRig};
use crate::segmentation::{
    augment_dataset, dilate, mask_to_search_constraints, segment, train_segmentation, AugmentPolicy, SegmentationSchedule,
    UNet,
};
use crate::stereo::{
    bad_pixel_rate, baseline_block_match, build_cost_volume, jitter_brightness, sample_patch, sample_sited_examples,
    standardize, train_stereo, wta_disparity_with, Augmentation, DisparityMap, DisparityRange, PatchExample, PatchWarp,
    StereoNet, StereoSchedule,
};
use crate::synth::{random_stereo_sample, render_stereo, Scene};

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.paths.output.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path, delimiter: u8) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn field<T: std::str::FromStr>(row: &[String], i: usize, path: &Path) -> Result<T> {
    row.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: bad or missing column {i} in {row:?}", path.display())))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn write_loss_trace(path: &Path, losses: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), num(*l)]).collect();
    write_csv(path, &["epoch", "loss"], &rows)
}

fn read_rig(path: &Path) -> Result<StereoRig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StereoRig::from_kv(&KvDoc::parse(&text)?)
}

fn read_disparity(path: &Path) -> Result<Image> {
    let (w, h, c, v) = read_pfm(path)?;
    if c != 1 {
        return Err(Error::Format(format!("{}: disparity maps have one channel, found {c}", path.display())));
    }
    Image::from_vec(w, h, v)
}

/// Disparity scaled to [0, 1] over its valid range; invalid pixels black.
fn disparity_preview(map: &DisparityMap) -> Image {
    let valid: Vec<f64> = map.values().iter().copied().filter(|v| v.is_finite()).collect();
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    Image::from_fn(map.width(), map.height(), |x, y| map.get(x, y).map_or(0.0, |d| 0.1 + 0.9 * (d - lo) / span))
}

// ---------------------------------------------------------------- refraction

#[derive(Clone, Debug)]
pub struct RefractionCurve {
    pub depth: Vec<f64>,
    pub max_rel: Vec<f64>,
    pub rms_rel: Vec<f64>,
    pub max_px: Vec<f64>,
    pub fit_residual: f64,
}

/// Fits the depth-dependent approximation at the calibration depth and
/// sweeps its error over the configured depths.
pub fn cmd_simulate_refraction(cfg: &PipelineConfig) -> Result<RefractionCurve> {
    let o = &cfg.optics;
    if o.depth_steps == 0 || !(o.depth_max > o.depth_min) {
        return Err(Error::Config("optics depth sweep needs depth_steps > 0 and depth_max > depth_min".into()));
    }
    let dir = out_dir(cfg)?;
    let camera = CameraModel::pinhole(o.focal, o.focal, (o.width as f64 - 1.0) / 2.0, (o.height as f64 - 1.0) / 2.0, o.width, o.height);
    let iface = FlatInterface::frontal(o.interface_distance, o.eta);
    let grid = CalibrationGrid::default();
    let calib = fit_depth_calibration(&camera, &iface, o.calibration_depth, grid)?;
    // depths on the interface or in front of it cannot be imaged
    let depths: Vec<f64> = depth_range(o.depth_min, o.depth_max, o.depth_steps)
        .into_iter()
        .map(|z| z.max(o.interface_distance + 0.01))
        .collect();
    let samples = approximation_error_curve(&calib, &iface, &camera, &depths, &grid)?;
    let rows: Vec<Vec<String>> =
        samples.iter().map(|s| vec![num(s.depth), num(s.max_rel), num(s.rms_rel), num(s.max_px)]).collect();
    write_csv(&dir.join("refraction_error.csv"), &["depth_m", "max_rel_error", "rms_rel_error", "max_px_error"], &rows)?;
    let plot = line_plot(&[
        samples.iter().map(|s| (s.depth, s.max_rel)).collect(),
        samples.iter().map(|s| (s.depth, s.rms_rel)).collect(),
    ]);
    write_png8(&dir.join("refraction_error.png"), &plot)?;
    Ok(RefractionCurve {
        depth: samples.iter().map(|s| s.depth).collect(),
        max_rel: samples.iter().map(|s| s.max_rel).collect(),
        rms_rel: samples.iter().map(|s| s.rms_rel).collect(),
        max_px: samples.iter().map(|s| s.max_px).collect(),
        fit_residual: calib.residual,
    })
}

// ---------------------------------------------------------------- calibrate

/// Writes `rig.txt` for a two-camera rig of identical cameras. With a
/// correspondence map configured, the camera's distortion is fitted to it;
/// otherwise the flat-port approximation is fitted at the calibration depth
/// and also written to `calibration.txt`.
pub fn cmd_calibrate(cfg: &PipelineConfig) -> Result<StereoRig> {
    let o = &cfg.optics;
    let correspondences = cfg.paths.correspondences.as_deref().map(|p| require(Some(p), "correspondence map")).transpose()?;
    let dir = out_dir(cfg)?;
    let nominal = CameraModel::pinhole(o.focal, o.focal, (o.width as f64 - 1.0) / 2.0, (o.height as f64 - 1.0) / 2.0, o.width, o.height);
    let camera = match correspondences {
        Some(path) => {
            let (w, h, xs, ys) = read_correspondence_map(&path)?;
            let valid = Mask::from_fn(w, h, |x, y| xs[y * w + x].is_finite() && ys[y * w + x].is_finite());
            let map = CorrespondenceMap { width: w, height: h, x: xs, y: ys, valid };
            let fit = fit_distortion_from_correspondences(&map, &CameraModel { width: w, height: h, ..nominal })?;
            info!("distortion fit over {} correspondences, rms {:.4} px", fit.count, fit.rms);
            fit.camera
        }
        None => {
            let calib = fit_depth_calibration(&nominal, &FlatInterface::frontal(o.interface_distance, o.eta), o.calibration_depth, CalibrationGrid::default())?;
            info!("depth-dependent calibration residual {:.4} px", calib.residual);
            let path = dir.join("calibration.txt");
            fs::write(&path, calib.to_kv().render("depth-dependent flat-port calibration")).map_err(|e| Error::io(&path, e))?;
            calib.camera
        }
    };
    let rig = StereoRig::new(camera, camera, Matrix3::identity(), Vector3::new(o.baseline, 0.0, 0.0))?;
    let path = dir.join("rig.txt");
    fs::write(&path, rig.to_kv().render("stereo rig")).map_err(|e| Error::io(&path, e))?;
    Ok(rig)
}

// ---------------------------------------------------------------- dataset

pub const STEREO_INDEX: &str = "stereo.csv";
pub const PATCH_INDEX: &str = "patches.csv";
pub const RESTORATION_INDEX: &str = "restoration.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub patch_sites: usize,
    pub restoration_pairs: usize,
}

fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

/// Writes stereo scenes with ground truth, the patch sites used for
/// training, and bubble/pattern restoration pairs, each with an index file.
pub fn cmd_make_dataset(cfg: &PipelineConfig) -> Result<DatasetSummary> {
    let s = &cfg.synthesis;
    let profile = s.bubble_profile()?;
    let restoration_profile = crate::restoration::BubbleProfile::parse(&s.restoration_bubbles)?;
    let patch = cfg.stereo.network.patch;
    cfg.stereo.network.validate()?;
    let dir = match &cfg.paths.dataset {
        Some(d) => d.clone(),
        None => cfg.paths.output.join("dataset"),
    };
    for sub in ["stereo", "restoration"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut stereo_rows = Vec::new();
    let mut patch_rows = Vec::new();
    for i in 0..s.scenes {
        let seed = scene_seed(s.seed, i);
        let sample = random_stereo_sample(seed, s.width, s.height, profile)?;
        let name = |k: &str, ext: &str| format!("stereo/scene_{i:03}_{k}.{ext}");
        write_png16(&dir.join(name("left", "png")), &sample.left)?;
        write_png16(&dir.join(name("right", "png")), &sample.right)?;
        write_png16(&dir.join(name("clean_left", "png")), &sample.clean_left)?;
        write_png16(&dir.join(name("clean_right", "png")), &sample.clean_right)?;
        write_pfm(&dir.join(name("disparity", "pfm")), s.width, s.height, sample.disparity.data())?;
        write_mask(&dir.join(name("target", "png")), &sample.target)?;
        stereo_rows.push(vec![
            name("left", "png"),
            name("right", "png"),
            name("disparity", "pfm"),
            name("target", "png"),
            seed.to_string(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites = sample_sited_examples(
            &sample.left,
            &sample.right,
            &sample.disparity,
            patch,
            s.examples_per_scene,
            &Augmentation::none(),
            (s.negative_band[0], s.negative_band[1]),
            &mut rng,
        )?;
        for (site, _) in sites {
            patch_rows.push(vec![
                i.to_string(),
                site.x.to_string(),
                site.y.to_string(),
                num(site.positive_x),
                num(site.negative_x),
                num(sample.disparity.get(site.x, site.y)),
            ]);
        }
    }
    write_csv(&dir.join(STEREO_INDEX), &["left", "right", "disparity", "target", "seed"], &stereo_rows)?;
    write_csv(&dir.join(PATCH_INDEX), &["scene", "x", "y", "positive_x", "negative_x", "disparity"], &patch_rows)?;

    let mut entries = Vec::new();
    for task in [Task::Bubbles, Task::Pattern] {
        for i in 0..s.restoration_images {
            let seed = scene_seed(s.seed ^ 0x5eed, i);
            let r = task_sample(task, seed, s.restoration_size, s.restoration_size, restoration_profile)?;
            let clean = PathBuf::from(format!("restoration/{task}_{i:03}_clean.png"));
            let degraded = PathBuf::from(format!("restoration/{task}_{i:03}_degraded.png"));
            write_png16(&dir.join(&clean), &r.clean)?;
            write_png16(&dir.join(&degraded), &r.degraded)?;
            entries.push(ManifestEntry { clean, degraded, task, seed });
        }
    }
    write_manifest(&dir.join(RESTORATION_INDEX), &entries)?;
    info!("dataset written to {}", dir.display());
    Ok(DatasetSummary { scenes: s.scenes, patch_sites: patch_rows.len(), restoration_pairs: entries.len() })
}

fn dataset_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    match &cfg.paths.dataset {
        Some(d) => require(Some(d), "dataset directory"),
        None => require(Some(&cfg.paths.output.join("dataset")), "dataset directory"),
    }
}

// ---------------------------------------------------------------- train

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTask {
    Stereo,
    Segmentation,
    Removal(Task),
}

impl TrainTask {
    pub fn parse(task: &str, removal: Option<&str>) -> Result<Self> {
        match task {
            "stereo" => Ok(TrainTask::Stereo),
            "segmentation" => Ok(TrainTask::Segmentation),
            "removal" => Ok(TrainTask::Removal(removal.unwrap_or("bubbles").parse()?)),
            other => Err(Error::InvalidArgument(format!("unknown training task `{other}` (stereo, segmentation or removal)"))),
        }
    }

    fn stem(&self) -> String {
        match self {
            TrainTask::Stereo => "stereo".into(),
            TrainTask::Segmentation => "segmentation".into(),
            TrainTask::Removal(t) => format!("removal_{t}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub epoch_loss: Vec<f64>,
}

struct StereoScene {
    left: Image,
    right: Image,
    target: Mask,
}

fn load_stereo_scenes(dir: &Path) -> Result<Vec<StereoScene>> {
    let index = dir.join(STEREO_INDEX);
    read_table(&require(Some(&index), "stereo index")?, b',')?
        .iter()
        .map(|row| {
            let p = |i: usize| -> Result<PathBuf> { Ok(dir.join(field::<String>(row, i, &index)?)) };
            Ok(StereoScene { left: read_png(&p(0)?)?, right: read_png(&p(1)?)?, target: read_mask(&p(3)?)? })
        })
        .collect()
}

/// Cuts training examples at the recorded patch sites.
fn stereo_examples(dir: &Path, scenes: &[StereoScene], patch: usize, augment: bool, seed: u64) -> Result<Vec<PatchExample>> {
    let index = dir.join(PATCH_INDEX);
    let rows = read_table(&require(Some(&index), "patch index")?, b',')?;
    let std: Vec<(Image, Image)> = scenes.iter().map(|s| (standardize(&s.left), standardize(&s.right))).collect();
    let aug = if augment { Augmentation::default() } else { Augmentation::none() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let scene: usize = field(row, 0, &index)?;
        let (x, y): (f64, f64) = (field(row, 1, &index)?, field(row, 2, &index)?);
        let (px, nx): (f64, f64) = (field(row, 3, &index)?, field(row, 4, &index)?);
        let (l, r) = std.get(scene).ok_or_else(|| Error::Format(format!("{}: unknown scene {scene}", index.display())))?;
        let warp = PatchWarp::random(&aug, &mut rng);
        let (Some(mut a), Some(mut b), Some(mut c)) =
            (sample_patch(l, x, y, patch, warp), sample_patch(r, px, y, patch, warp), sample_patch(r, nx, y, patch, warp))
        else {
            continue;
        };
        jitter_brightness(&mut a, &aug, &mut rng);
        jitter_brightness(&mut b, &aug, &mut rng);
        jitter_brightness(&mut c, &aug, &mut rng);
        out.push(PatchExample { left: a, positive: b, negative: c });
    }
    Ok(out)
}

/// Trains one network from the dataset, optionally starting from
/// `resume`, and writes `<task>.ckpt` plus `<task>_loss.csv`.
pub fn cmd_train(cfg: &PipelineConfig, task: TrainTask, resume: Option<&Path>) -> Result<TrainOutcome> {
    let data = dataset_dir(cfg)?;
    let resume = resume.map(|p| require(Some(p), "checkpoint to resume from")).transpose()?;
    let dir = out_dir(cfg)?;
    let checkpoint = dir.join(format!("{}.ckpt", task.stem()));
    let t = &cfg.train;
    let losses = match task {
        TrainTask::Stereo => {
            let mut net = match &resume {
                Some(p) => StereoNet::load(p)?,
                None => StereoNet::new(cfg.stereo.network.clone())?,
            };
            let scenes = load_stereo_scenes(&data)?;
            let examples = stereo_examples(&data, &scenes, net.config().patch, t.stereo.augment, t.stereo.seed)?;
            let s = &t.stereo;
            let schedule = StereoSchedule {
                epochs: s.epochs,
                batch_size: s.batch_size,
                learning_rate: s.learning_rate,
                momentum: s.momentum,
                margin: s.margin,
                seed: s.seed,
                freeze_features: s.freeze_features,
            };
            let trace = train_stereo(&mut net, &examples, &schedule)?;
            net.save(&checkpoint)?;
            trace.epoch_loss
        }
        TrainTask::Segmentation => {
            let s = &t.segmentation;
            let mut net = match &resume {
                Some(p) => UNet::load(p)?,
                None => UNet::new(s.network.clone())?,
            };
            let scenes = load_stereo_scenes(&data)?;
            let pairs: Vec<(Image, Mask)> = scenes.into_iter().map(|s| (s.left, s.target)).collect();
            let pairs = if s.augment_factor > 1.0 {
                augment_dataset(&pairs, &AugmentPolicy { factor: s.augment_factor, seed: s.seed, ..Default::default() })?
            } else {
                pairs
            };
            let schedule = SegmentationSchedule {
                epochs: s.epochs,
                batch_size: s.batch_size,
                learning_rate: s.learning_rate,
                momentum: s.momentum,
                crop: s.crop,
                seed: s.seed,
            };
            let trace = train_segmentation(&mut net, &pairs, &schedule)?;
            net.save(&checkpoint)?;
            trace.epoch_loss
        }
        TrainTask::Removal(kind) => {
            let s = &t.removal;
            let mut net = match &resume {
                Some(p) => RemovalNet::load(p)?,
                None => RemovalNet::new(s.network.clone())?,
            };
            let entries = read_manifest(&require(Some(&data.join(RESTORATION_INDEX)), "restoration manifest")?)?;
            let pairs = entries
                .iter()
                .filter(|e| e.task == kind)
                .map(|e| Ok((read_png(&e.degraded)?, read_png(&e.clean)?)))
                .collect::<Result<Vec<_>>>()?;
            if pairs.is_empty() {
                return Err(Error::InvalidArgument(format!("the manifest lists no {kind} pairs")));
            }
            let pairs = if s.augment_factor > 1.0 {
                augment_pairs(&pairs, &AugmentPolicy { factor: s.augment_factor, seed: s.seed, ..Default::default() })?
            } else {
                pairs
            };
            let schedule = RemovalSchedule {
                epochs: s.epochs,
                batch_size: s.batch_size,
                learning_rate: s.learning_rate,
                momentum: s.momentum,
                seed: s.seed,
            };
            let trace = train_removal(&mut net, &pairs, &schedule)?;
            net.save(&checkpoint)?;
            trace.epoch_loss
        }
    };
    write_loss_trace(&dir.join(format!("{}_loss.csv", task.stem())), &losses)?;
    Ok(TrainOutcome { checkpoint, epoch_loss: losses })
}

// ---------------------------------------------------------------- segment / denoise

fn input_image(explicit: Option<&Path>, fallback: Option<&Path>, what: &str) -> Result<Image> {
    read_png(&require(explicit.or(fallback), what)?)
}

pub fn cmd_segment(cfg: &PipelineConfig, input: Option<&Path>) -> Result<Mask> {
    let weights = require(cfg.paths.segmentation_weights.as_deref(), "segmentation weights")?;
    let image = input_image(input, cfg.paths.left.as_deref(), "input image")?;
    let dir = out_dir(cfg)?;
    let mask = segment(&image, &UNet::load(&weights)?)?;
    write_mask(&dir.join("mask.png"), &mask)?;
    Ok(mask)
}

pub fn cmd_denoise(cfg: &PipelineConfig, input: Option<&Path>) -> Result<Image> {
    let weights = require(cfg.paths.removal_weights.as_deref(), "restoration weights")?;
    let image = input_image(input, cfg.paths.left.as_deref(), "input image")?;
    let dir = out_dir(cfg)?;
    let restored = removal_forward(&image, &RemovalNet::load(&weights)?)?;
    write_png16(&dir.join("restored.png"), &restored)?;
    Ok(restored)
}

// ---------------------------------------------------------------- match

/// Runs the configured matcher on a rectified pair, inside `mask` when
/// given.
pub fn run_matcher(
    section: &StereoSection,
    net: Option<&StereoNet>,
    left: &Image,
    right: &Image,
    mask: Option<&Mask>,
    range: DisparityRange,
) -> Result<DisparityMap> {
    match section.matcher {
        MatcherKind::Baseline => baseline_block_match(left, right, mask, &section.block_match(), range),
        MatcherKind::Learned => {
            let net = net.ok_or_else(|| Error::Config("the learned matcher needs stereo weights".into()))?;
            let range = match mask {
                Some(m) => match mask_to_search_constraints(m, 0).clip(range) {
                    Some(r) => r,
                    None => return Ok(DisparityMap::invalid(left.width(), left.height())),
                },
                None => range,
            };
            let volume = build_cost_volume(left, right, mask, net, range)?;
            Ok(wta_disparity_with(&volume, section.subpixel))
        }
    }
}

fn load_matcher(cfg: &PipelineConfig) -> Result<Option<StereoNet>> {
    match cfg.stereo.matcher {
        MatcherKind::Learned => Ok(Some(StereoNet::load(&require(cfg.paths.stereo_weights.as_deref(), "stereo weights")?)?)),
        MatcherKind::Baseline => Ok(None),
    }
}

#[derive(Clone, Debug)]
pub struct MatchOutcome {
    pub disparity: DisparityMap,
    /// Fraction of ground-truth pixels off by more than one pixel.
    pub bad_pixel_rate: Option<f64>,
}

pub fn cmd_match(cfg: &PipelineConfig, mask: Option<&Path>) -> Result<MatchOutcome> {
    let left = read_png(&require(cfg.paths.left.as_deref(), "left image")?)?;
    let right = read_png(&require(cfg.paths.right.as_deref(), "right image")?)?;
    let mask = mask.map(|p| require(Some(p), "mask").and_then(|p| read_mask(&p))).transpose()?;
    let truth = cfg.paths.ground_truth.as_deref().map(|p| require(Some(p), "ground-truth disparity")).transpose()?;
    let range = cfg.stereo.range()?.ok_or_else(|| Error::Config("stereo.disparity must be set for `match`".into()))?;
    let net = load_matcher(cfg)?;
    let dir = out_dir(cfg)?;
    let disparity = run_matcher(&cfg.stereo, net.as_ref(), &left, &right, mask.as_ref(), range)?;
    write_pfm(&dir.join("disparity.pfm"), disparity.width(), disparity.height(), disparity.values())?;
    write_png8(&dir.join("disparity.png"), &disparity_preview(&disparity))?;
    let bad = match truth {
        Some(p) => {
            let t = read_disparity(&p)?;
            bad_pixel_rate(&disparity, t.data(), 1.0, mask.as_ref())
        }
        None => None,
    };
    Ok(MatchOutcome { disparity, bad_pixel_rate: bad })
}

// ---------------------------------------------------------------- synthetic scenes

/// A rendered rectified pair with its ground truth.
pub struct SyntheticPair {
    pub rig: StereoRig,
    pub left: Image,
    pub right: Image,
    pub disparity: Image,
    pub target: Mask,
    pub truth: GroundTruth,
}

fn add_noise(img: &Image, std: f64, seed: u64) -> Result<Image> {
    if std == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("sensor noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    Image::from_vec(img.width(), img.height(), data)
}

pub fn synthetic_pair(scene: &SceneConfig) -> Result<SyntheticPair> {
    if !(scene.depth > 0.0 && scene.focal > 0.0 && scene.baseline > 0.0 && scene.noise >= 0.0) {
        return Err(Error::Config("scene depth, focal length and baseline must be positive, noise non-negative".into()));
    }
    let (w, h, z) = (scene.width, scene.height, scene.depth);
    let cam = CameraModel::pinhole(scene.focal, scene.focal, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h);
    let rig = StereoRig::rectified_pair(cam, scene.baseline)?;
    let half_view = 0.5 * w as f64 / scene.focal * z;
    let geometry = match scene.kind {
        SceneKind::TexturedPlane => Scene::textured_plane(z, scene.seed),
        SceneKind::TexturelessPlane => Scene::textureless_plane(z),
        SceneKind::Step => Scene::step(z, 0.85 * z, 0.4 * half_view, scene.seed),
        SceneKind::Sphere => Scene::sphere_on_plane(z, Vector3::new(0.0, 0.0, 0.8 * z), 0.35 * half_view, scene.seed),
    };
    let r = render_stereo(&geometry, &rig, None, scene.pattern.as_ref())?;
    let truth = match scene.kind {
        SceneKind::TexturedPlane | SceneKind::TexturelessPlane => GroundTruth::Plane { point: Vector3::new(0.0, 0.0, z), normal: Vector3::z() },
        _ => {
            let dense = DisparityMap::from_values(w, h, r.disparity.data().to_vec())?;
            GroundTruth::Cloud(disparity_to_cloud(&dense, &rig, None)?.points)
        }
    };
    Ok(SyntheticPair {
        left: add_noise(&r.left, scene.noise, scene.seed ^ 0x1ef7)?,
        right: add_noise(&r.right, scene.noise, scene.seed ^ 0x4167)?,
        rig,
        disparity: r.disparity,
        target: r.target,
        truth,
    })
}

fn range_around(truth: &Image, margin: usize) -> Result<DisparityRange> {
    let valid: Vec<f64> = truth.data().iter().copied().filter(|v| v.is_finite()).collect();
    if valid.is_empty() {
        return Err(Error::InvalidArgument("ground truth has no valid disparity".into()));
    }
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min).floor() as usize;
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil() as usize;
    DisparityRange::new(lo.saturating_sub(margin), hi + margin)
}

// ---------------------------------------------------------------- reconstruct

#[derive(Clone, Debug)]
pub struct ReconstructOutcome {
    pub disparity: DisparityMap,
    pub mask: Mask,
    /// Points before outlier removal.
    pub raw_points: usize,
    pub cloud: PointCloud,
    pub triangles: usize,
    pub report: Option<EvalReport>,
}

/// Undistort and rectify, segment, match, triangulate, filter, and
/// optionally restore the texture used for point colors. Without an input
/// pair the built-in scene is rendered and evaluated against its known
/// geometry.
pub fn cmd_reconstruct(cfg: &PipelineConfig, no_segmentation: bool) -> Result<ReconstructOutcome> {
    let rc = &cfg.reconstruct;
    // validate every referenced path before doing any work
    let use_segmentation = rc.segmentation && !no_segmentation && cfg.paths.segmentation_weights.is_some();
    let seg_weights = use_segmentation.then(|| require(cfg.paths.segmentation_weights.as_deref(), "segmentation weights")).transpose()?;
    let removal_weights = cfg.paths.removal_weights.as_deref().map(|p| require(Some(p), "restoration weights")).transpose()?;
    let external = cfg.paths.left.is_some() || cfg.paths.right.is_some();
    let net = load_matcher(cfg)?;

    let (rig, rectified_left, rectified_right, valid, truth, range) = if external {
        let left = read_png(&require(cfg.paths.left.as_deref(), "left image")?)?;
        let right = read_png(&require(cfg.paths.right.as_deref(), "right image")?)?;
        let rig = read_rig(&require(cfg.paths.calibration.as_deref(), "calibration")?)?;
        let truth = match cfg.paths.ground_truth.as_deref() {
            Some(p) => {
                let t = read_disparity(&require(Some(p), "ground-truth disparity")?)?;
                let dense = DisparityMap::from_values(t.width(), t.height(), t.data().to_vec())?;
                Some(GroundTruth::Cloud(disparity_to_cloud(&dense, &rig, None)?.points))
            }
            None => None,
        };
        let range = cfg.stereo.range()?.ok_or_else(|| Error::Config("stereo.disparity must be set for external input".into()))?;
        let pair = rig.rectify_pair(&left, &right)?;
        (rig, pair.left, pair.right, pair.left_valid, truth, range)
    } else {
        let s = synthetic_pair(&rc.scene)?;
        let range = match cfg.stereo.range()? {
            Some(r) => r,
            None => range_around(&s.disparity, 8)?,
        };
        let pair = s.rig.rectify_pair(&s.left, &s.right)?;
        (s.rig, pair.left, pair.right, pair.left_valid, Some(s.truth), range)
    };
    let dir = out_dir(cfg)?;

    let mask = match &seg_weights {
        Some(p) => {
            let m = segment(&rectified_left, &UNet::load(p)?)?;
            let m = dilate(&m, rc.dilation);
            Mask::from_fn(m.width(), m.height(), |x, y| m.get(x, y) && valid.get(x, y))
        }
        None => valid.clone(),
    };
    write_mask(&dir.join("mask.png"), &mask)?;

    let disparity = run_matcher(&cfg.stereo, net.as_ref(), &rectified_left, &rectified_right, Some(&mask), range)?;
    write_pfm(&dir.join("disparity.pfm"), disparity.width(), disparity.height(), disparity.values())?;
    write_png8(&dir.join("disparity.png"), &disparity_preview(&disparity))?;

    let texture = match &removal_weights {
        Some(p) => {
            let restored = removal_forward(&rectified_left, &RemovalNet::load(p)?)?;
            write_png16(&dir.join("restored.png"), &restored)?;
            restored
        }
        None => rectified_left.clone(),
    };
    let raw = disparity_to_cloud(&disparity, &rig, Some(&texture))?;
    let cloud = remove_outliers(&raw, rc.outlier_neighbors, rc.outlier_sigma)?;
    info!("{} points triangulated, {} after outlier removal", raw.len(), cloud.len());
    write_cloud_ply(&dir.join("cloud.ply"), &cloud)?;
    let mesh = grid_mesh(&disparity, &rig, rc.max_edge);
    write_mesh_ply(&dir.join("mesh.ply"), &mesh)?;

    let report = match (&truth, cloud.is_empty()) {
        (Some(gt), false) => Some(evaluate_against_gt(&cloud, gt, &nalgebra::Isometry3::identity(), rc.depth_bins)?),
        (Some(_), true) => {
            warn!("no points survived; nothing to evaluate");
            None
        }
        (None, _) => None,
    };
    write_report(&dir, cloud.len(), report.as_ref())?;
    Ok(ReconstructOutcome { disparity, mask, raw_points: raw.len(), cloud, triangles: mesh.triangles.len(), report })
}

fn write_report(dir: &Path, points: usize, report: Option<&EvalReport>) -> Result<()> {
    let mut rows = vec![vec!["all".into(), String::new(), String::new(), points.to_string(), report.map_or(String::new(), |r| num(r.rmse))]];
    if let Some(r) = report {
        for b in &r.per_depth {
            rows.push(vec!["depth".into(), num(b.z_min), num(b.z_max), b.count.to_string(), num(b.rmse)]);
        }
        let plot = line_plot(&[r.per_depth.iter().filter(|b| b.count > 0).map(|b| (0.5 * (b.z_min + b.z_max), b.rmse)).collect()]);
        write_png8(&dir.join("report.png"), &plot)?;
    }
    write_csv(&dir.join("report.csv"), &["scope", "z_min_m", "z_max_m", "points", "rmse_m"], &rows)
}

// ---------------------------------------------------------------- evaluate

#[derive(Clone, Debug)]
pub struct EvaluateOutcome {
    pub bad_pixel_rate: Option<f64>,
    pub report: Option<EvalReport>,
}

/// Compares a disparity map with the configured ground truth: bad-pixel
/// rate in disparity, and point-to-ground-truth RMSE after triangulation
/// with the calibrated rig.
pub fn cmd_evaluate(cfg: &PipelineConfig, disparity: Option<&Path>) -> Result<EvaluateOutcome> {
    let default = cfg.paths.output.join("disparity.pfm");
    let est_path = require(Some(disparity.unwrap_or(&default)), "disparity map")?;
    let gt_path = require(cfg.paths.ground_truth.as_deref(), "ground-truth disparity")?;
    let rig = read_rig(&require(cfg.paths.calibration.as_deref(), "calibration")?)?;
    let dir = out_dir(cfg)?;
    let est = read_disparity(&est_path)?;
    let gt = read_disparity(&gt_path)?;
    if est.dims() != gt.dims() {
        return Err(Error::Shape(format!("disparity {:?} vs ground truth {:?}", est.dims(), gt.dims())));
    }
    let map = DisparityMap::from_values(est.width(), est.height(), est.data().to_vec())?;
    let bad = bad_pixel_rate(&map, gt.data(), 1.0, None);
    let cloud = disparity_to_cloud(&map, &rig, None)?;
    let dense = DisparityMap::from_values(gt.width(), gt.height(), gt.data().to_vec())?;
    let gt_cloud = disparity_to_cloud(&dense, &rig, None)?;
    let report = if cloud.is_empty() || gt_cloud.is_empty() {
        None
    } else {
        Some(evaluate_against_gt(&cloud, &GroundTruth::Cloud(gt_cloud.points), &nalgebra::Isometry3::identity(), cfg.reconstruct.depth_bins)?)
    };
    write_report(&dir, cloud.len(), report.as_ref())?;
    let path = dir.join("disparity_metrics.csv");
    write_csv(&path, &["metric", "value"], &[vec!["bad_pixel_rate_1px".into(), bad.map_or(String::new(), num)]])?;
    Ok(EvaluateOutcome { bad_pixel_rate: bad, report })
}

/// PSNR of `restored` against `clean`, reported by `denoise` callers.
pub fn restoration_gain(degraded: &Image, restored: &Image, clean: &Image) -> f64 {
    psnr(restored, clean) - psnr(degraded, clean)
}
