//! Synthetic restoration datasets and their on-disk manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;

use super::{pattern_layer, synth_bubbles, BubbleField, BubbleProfile, ProjectedPattern};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::synth::{render, sample_rig, Scene, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Bubbles,
    Pattern,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Bubbles => "bubbles",
            Task::Pattern => "pattern",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bubbles" | "bubble" => Ok(Task::Bubbles),
            "pattern" => Ok(Task::Pattern),
            other => Err(Error::InvalidArgument(format!("unknown restoration task `{other}`"))),
        }
    }
}

/// One synthetic training or evaluation sample.
#[derive(Clone, Debug)]
pub struct RestorationSample {
    pub degraded: Image,
    pub clean: Image,
    /// Pixels the degradation touched noticeably.
    pub affected: Mask,
    pub seed: u64,
}

fn clean_view(seed: u64, width: usize, height: usize) -> Result<(Image, Image, crate::optics::CameraModel)> {
    let rig = sample_rig(width, height)?;
    let scene = Scene::random(seed, 0.35, 0.9, 0.5 * width as f64 / rig.rectified.fx);
    let view = View { camera: &rig.left, center: Vector3::zeros(), interface: None };
    let r = render(&scene, &view, None)?;
    Ok((r.image, r.depth, rig.left))
}

/// Random scene with a bubble field of the given profile.
pub fn bubble_sample(seed: u64, width: usize, height: usize, profile: BubbleProfile) -> Result<RestorationSample> {
    let (clean, _, _) = clean_view(seed, width, height)?;
    let degraded = synth_bubbles(&clean, &BubbleField::random(profile, width, height, seed ^ 0xb0bb1e))?;
    let affected = Mask::from_fn(width, height, |x, y| (degraded.get(x, y) - clean.get(x, y)).abs() > 1e-3);
    Ok(RestorationSample { degraded, clean, affected, seed })
}

/// Projected wave pattern scaled to the rendering camera so that lines are
/// a few pixels apart whatever the image size.
pub fn desk_pattern(focal: f64) -> ProjectedPattern {
    ProjectedPattern { focal, wavelength: 6.0, amplitude: 1.5, undulation: 19.0, line_width: 0.9, ..Default::default() }
}

/// Random scene lit by [`desk_pattern`].
pub fn pattern_sample(seed: u64, width: usize, height: usize) -> Result<RestorationSample> {
    let (clean, depth, cam) = clean_view(seed, width, height)?;
    let layer = pattern_layer(&depth, &cam, &Vector3::zeros(), &desk_pattern(cam.fx))?;
    let degraded = Image::from_fn(width, height, |x, y| (clean.get(x, y) + layer.get(x, y)).clamp(0.0, 1.0));
    let affected = Mask::from_fn(width, height, |x, y| layer.get(x, y) > 0.05);
    Ok(RestorationSample { degraded, clean, affected, seed })
}

pub fn task_sample(task: Task, seed: u64, width: usize, height: usize, profile: BubbleProfile) -> Result<RestorationSample> {
    match task {
        Task::Bubbles => bubble_sample(seed, width, height, profile),
        Task::Pattern => pattern_sample(seed, width, height),
    }
}

/// Mean absolute difference to `clean` over `region`.
pub fn mean_abs_residual(img: &Image, clean: &Image, region: &Mask) -> f64 {
    let n = region.count().max(1) as f64;
    region
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| (img.data()[i] - clean.data()[i]).abs())
        .sum::<f64>()
        / n
}

/// Manifest line: clean path, degraded path, task tag, seed (tab separated).
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub task: Task,
    pub seed: u64,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::from("# clean\tdegraded\ttask\tseed\n");
    for e in entries {
        text += &format!("{}\t{}\t{}\t{}\n", e.clean.display(), e.degraded.display(), e.task, e.seed);
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("{}:{}: expected 4 tab-separated fields", path.display(), n + 1)));
        }
        let seed = fields[3]
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad seed `{}`", path.display(), n + 1, fields[3])))?;
        out.push(ManifestEntry {
            clean: base.join(fields[0]),
            degraded: base.join(fields[1]),
            task: fields[2].parse().map_err(|e: Error| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
            seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.tsv");
        let entries = vec![
            ManifestEntry { clean: dir.path().join("c0.png"), degraded: dir.path().join("d0.png"), task: Task::Bubbles, seed: 3 },
            ManifestEntry { clean: dir.path().join("c1.png"), degraded: dir.path().join("d1.png"), task: Task::Pattern, seed: 9 },
        ];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn samples_are_deterministic() {
        let a = bubble_sample(3, 32, 24, BubbleProfile::FAR_MUCH).unwrap();
        let b = bubble_sample(3, 32, 24, BubbleProfile::FAR_MUCH).unwrap();
        assert_eq!(a.degraded, b.degraded);
        let p = pattern_sample(4, 32, 24).unwrap();
        assert!(p.affected.count() > 0);
    }
}
