//! Cost volumes and winner-takes-all selection.

use super::net::StereoNet;
use super::patches::{copy_patch, patch_fits, standardize};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::tensor::Tensor;

/// Inclusive integer disparity search interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DisparityRange {
    pub min: usize,
    pub max: usize,
}

impl DisparityRange {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if max <= min {
            return Err(Error::InvalidArgument(format!("disparity range needs max > min, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn count(&self) -> usize {
        self.max - self.min + 1
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if self.max > width {
            return Err(Error::InvalidArgument(format!(
                "maximum disparity {} exceeds the image width {width}",
                self.max
            )));
        }
        Ok(())
    }
}

/// Matching scores per pixel and disparity; higher is more similar.
/// Unevaluated entries hold negative infinity.
#[derive(Clone, Debug)]
pub struct CostVolume {
    width: usize,
    height: usize,
    range: DisparityRange,
    scores: Vec<f64>,
}

impl CostVolume {
    pub fn new(width: usize, height: usize, range: DisparityRange) -> Self {
        Self { width, height, range, scores: vec![f64::NEG_INFINITY; width * height * range.count()] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn range(&self) -> DisparityRange {
        self.range
    }

    fn index(&self, x: usize, y: usize, d: usize) -> usize {
        (y * self.width + x) * self.range.count() + (d - self.range.min)
    }

    pub fn score(&self, x: usize, y: usize, d: usize) -> Option<f64> {
        if d < self.range.min || d > self.range.max {
            return None;
        }
        let s = self.scores[self.index(x, y, d)];
        s.is_finite().then_some(s)
    }

    pub fn set(&mut self, x: usize, y: usize, d: usize, score: f64) {
        let i = self.index(x, y, d);
        self.scores[i] = score;
    }

    /// Scores of one pixel, indexed from the minimum disparity.
    pub fn column(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, self.range.min);
        &self.scores[i..i + self.range.count()]
    }

    /// Pixels with at least one evaluated disparity.
    pub fn valid_mask(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.column(x, y).iter().any(|s| s.is_finite()))
    }
}

/// Per-pixel disparities (negative infinity where invalid) with confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    disparity: Vec<f64>,
    confidence: Vec<f64>,
}

impl DisparityMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            disparity: vec![f64::NEG_INFINITY; width * height],
            confidence: vec![0.0; width * height],
        }
    }

    /// Map from raw values; non-finite entries are invalid.
    pub fn from_values(width: usize, height: usize, disparity: Vec<f64>) -> Result<Self> {
        if disparity.len() != width * height {
            return Err(Error::Shape(format!("{width}x{height} disparity map from {} values", disparity.len())));
        }
        let disparity = disparity.into_iter().map(|d| if d.is_finite() { d } else { f64::NEG_INFINITY }).collect();
        Ok(Self { width, height, disparity, confidence: vec![0.0; width * height] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.disparity[y * self.width + x];
        d.is_finite().then_some(d)
    }

    pub fn confidence(&self, x: usize, y: usize) -> f64 {
        self.confidence[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, d: f64, confidence: f64) {
        self.disparity[y * self.width + x] = d;
        self.confidence[y * self.width + x] = confidence;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.set(x, y, f64::NEG_INFINITY, 0.0);
    }

    /// Raw values, negative infinity marking invalid pixels.
    pub fn values(&self) -> &[f64] {
        &self.disparity
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.get(x, y).is_some())
    }

    pub fn valid_count(&self) -> usize {
        self.disparity.iter().filter(|d| d.is_finite()).count()
    }
}

/// Fraction of pixels valid in both maps whose disparities differ by more
/// than `threshold`; `None` when no pixel qualifies.
pub fn bad_pixel_rate(estimate: &DisparityMap, truth: &[f64], threshold: f64, region: Option<&Mask>) -> Option<f64> {
    let mut bad = 0usize;
    let mut total = 0usize;
    for y in 0..estimate.height {
        for x in 0..estimate.width {
            let t = truth[y * estimate.width + x];
            if !t.is_finite() || region.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            total += 1;
            match estimate.get(x, y) {
                Some(d) if (d - t).abs() <= threshold => {}
                _ => bad += 1,
            }
        }
    }
    (total > 0).then(|| bad as f64 / total as f64)
}

const FEATURE_BATCH: usize = 32;

fn features_for(net: &StereoNet, img: &Image, xs: &[usize], y: usize, left: bool) -> Result<Vec<Vec<f64>>> {
    let p = net.config().patch;
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(FEATURE_BATCH) {
        let mut data = vec![0.0; chunk.len() * p * p];
        for (k, &x) in chunk.iter().enumerate() {
            copy_patch(img, x, y, p, &mut data[k * p * p..(k + 1) * p * p]);
        }
        let feats = net.infer_features(&Tensor::new(&[chunk.len(), 1, p, p], data)?)?;
        let per = feats.len() / chunk.len();
        for f in feats.data().chunks(per) {
            out.push(if left { net.prepare_left(f) } else { net.prepare_right(f) });
        }
    }
    Ok(out)
}

/// Scores every masked left pixel against right pixels `d` columns to its
/// left. Each patch runs through the branches once; the head's per-side
/// work is shared across all disparities touching that patch. Patches that
/// cross an image border stay unevaluated.
pub fn build_cost_volume(
    left: &Image,
    right: &Image,
    mask: Option<&Mask>,
    net: &StereoNet,
    range: DisparityRange,
) -> Result<CostVolume> {
    let (w, h) = left.dims();
    if right.dims() != (w, h) {
        return Err(Error::Shape(format!("left {w}x{h} vs right {:?}", right.dims())));
    }
    if let Some(m) = mask {
        if m.dims() != (w, h) {
            return Err(Error::Shape(format!("mask {:?} vs image {w}x{h}", m.dims())));
        }
    }
    range.check_width(w)?;
    let p = net.config().patch;
    let (left, right) = (standardize(left), standardize(right));
    let mut volume = CostVolume::new(w, h, range);
    for y in 0..h {
        let xs: Vec<usize> = (0..w)
            .filter(|&x| mask.is_none_or(|m| m.get(x, y)) && patch_fits(x, y, p, w, h))
            .filter(|&x| x >= range.min && patch_fits(x - range.min, y, p, w, h))
            .collect();
        if xs.is_empty() {
            continue;
        }
        let mut needed = vec![false; w];
        for &x in &xs {
            for d in range.min..=range.max.min(x) {
                if patch_fits(x - d, y, p, w, h) {
                    needed[x - d] = true;
                }
            }
        }
        let rxs: Vec<usize> = (0..w).filter(|&x| needed[x]).collect();
        let lf = features_for(net, &left, &xs, y, true)?;
        let rf = features_for(net, &right, &rxs, y, false)?;
        let mut slot = vec![usize::MAX; w];
        for (k, &x) in rxs.iter().enumerate() {
            slot[x] = k;
        }
        for (a, &x) in lf.iter().zip(&xs) {
            for d in range.min..=range.max.min(x) {
                let k = slot[x - d];
                if k != usize::MAX {
                    volume.set(x, y, d, net.score_prepared(a, &rf[k]));
                }
            }
        }
    }
    Ok(volume)
}

/// Winner-takes-all with parabolic subpixel refinement.
pub fn wta_disparity(volume: &CostVolume) -> DisparityMap {
    wta_disparity_with(volume, true)
}

/// Winner-takes-all selection. Ties go to the smaller disparity. The
/// confidence is the margin between the best and second-best score, and 0
/// when only one disparity was evaluated. With `subpixel`, a parabola through
/// the winner and its two neighbours refines the estimate by at most half a
/// pixel, clamped to the search range.
pub fn wta_disparity_with(volume: &CostVolume, subpixel: bool) -> DisparityMap {
    let range = volume.range;
    let mut map = DisparityMap::invalid(volume.width, volume.height);
    for y in 0..volume.height {
        for x in 0..volume.width {
            let col = volume.column(x, y);
            let Some((best, second)) = best_two(col) else { continue };
            let confidence = second.map_or(0.0, |s| col[best] - s);
            let mut d = (range.min + best) as f64;
            if subpixel {
                d += parabola_offset(col, best);
                d = d.clamp(range.min as f64, range.max as f64);
            }
            map.set(x, y, d, confidence);
        }
    }
    map
}

/// Index of the best finite score (first on ties) and the runner-up score.
pub(crate) fn best_two(col: &[f64]) -> Option<(usize, Option<f64>)> {
    let mut best: Option<usize> = None;
    let mut second: Option<f64> = None;
    for (i, &s) in col.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        match best {
            Some(b) if s <= col[b] => second = Some(second.map_or(s, |v: f64| v.max(s))),
            Some(b) => {
                second = Some(second.map_or(col[b], |v: f64| v.max(col[b])));
                best = Some(i);
            }
            None => best = Some(i),
        }
    }
    best.map(|b| (b, second))
}

pub(crate) fn parabola_offset(col: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= col.len() {
        return 0.0;
    }
    let (a, b, c) = (col[i - 1], col[i], col[i + 1]);
    if !a.is_finite() || !c.is_finite() {
        return 0.0;
    }
    let curvature = a - 2.0 * b + c;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
}
