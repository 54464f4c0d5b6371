use kiddo::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use log::warn;
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rig::StereoRig;
use crate::stereo::DisparityMap;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    /// Rectified left-camera frame, meters.
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    /// Left pixel each point came from.
    pub pixels: Vec<(usize, usize)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose flag is set.
    pub fn retain(&self, keep: &[bool]) -> PointCloud {
        let pick = |i: usize| keep[i];
        PointCloud {
            points: self.points.iter().enumerate().filter(|(i, _)| pick(*i)).map(|(_, p)| *p).collect(),
            colors: self.colors.as_ref().map(|c| c.iter().enumerate().filter(|(i, _)| pick(*i)).map(|(_, c)| *c).collect()),
            pixels: self.pixels.iter().enumerate().filter(|(i, _)| pick(*i)).map(|(_, p)| *p).collect(),
        }
    }
}

/// Read-only k-d tree over a point set.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self { tree: ImmutableKdTree::new_from_slice(&raw), len: points.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Up to `k` nearest `(distance, index)` pairs, closest first.
    pub fn nearest(&self, q: &Vector3<f64>, k: usize) -> Vec<(f64, usize)> {
        if k == 0 || self.len == 0 {
            return Vec::new();
        }
        let k = std::num::NonZero::new(k.min(self.len)).expect("positive");
        self.tree
            .nearest_n::<SquaredEuclidean>(&[q.x, q.y, q.z], k)
            .into_iter()
            .map(|n| (n.distance.sqrt(), n.item as usize))
            .collect()
    }
}

/// Triangulates every valid pixel. `color` supplies a gray level per left
/// pixel when given.
pub fn disparity_to_cloud(map: &DisparityMap, rig: &StereoRig, color: Option<&Image>) -> Result<PointCloud> {
    if let Some(c) = color {
        if c.dims() != (map.width(), map.height()) {
            return Err(Error::Shape(format!(
                "color image {:?} differs from disparity map {}x{}",
                c.dims(),
                map.width(),
                map.height()
            )));
        }
    }
    let mut cloud = PointCloud { colors: color.map(|_| Vec::new()), ..Default::default() };
    for y in 0..map.height() {
        for x in 0..map.width() {
            let Some(d) = map.get(x, y) else { continue };
            let Some(p) = rig.triangulate(x as f64, y as f64, d) else { continue };
            cloud.points.push(p);
            cloud.pixels.push((x, y));
            if let (Some(c), Some(img)) = (cloud.colors.as_mut(), color) {
                let g = (img.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
                c.push([g, g, g]);
            }
        }
    }
    Ok(cloud)
}

pub const DEFAULT_NEIGHBORS: usize = 16;
pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_MEDIAN_RATIO: f64 = 2.0;

/// Statistical filter: drops points whose mean distance to their `k`
/// nearest neighbors exceeds the population mean by more than `sigma`
/// standard deviations and is also more than [`DEFAULT_MEDIAN_RATIO`] times
/// the median. The second condition keeps grid borders and the natural tail
/// of an outlier-free cloud.
pub fn remove_outliers(cloud: &PointCloud, k: usize, sigma: f64) -> Result<PointCloud> {
    remove_outliers_with(cloud, k, sigma, DEFAULT_MEDIAN_RATIO)
}

/// [`remove_outliers`] with an explicit median ratio; 0 disables it.
pub fn remove_outliers_with(cloud: &PointCloud, k: usize, sigma: f64, median_ratio: f64) -> Result<PointCloud> {
    if k == 0 || !(sigma >= 0.0) || !(median_ratio >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "outlier filter needs k > 0 and non-negative sigma and ratio, got k={k}, sigma={sigma}, ratio={median_ratio}"
        )));
    }
    if cloud.len() <= k + 1 {
        warn!("outlier filter skipped: {} points for k = {k}", cloud.len());
        return Ok(cloud.clone());
    }
    let index = PointIndex::new(&cloud.points);
    let mean_dist: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            // first hit is the point itself
            let nn = index.nearest(p, k + 1);
            nn.iter().skip(1).map(|(d, _)| d).sum::<f64>() / k as f64
        })
        .collect();
    let n = mean_dist.len() as f64;
    let mu = mean_dist.iter().sum::<f64>() / n;
    let sd = (mean_dist.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = mean_dist.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let limit = (mu + sigma * sd).max(median_ratio * median);
    let keep: Vec<bool> = mean_dist.iter().map(|&d| d <= limit).collect();
    Ok(cloud.retain(&keep))
}
