use nalgebra::{Isometry3, Vector3};

use super::cloud::{PointCloud, PointIndex};
use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

/// Reference surface for known-pose evaluation.
#[derive(Clone, Debug)]
pub enum GroundTruth {
    /// Infinite plane through `point`.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    Mesh(TriangleMesh),
    Cloud(Vec<Vector3<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthBin {
    pub z_min: f64,
    pub z_max: f64,
    pub count: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub point_count: usize,
    /// Root mean square point-to-surface distance, meters.
    pub rmse: f64,
    pub per_depth: Vec<DepthBin>,
}

/// Closest point to `p` on triangle `abc`.
pub fn closest_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

enum Surface<'a> {
    Plane(Vector3<f64>, Vector3<f64>),
    Mesh { mesh: &'a TriangleMesh, centroids: PointIndex, reach: f64 },
    Cloud(PointIndex),
}

impl Surface<'_> {
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Surface::Plane(o, n) => (p - o).dot(n).abs(),
            Surface::Cloud(idx) => idx.nearest(p, 1)[0].0,
            Surface::Mesh { mesh, centroids, reach } => {
                // any triangle within distance r has its centroid within r + reach
                let mut k = 8;
                loop {
                    let near = centroids.nearest(p, k);
                    let mut best = f64::INFINITY;
                    for &(_, t) in &near {
                        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
                        best = best.min((closest_on_triangle(p, &a, &b, &c) - p).norm());
                    }
                    let farthest = near.last().map_or(f64::INFINITY, |n| n.0);
                    if near.len() == centroids.len() || farthest >= best + reach {
                        return best;
                    }
                    k *= 4;
                }
            }
        }
    }
}

/// Distances from the posed cloud to the reference, summarized overall and
/// in `depth_bins` equal-width depth slices.
pub fn evaluate_against_gt(cloud: &PointCloud, gt: &GroundTruth, pose: &Isometry3<f64>, depth_bins: usize) -> Result<EvalReport> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty point cloud".into()));
    }
    let surface = match gt {
        GroundTruth::Plane { point, normal } => {
            let n = normal
                .try_normalize(1e-12)
                .ok_or_else(|| Error::InvalidArgument("ground-truth plane normal is zero".into()))?;
            Surface::Plane(*point, n)
        }
        GroundTruth::Mesh(mesh) => {
            if mesh.triangles.is_empty() {
                return Err(Error::InvalidArgument("ground-truth mesh has no triangles".into()));
            }
            let mut reach: f64 = 0.0;
            let centroids: Vec<Vector3<f64>> = mesh
                .triangles
                .iter()
                .map(|t| {
                    let v = t.map(|i| mesh.vertices[i]);
                    let c = (v[0] + v[1] + v[2]) / 3.0;
                    reach = v.iter().fold(reach, |r, q| r.max((q - c).norm()));
                    c
                })
                .collect();
            Surface::Mesh { mesh, centroids: PointIndex::new(&centroids), reach }
        }
        GroundTruth::Cloud(points) => {
            if points.is_empty() {
                return Err(Error::InvalidArgument("ground-truth cloud is empty".into()));
            }
            Surface::Cloud(PointIndex::new(points))
        }
    };
    let posed: Vec<Vector3<f64>> = cloud.points.iter().map(|p| pose.transform_point(&(*p).into()).coords).collect();
    let sq: Vec<f64> = posed.iter().map(|p| surface.distance(p).powi(2)).collect();
    let rmse = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
    let z_lo = cloud.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_hi = cloud.points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let bins = depth_bins.max(1);
    let width = ((z_hi - z_lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut acc = vec![(0usize, 0.0); bins];
    for (p, e) in cloud.points.iter().zip(&sq) {
        let b = (((p.z - z_lo) / width) as usize).min(bins - 1);
        acc[b].0 += 1;
        acc[b].1 += e;
    }
    let per_depth = acc
        .iter()
        .enumerate()
        .map(|(i, &(count, s))| DepthBin {
            z_min: z_lo + i as f64 * width,
            z_max: z_lo + (i + 1) as f64 * width,
            count,
            rmse: if count == 0 { 0.0 } else { (s / count as f64).sqrt() },
        })
        .collect();
    Ok(EvalReport { point_count: cloud.len(), rmse, per_depth })
}
