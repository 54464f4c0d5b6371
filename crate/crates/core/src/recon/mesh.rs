use nalgebra::Vector3;

use crate::rig::StereoRig;
use crate::stereo::DisparityMap;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Unit normal of triangle `i` (zero for degenerate faces).
    pub fn normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangles[i].map(|k| self.vertices[k]);
        (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_else(Vector3::zeros)
    }
}

/// Two triangles per pixel quad with four valid corners; triangles with an
/// edge longer than `max_edge` meters are dropped.
pub fn grid_mesh(map: &DisparityMap, rig: &StereoRig, max_edge: f64) -> TriangleMesh {
    let (w, h) = (map.width(), map.height());
    let mut mesh = TriangleMesh::default();
    let mut vertex = vec![usize::MAX; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(p) = map.get(x, y).and_then(|d| rig.triangulate(x as f64, y as f64, d)) {
                vertex[y * w + x] = mesh.vertices.len();
                mesh.vertices.push(p);
            }
        }
    }
    let short = |m: &TriangleMesh, t: [usize; 3]| {
        (0..3).all(|i| (m.vertices[t[i]] - m.vertices[t[(i + 1) % 3]]).norm() <= max_edge)
    };
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let q = [vertex[y * w + x], vertex[y * w + x + 1], vertex[(y + 1) * w + x], vertex[(y + 1) * w + x + 1]];
            if q.contains(&usize::MAX) {
                continue;
            }
            // counter-clockwise seen from the camera (y down, z forward)
            for t in [[q[0], q[2], q[1]], [q[1], q[2], q[3]]] {
                if short(&mesh, t) {
                    mesh.triangles.push(t);
                }
            }
        }
    }
    mesh
}
