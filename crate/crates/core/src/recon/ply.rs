//! Binary little-endian PLY output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::cloud::PointCloud;
use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

fn header(vertices: usize, color: bool, faces: Option<usize>) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\ncomment uwstereo\nelement vertex {vertices}\nproperty float x\nproperty float y\nproperty float z\n");
    if color {
        h += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    if let Some(f) = faces {
        h += &format!("element face {f}\nproperty list uchar int vertex_indices\n");
    }
    h + "end_header\n"
}

fn xyz(w: &mut impl Write, p: &nalgebra::Vector3<f64>) -> std::io::Result<()> {
    for v in [p.x, p.y, p.z] {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_cloud_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let run = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(header(cloud.len(), cloud.colors.is_some(), None).as_bytes())?;
        for (i, p) in cloud.points.iter().enumerate() {
            xyz(&mut w, p)?;
            if let Some(c) = &cloud.colors {
                w.write_all(&c[i])?;
            }
        }
        w.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn write_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    if mesh.vertices.len() > i32::MAX as usize {
        return Err(Error::InvalidArgument("mesh too large for 32-bit PLY indices".into()));
    }
    let run = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(header(mesh.vertices.len(), false, Some(mesh.triangles.len())).as_bytes())?;
        for p in &mesh.vertices {
            xyz(&mut w, p)?;
        }
        for t in &mesh.triangles {
            w.write_all(&[3])?;
            for &i in t {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    run().map_err(|e| Error::io(path, e))
}
