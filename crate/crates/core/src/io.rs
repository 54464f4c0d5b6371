//! Image, float-map and correspondence-map files.
//!
//! PFM files are little-endian (negative scale), rows stored bottom to top.
//! Invalid values are written as negative infinity.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Reads an 8- or 16-bit grayscale (or color, converted to luma) PNG into
/// `[0, 1]` intensities.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    Image::from_vec(w as usize, h as usize, luma.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
}

pub fn write_png8(path: &Path, img: &Image) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    )
    .expect("buffer length matches extents");
    buf.save(path).map_err(Error::from)
}

pub fn write_png16(path: &Path, img: &Image) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect(),
    )
    .expect("buffer length matches extents");
    buf.save(path).map_err(Error::from)
}

/// Masks are 8-bit: 0 background, 255 target.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let img = Image::from_fn(mask.width(), mask.height(), |x, y| if mask.get(x, y) { 1.0 } else { 0.0 });
    write_png8(path, &img)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_png(path)?;
    Ok(Mask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) >= 0.5))
}

fn write_pfm_planes(path: &Path, width: usize, height: usize, channels: &[&[f64]]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let tag = if channels.len() == 1 { "Pf" } else { "PF" };
    let mut body = || -> std::io::Result<()> {
        write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
        for y in (0..height).rev() {
            for x in 0..width {
                for ch in channels {
                    w.write_all(&(ch[y * width + x] as f32).to_le_bytes())?;
                }
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Single-channel 32-bit float map.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!("{width}x{height} float map given {} values", values.len())));
    }
    write_pfm_planes(path, width, height, &[values])
}

/// Returns `(width, height, channels, interleaved values)`.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    let mut next_token_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    let channels = match next_token_line(&mut r)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("{}: not a PFM file (header {other:?})", path.display()))),
    };
    let dims = next_token_line(&mut r)?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (width, height) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(Error::Format(format!("{}: bad PFM extents {dims:?}", path.display()))),
    };
    let scale: f64 = next_token_line(&mut r)?
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad PFM scale", path.display())))?;
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let mut out = vec![0.0; width * height * channels];
    for (i, c) in raw.chunks_exact(4).enumerate() {
        let b: [u8; 4] = c.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let row = i / (width * channels);
        let rest = i % (width * channels);
        out[(height - 1 - row) * width * channels + rest] = v as f64;
    }
    Ok((width, height, channels, out))
}

/// Dense correspondence map stored as a three-channel PFM: display x,
/// display y, and a zero padding channel (PFM has no two-channel variant).
pub fn write_correspondence_map(path: &Path, width: usize, height: usize, xs: &[f64], ys: &[f64]) -> Result<()> {
    let zeros = vec![0.0; width * height];
    write_pfm_planes(path, width, height, &[xs, ys, &zeros])
}

pub fn read_correspondence_map(path: &Path) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    let (w, h, c, vals) = read_pfm(path)?;
    if c != 3 {
        return Err(Error::Format(format!("{}: correspondence map needs 3 channels", path.display())));
    }
    let xs = vals.iter().step_by(3).copied().collect();
    let ys = vals.iter().skip(1).step_by(3).copied().collect();
    Ok((w, h, xs, ys))
}
