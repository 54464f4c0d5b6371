//! Tape-free forward and backward kernels.
//!
//! The graph calls these for training; inference paths call them directly.

use super::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` over row-major buffers, where `op`
/// optionally transposes. `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: buffer extents checked above; strides describe the row-major
    // (optionally transposed) layouts of those buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_kernel(x: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    let (o, kc, kh, kw) = kernel.dims4().map_err(|_| {
        Error::Shape(format!("conv kernel must be out x in x 3 x 3, got {:?}", kernel.shape()))
    })?;
    if (kh, kw) != (3, 3) {
        return Err(Error::Shape(format!(
            "conv kernel spatial axes (2, 3) must be 3x3, got {kh}x{kw}"
        )));
    }
    if kc != c {
        return Err(Error::Shape(format!(
            "conv input channel axis 1 has {c} channels but kernel axis 1 expects {kc}"
        )));
    }
    Ok((n, c, h, w, o))
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, o) in out.iter_mut().enumerate() {
                        let sx = x_out as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x_out in 0..w {
                        let sx = x_out as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + x_out];
                        }
                    }
                }
            }
        }
    }
}

/// Same-size 3x3 convolution (zero padding 1, stride 1).
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, c, h, w, o) = check_kernel(x, kernel)?;
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::Shape(format!("conv bias has {} entries for {o} output channels", b.len())));
        }
    }
    let hw = h * w;
    let mut out = vec![0.0; n * o * hw];
    let mut cols = vec![0.0; c * 9 * hw];
    for s in 0..n {
        im2col(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, w, &mut cols);
        let dst = &mut out[s * o * hw..(s + 1) * o * hw];
        if let Some(b) = bias {
            for (oc, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.fill(b.data()[oc]);
            }
        }
        gemm(o, c * 9, hw, kernel.data(), false, &cols, false, 1.0, dst);
    }
    Tensor::new(&[n, o, h, w], out)
}

/// Returns `(d_input, d_kernel, d_bias)`.
pub fn conv2d_backward(x: &Tensor, kernel: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w, o) = check_kernel(x, kernel)?;
    let hw = h * w;
    let mut dx = vec![0.0; n * c * hw];
    let mut dk = vec![0.0; o * c * 9];
    let mut db = vec![0.0; o];
    let mut cols = vec![0.0; c * 9 * hw];
    let mut dcols = vec![0.0; c * 9 * hw];
    for s in 0..n {
        let g = &dy.data()[s * o * hw..(s + 1) * o * hw];
        for (oc, chunk) in g.chunks(hw).enumerate() {
            db[oc] += chunk.iter().sum::<f64>();
        }
        im2col(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, w, &mut cols);
        gemm(o, hw, c * 9, g, false, &cols, true, 1.0, &mut dk);
        gemm(c * 9, o, hw, kernel.data(), true, g, false, 0.0, &mut dcols);
        col2im(&dcols, c, h, w, &mut dx[s * c * hw..(s + 1) * c * hw]);
    }
    Ok((
        Tensor::new(&[n, c, h, w], dx)?,
        Tensor::new(kernel.shape(), dk)?,
        Tensor::new(&[o], db)?,
    ))
}

/// Per-location dense map (a 1x1 convolution): `weight` is `out x in`.
pub fn pointwise(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, wc) = match weight.shape() {
        [o, wc] => (*o, *wc),
        s => return Err(Error::Shape(format!("pointwise weight must be out x in, got {s:?}"))),
    };
    if wc != c || bias.len() != o {
        return Err(Error::Shape(format!(
            "pointwise weight {:?} / bias {:?} incompatible with input channel axis of {c}",
            weight.shape(),
            bias.shape()
        )));
    }
    let hw = h * w;
    let mut out = vec![0.0; n * o * hw];
    for s in 0..n {
        let dst = &mut out[s * o * hw..(s + 1) * o * hw];
        for (oc, chunk) in dst.chunks_mut(hw).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        gemm(o, c, hw, weight.data(), false, &x.data()[s * c * hw..(s + 1) * c * hw], false, 1.0, dst);
    }
    Tensor::new(&[n, o, h, w], out)
}

pub fn pointwise_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let o = weight.shape()[0];
    let hw = h * w;
    let mut dx = vec![0.0; n * c * hw];
    let mut dw = vec![0.0; o * c];
    let mut db = vec![0.0; o];
    for s in 0..n {
        let g = &dy.data()[s * o * hw..(s + 1) * o * hw];
        for (oc, chunk) in g.chunks(hw).enumerate() {
            db[oc] += chunk.iter().sum::<f64>();
        }
        gemm(o, hw, c, g, false, &x.data()[s * c * hw..(s + 1) * c * hw], true, 1.0, &mut dw);
        gemm(c, o, hw, weight.data(), true, g, false, 0.0, &mut dx[s * c * hw..(s + 1) * c * hw]);
    }
    Ok((Tensor::new(x.shape(), dx)?, Tensor::new(weight.shape(), dw)?, Tensor::new(&[o], db)?))
}

/// Saved state of a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

/// Training-mode batch normalization over the batch and spatial axes.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("batch norm over {c} channels given {} / {} affine terms", gamma.len(), beta.len())));
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for s in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(s * c + ci) * hw..][..hw];
            mean[ci] += plane.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for s in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(s * c + ci) * hw..][..hw];
            var[ci] += plane.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * hw;
            for i in base..base + hw {
                let xh = (x.data()[i] - mean[ci]) * inv_std[ci];
                xhat[i] = xh;
                y[i] = gamma.data()[ci] * xh + beta.data()[ci];
            }
        }
    }
    Ok((Tensor::new(x.shape(), y)?, BatchNormCache { xhat, inv_std, mean, var }))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(
    shape: &[usize],
    gamma: &Tensor,
    cache: &BatchNormCache,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = match shape {
        [n, c, h, w] => (*n, *c, *h, *w),
        _ => return Err(Error::Shape(format!("batch norm shape {shape:?}"))),
    };
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * hw;
            for i in base..base + hw {
                dbeta[ci] += dy.data()[i];
                dgamma[ci] += dy.data()[i] * cache.xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * hw;
            let k = gamma.data()[ci] * cache.inv_std[ci] / count;
            for i in base..base + hw {
                dx[i] = k * (count * dy.data()[i] - dbeta[ci] - cache.xhat[i] * dgamma[ci]);
            }
        }
    }
    Ok((Tensor::new(shape, dx)?, Tensor::new(&[c], dgamma)?, Tensor::new(&[c], dbeta)?))
}

pub fn batch_norm_infer(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut y = x.data().to_vec();
    for s in 0..n {
        for ci in 0..c {
            let scale = gamma.data()[ci] / (running_var.data()[ci] + eps).sqrt();
            let shift = beta.data()[ci] - running_mean.data()[ci] * scale;
            for v in &mut y[(s * c + ci) * hw..][..hw] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::new(x.shape(), y)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Non-overlapping 2x2 max pooling. Returns the output and, per output cell,
/// the flat input index of the selected maximum (first maximum on ties).
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even spatial extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let d = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let i0 = base + 2 * y * w + 2 * xo;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, arg))
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                dst[y * ow + xo] = src[(y / 2) * w + xo / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn upsample2x_backward(dy: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = dy.dims4()?;
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &dy.data()[plane * oh * ow..][..oh * ow];
        let dst = &mut dx[plane * h * w..][..h * w];
        for y in 0..oh {
            for xo in 0..ow {
                dst[(y / 2) * w + xo / 2] += src[y * ow + xo];
            }
        }
    }
    Tensor::new(&[n, c, h, w], dx)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "channel concat needs equal batch/height/width axes (0, 2, 3): {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (la + lb));
    for s in 0..n {
        out.extend_from_slice(&a.data()[s * la..(s + 1) * la]);
        out.extend_from_slice(&b.data()[s * lb..(s + 1) * lb]);
    }
    Tensor::new(&[n, ca + cb, h, w], out)
}

/// Inverse of [`concat_channels`]: splits after `first` channels.
pub fn split_channels(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    if first > c {
        return Err(Error::Shape(format!("cannot split {c} channels after {first}")));
    }
    let (la, lb) = (first * h * w, (c - first) * h * w);
    let mut a = Vec::with_capacity(n * la);
    let mut b = Vec::with_capacity(n * lb);
    for s in 0..n {
        let sample = &x.data()[s * (la + lb)..(s + 1) * (la + lb)];
        a.extend_from_slice(&sample[..la]);
        b.extend_from_slice(&sample[la..]);
    }
    Ok((Tensor::new(&[n, first, h, w], a)?, Tensor::new(&[n, c - first, h, w], b)?))
}

/// Spatial crop `[top, top+height) x [left, left+width)`.
pub fn crop(x: &Tensor, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if top + height > h || left + width > w {
        return Err(Error::Shape(format!(
            "crop {height}x{width} at ({top}, {left}) exceeds spatial axes {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(n * c * height * width);
    for plane in 0..n * c {
        for y in top..top + height {
            let row = &x.data()[plane * h * w + y * w..][..w];
            out.extend_from_slice(&row[left..left + width]);
        }
    }
    Tensor::new(&[n, c, height, width], out)
}

pub fn crop_backward(
    input_shape: &[usize],
    top: usize,
    left: usize,
    dy: &Tensor,
) -> Result<Tensor> {
    let (_, _, h, w) = match input_shape {
        [n, c, h, w] => (*n, *c, *h, *w),
        _ => return Err(Error::Shape(format!("crop input shape {input_shape:?}"))),
    };
    let (n, c, ch, cw) = dy.dims4()?;
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for y in 0..ch {
            let src = &dy.data()[plane * ch * cw + y * cw..][..cw];
            let dst = &mut dx[plane * h * w + (y + top) * w + left..][..cw];
            dst.copy_from_slice(src);
        }
    }
    Tensor::new(input_shape, dx)
}

/// Softmax over the channel axis of a rank-4 tensor.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = x.data().to_vec();
    for s in 0..n {
        for p in 0..hw {
            let idx = |ci: usize| (s * c + ci) * hw + p;
            let m = (0..c).map(|ci| out[idx(ci)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ci in 0..c {
                let e = (out[idx(ci)] - m).exp();
                out[idx(ci)] = e;
                z += e;
            }
            for ci in 0..c {
                out[idx(ci)] /= z;
            }
        }
    }
    Tensor::new(x.shape(), out)
}
