//! Five-level encoder/decoder with skip connections.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::tensor::{
    conv2d_bn_relu, conv2d_bn_relu_infer, read_checkpoint, write_checkpoint, ConvLayer, Dense, Graph, LrSchedule,
    ParamStore, Sgd, Tensor, Var,
};

pub const LEVELS: usize = 5;

/// Input extents must be multiples of this (four 2x2 poolings).
pub const GRANULE: usize = 1 << (LEVELS - 1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    /// Channel width per resolution level, finest first.
    pub widths: [usize; LEVELS],
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { widths: [16, 32, 64, 128, 256], seed: 11 }
    }
}

impl UNetConfig {
    /// Narrow variant for single-core training.
    pub fn desk() -> Self {
        Self { widths: [8, 16, 32, 64, 128], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Config("segmentation channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// Two 3x3 conv + BN + ReLU layers per stage. The encoder has one stage per
/// level; the decoder upsamples from the coarsest level and has one stage
/// for each finer level, fed by the matching encoder output.
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    pub store: ParamStore,
    pub encoder: Vec<[ConvLayer; 2]>,
    pub decoder: Vec<[ConvLayer; 2]>,
    pub classifier: Dense,
}

const CONFIG_RECORD: &str = "unet.widths";

impl UNet {
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        store.add_buffer(CONFIG_RECORD, Tensor::new(&[LEVELS], config.widths.iter().map(|&w| w as f64).collect())?);
        let w = config.widths;
        let mut stage = |store: &mut ParamStore, name: String, cin: usize, cout: usize| {
            [
                ConvLayer::new(store, &format!("{name}.a"), cin, cout, &mut rng),
                ConvLayer::new(store, &format!("{name}.b"), cout, cout, &mut rng),
            ]
        };
        let mut encoder = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let cin = if l == 0 { 1 } else { w[l - 1] };
            encoder.push(stage(&mut store, format!("enc{l}"), cin, w[l]));
        }
        let mut decoder = Vec::with_capacity(LEVELS - 1);
        for l in (0..LEVELS - 1).rev() {
            decoder.push(stage(&mut store, format!("dec{l}"), w[l + 1] + w[l], w[l]));
        }
        let classifier = Dense::new(&mut store, "classifier", w[0], 2, &mut rng);
        Ok(Self { config, store, encoder, decoder, classifier })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(&self.store, BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let stored = read_checkpoint(BufReader::new(f))?;
        let id = stored
            .find(CONFIG_RECORD)
            .ok_or_else(|| Error::Format(format!("{} is not a segmentation checkpoint", path.display())))?;
        let vals = stored.get(id).data();
        if vals.len() != LEVELS || vals.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::Format("malformed segmentation width record".into()));
        }
        let mut widths = [0; LEVELS];
        widths.iter_mut().zip(vals).for_each(|(w, v)| *w = *v as usize);
        let mut net = Self::new(UNetConfig { widths, seed: 0 })?;
        net.store.load_from(&stored)?;
        Ok(net)
    }

    /// Two-class logits `N x 2 x H x W` on the graph.
    pub fn forward(&mut self, g: &mut Graph, x: Var, training: bool) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != 1 || h % GRANULE != 0 || w % GRANULE != 0 {
            return Err(Error::Shape(format!(
                "segmentation input must be N x 1 x H x W with H, W multiples of {GRANULE}, got {:?}",
                g.value(x).shape()
            )));
        }
        let mut skips = Vec::with_capacity(LEVELS);
        let mut y = x;
        for (l, stage) in self.encoder.iter().enumerate() {
            if l > 0 {
                y = g.maxpool2x2(y)?;
            }
            for layer in stage {
                y = conv2d_bn_relu(g, &mut self.store, layer, y, training)?;
            }
            skips.push(y);
        }
        for (k, stage) in self.decoder.iter().enumerate() {
            let level = LEVELS - 2 - k;
            let up = g.upsample2x(y)?;
            y = g.concat_channels(up, skips[level])?;
            for layer in stage {
                y = conv2d_bn_relu(g, &mut self.store, layer, y, training)?;
            }
        }
        self.classifier.forward(g, &self.store, y)
    }

    /// Tape-free logits.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        use crate::tensor::kernels;
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h % GRANULE != 0 || w % GRANULE != 0 {
            return Err(Error::Shape(format!("segmentation input {:?} not N x 1 x H x W in multiples of {GRANULE}", x.shape())));
        }
        let mut skips = Vec::with_capacity(LEVELS);
        let mut y = x.clone();
        for (l, stage) in self.encoder.iter().enumerate() {
            if l > 0 {
                y = kernels::maxpool2x2(&y)?.0;
            }
            for layer in stage {
                y = conv2d_bn_relu_infer(&self.store, layer, &y)?;
            }
            skips.push(y.clone());
        }
        for (k, stage) in self.decoder.iter().enumerate() {
            let level = LEVELS - 2 - k;
            y = kernels::concat_channels(&kernels::upsample2x(&y)?, &skips[level])?;
            for layer in stage {
                y = conv2d_bn_relu_infer(&self.store, layer, &y)?;
            }
        }
        self.classifier.infer(&self.store, &y)
    }
}

fn input_tensor(img: &Image) -> Tensor {
    img.map(|v| v - 0.5).to_tensor()
}

/// Target mask of an image: two-class argmax (ties to background). Extents
/// that are not multiples of 16 are padded by edge replication and the
/// prediction cropped back.
pub fn segment(image: &Image, net: &UNet) -> Result<Mask> {
    let (w, h) = image.dims();
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("cannot segment an empty image".into()));
    }
    let padded = image.pad_to_multiple(GRANULE);
    let logits = net.infer(&input_tensor(&padded))?;
    let pw = padded.width();
    let plane = padded.width() * padded.height();
    let d = logits.data();
    Ok(Mask::from_fn(w, h, |x, y| d[plane + y * pw + x] > d[y * pw + x]))
}

/// One-hot `1 x 2 x H x W` target (channel 0 background, 1 target).
fn one_hot(mask: &Mask) -> Tensor {
    let (w, h) = mask.dims();
    let mut data = vec![0.0; 2 * w * h];
    for (i, &b) in mask.bits().iter().enumerate() {
        data[if b { w * h + i } else { i }] = 1.0;
    }
    Tensor::new(&[1, 2, h, w], data).expect("mask extents")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Square training crop extent (multiple of 16); whole samples when `None`.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for SegmentationSchedule {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 8, learning_rate: 0.05, momentum: 0.9, crop: Some(256), seed: 3 }
    }
}

/// Mean cross-entropy per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentationTrace {
    pub epoch_loss: Vec<f64>,
}

fn crop_pair(img: &Image, mask: &Mask, size: usize, rng: &mut impl Rng) -> Result<(Image, Mask)> {
    let (w, h) = img.dims();
    if w < size || h < size {
        let p = img.pad_to_multiple(GRANULE);
        let m = Mask::from_fn(p.width(), p.height(), |x, y| mask.get(x.min(w - 1), y.min(h - 1)));
        return Ok((p, m));
    }
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    Ok((img.crop(x0, y0, size, size)?, Mask::from_fn(size, size, |x, y| mask.get(x0 + x, y0 + y))))
}

/// Softmax cross-entropy training with momentum SGD and a two-step decay.
/// Batches are formed from equally sized samples; a dataset holding a single
/// class is accepted with a warning.
pub fn train_segmentation(
    net: &mut UNet,
    data: &[(Image, Mask)],
    schedule: &SegmentationSchedule,
) -> Result<SegmentationTrace> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty segmentation training set".into()));
    }
    if schedule.epochs == 0 || schedule.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size and epoch count must be positive".into()));
    }
    if let Some(c) = schedule.crop {
        if c == 0 || c % GRANULE != 0 {
            return Err(Error::InvalidArgument(format!("training crop must be a positive multiple of {GRANULE}, got {c}")));
        }
    }
    for (img, mask) in data {
        if img.dims() != mask.dims() {
            return Err(Error::Shape(format!("image {:?} vs mask {:?}", img.dims(), mask.dims())));
        }
    }
    let targets: usize = data.iter().map(|(_, m)| m.count()).sum();
    let pixels: usize = data.iter().map(|(_, m)| m.width() * m.height()).sum();
    if targets == 0 || targets == pixels {
        warn!("segmentation training set contains a single class");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = Sgd::new(schedule.learning_rate, schedule.momentum)?;
    let lr = LrSchedule::two_step(schedule.learning_rate);
    let total = data.len().div_ceil(schedule.batch_size) * schedule.epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = SegmentationTrace::default();
    let mut step = 0;
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, mask) = &data[i];
                let (img, mask) = match schedule.crop {
                    Some(c) => crop_pair(img, mask, c, &mut rng)?,
                    None => {
                        let p = img.pad_to_multiple(GRANULE);
                        let (w, h) = img.dims();
                        let m = Mask::from_fn(p.width(), p.height(), |x, y| mask.get(x.min(w - 1), y.min(h - 1)));
                        (p, m)
                    }
                };
                xs.push(input_tensor(&img));
                ts.push(one_hot(&mask));
            }
            let mut g = Graph::new();
            let x = g.input(Tensor::stack(&xs)?)?;
            let logits = net.forward(&mut g, x, true)?;
            let loss = g.softmax_cross_entropy(logits, &Tensor::stack(&ts)?)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("segmentation loss became {value} at epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            opt.lr = lr.rate(step, total);
            opt.step(&mut net.store, &grads)?;
            sum += value * chunk.len() as f64;
            step += 1;
        }
        let mean = sum / data.len() as f64;
        info!("segmentation epoch {epoch}: cross-entropy {mean:.4}");
        trace.epoch_loss.push(mean);
    }
    Ok(trace)
}

/// Keeps the largest 4-connected target component.
pub fn keep_largest_component(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    let mut label = vec![0usize; w * h];
    let mut best = (0usize, 0usize);
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.bits()[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    Mask::from_fn(w, h, |x, y| best.0 != 0 && label[y * w + x] == best.0)
}
