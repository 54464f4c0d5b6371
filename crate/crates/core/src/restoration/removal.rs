//! Three-resolution residual restoration network.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::segmentation::{AugmentPolicy, JointTransform};
use crate::tensor::{
    conv2d_bn_relu, conv2d_bn_relu_infer, kernels, read_checkpoint, write_checkpoint, ConvLayer, Graph, LrSchedule,
    ParamStore, Sgd, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemovalConfig {
    pub channels: usize,
    /// Conv layers per resolution branch.
    pub layers: usize,
    pub seed: u64,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        Self { channels: 32, layers: 3, seed: 13 }
    }
}

impl RemovalConfig {
    pub fn desk() -> Self {
        Self { channels: 12, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.layers == 0 {
            return Err(Error::Config("removal network needs positive channels and layers".into()));
        }
        Ok(())
    }
}

/// Branches at quarter, half and full resolution, coarsest first. Each
/// branch sees its own downsampled image plus the upsampled output of the
/// coarser branch; a zero-initialized 3x3 head predicts a correction that is
/// added to the input.
#[derive(Clone, Debug)]
pub struct RemovalNet {
    config: RemovalConfig,
    pub store: ParamStore,
    pub branches: [Vec<ConvLayer>; 3],
    pub head: ConvLayer,
}

const CONFIG_RECORD: &str = "removal.config";

/// 2x2 box downsampling.
fn halve(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out[p * oh * ow + y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

impl RemovalNet {
    pub fn new(config: RemovalConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        store.add_buffer(CONFIG_RECORD, Tensor::new(&[2], vec![config.channels as f64, config.layers as f64])?);
        let c = config.channels;
        let mut branch = |store: &mut ParamStore, name: &str, first_in: usize| -> Vec<ConvLayer> {
            (0..config.layers)
                .map(|i| ConvLayer::new(store, &format!("{name}.{i}"), if i == 0 { first_in } else { c }, c, &mut rng))
                .collect()
        };
        let quarter = branch(&mut store, "quarter", 1);
        let half = branch(&mut store, "half", 1 + c);
        let full = branch(&mut store, "full", 1 + c);
        let head = ConvLayer::plain(&mut store, "head", c, 1, false, &mut rng);
        store.get_mut(head.kernel).data_mut().iter_mut().for_each(|v| *v = 0.0);
        Ok(Self { config, store, branches: [quarter, half, full], head })
    }

    pub fn config(&self) -> &RemovalConfig {
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
            .ok_or_else(|| Error::Format(format!("{} is not a restoration checkpoint", path.display())))?;
        let v = stored.get(id).data();
        if v.len() != 2 || v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
            return Err(Error::Format("malformed restoration config record".into()));
        }
        let mut net = Self::new(RemovalConfig { channels: v[0] as usize, layers: v[1] as usize, seed: 0 })?;
        net.store.load_from(&stored)?;
        Ok(net)
    }

    fn check(x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!("restoration input must be N x 1 x H x W with H, W multiples of 4, got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Restored `N x 1 x H x W` on the graph.
    pub fn forward(&mut self, g: &mut Graph, x: &Tensor, training: bool) -> Result<crate::tensor::Var> {
        Self::check(x)?;
        let half = halve(x)?;
        let quarter = halve(&half)?;
        let inputs = [g.input(quarter)?, g.input(half)?, g.input(x.clone())?];
        let mut carry = None;
        for (level, branch) in self.branches.iter().enumerate() {
            let mut y = match carry {
                None => inputs[level],
                Some(c) => {
                    let up = g.upsample2x(c)?;
                    g.concat_channels(inputs[level], up)?
                }
            };
            for layer in branch {
                y = conv2d_bn_relu(g, &mut self.store, layer, y, training)?;
            }
            carry = Some(y);
        }
        let correction = conv2d_bn_relu(g, &mut self.store, &self.head, carry.expect("three branches"), training)?;
        g.add(inputs[2], correction)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Self::check(x)?;
        let half = halve(x)?;
        let quarter = halve(&half)?;
        let inputs = [quarter, half, x.clone()];
        let mut carry: Option<Tensor> = None;
        for (level, branch) in self.branches.iter().enumerate() {
            let mut y = match carry {
                None => inputs[level].clone(),
                Some(c) => kernels::concat_channels(&inputs[level], &kernels::upsample2x(&c)?)?,
            };
            for layer in branch {
                y = conv2d_bn_relu_infer(&self.store, layer, &y)?;
            }
            carry = Some(y);
        }
        let correction = conv2d_bn_relu_infer(&self.store, &self.head, &carry.expect("three branches"))?;
        let data = x.data().iter().zip(correction.data()).map(|(a, b)| a + b).collect();
        Tensor::new(x.shape(), data)
    }
}

/// Restores one image; extents that are not multiples of 4 are padded by
/// edge replication and cropped back.
pub fn removal_forward(image: &Image, net: &RemovalNet) -> Result<Image> {
    let (w, h) = image.dims();
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("cannot restore an empty image".into()));
    }
    let padded = image.pad_to_multiple(4);
    let out = Image::from_tensor(&net.infer(&padded.to_tensor())?, 0, 0)?;
    out.crop(0, 0, w, h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for RemovalSchedule {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 8, learning_rate: 0.01, momentum: 0.9, seed: 4 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RemovalTrace {
    /// Mean squared error per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Applies the same random similarity transform to both images of each
/// pair, growing the set by the policy factor.
pub fn augment_pairs(pairs: &[(Image, Image)], policy: &AugmentPolicy) -> Result<Vec<(Image, Image)>> {
    policy.validate()?;
    let target = (pairs.len() as f64 * policy.factor).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut out = pairs.to_vec();
    let mut k = 0;
    while out.len() < target {
        let (a, b) = &pairs[k % pairs.len()];
        let t = JointTransform::random(policy, a.width(), a.height(), &mut rng);
        out.push((t.apply_image(a), t.apply_image(b)));
        k += 1;
    }
    Ok(out)
}

/// L2 training on `(degraded, clean)` pairs of equal extents.
pub fn train_removal(net: &mut RemovalNet, pairs: &[(Image, Image)], schedule: &RemovalSchedule) -> Result<RemovalTrace> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty restoration training set".into()));
    }
    if schedule.epochs == 0 || schedule.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size and epoch count must be positive".into()));
    }
    let dims = pairs[0].0.dims();
    for (i, (d, c)) in pairs.iter().enumerate() {
        if d.dims() != c.dims() || d.dims() != dims {
            return Err(Error::Shape(format!(
                "pair {i}: degraded {:?} and clean {:?} must match each other and {dims:?}",
                d.dims(),
                c.dims()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = Sgd::new(schedule.learning_rate, schedule.momentum)?;
    let lr = LrSchedule::two_step(schedule.learning_rate);
    let total = pairs.len().div_ceil(schedule.batch_size) * schedule.epochs;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = RemovalTrace::default();
    let mut step = 0;
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let xs: Vec<Tensor> = chunk.iter().map(|&i| pairs[i].0.pad_to_multiple(4).to_tensor()).collect();
            let ys: Vec<Tensor> = chunk.iter().map(|&i| pairs[i].1.pad_to_multiple(4).to_tensor()).collect();
            let mut g = Graph::new();
            let out = net.forward(&mut g, &Tensor::stack(&xs)?, true)?;
            let target = g.input(Tensor::stack(&ys)?)?;
            let loss = g.mse(out, target)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("restoration loss became {value} at epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            opt.lr = lr.rate(step, total);
            opt.step(&mut net.store, &grads)?;
            sum += value * chunk.len() as f64;
            step += 1;
        }
        let mean = sum / pairs.len() as f64;
        info!("restoration epoch {epoch}: mse {mean:.6}");
        trace.epoch_loss.push(mean);
    }
    Ok(trace)
}
