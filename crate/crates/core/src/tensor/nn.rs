use rand::Rng;

use super::graph::{Graph, Var};
use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch statistic in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named parameters and non-trainable buffers (running statistics) of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> ParamId {
        self.entries.push(Entry { name, tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let id = other
                .find(&e.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{}`", e.name)))?;
            let src = other.get(id);
            if src.shape() != e.tensor.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{}`: checkpoint shape {:?}, model shape {:?}",
                    e.name,
                    src.shape(),
                    e.tensor.shape()
                )));
            }
            e.tensor = src.clone();
        }
        Ok(())
    }
}

/// Uniform initialization in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-limit..=limit)).collect()).expect("shape product")
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// 3x3 same-size convolution with optional batch normalization and ReLU.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub bn: Option<BatchNormIds>,
    pub relu: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvLayer {
    /// Convolution + batch norm + ReLU block.
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::plain(store, name, cin, cout, true, rng);
        layer.bn = Some(BatchNormIds {
            gamma: store.add(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0)),
            beta: store.add(format!("{name}.bn.beta"), Tensor::zeros(&[cout])),
            running_mean: store.add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout])),
            running_var: store.add_buffer(format!("{name}.bn.running_var"), Tensor::full(&[cout], 1.0)),
        });
        layer
    }

    /// Convolution without normalization, optionally followed by ReLU.
    pub fn plain(store: &mut ParamStore, name: &str, cin: usize, cout: usize, relu: bool, rng: &mut impl Rng) -> Self {
        let kernel = glorot_uniform(&[cout, cin, 3, 3], cin * 9, cout * 9, rng);
        Self {
            kernel: store.add(format!("{name}.kernel"), kernel),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            bn: None,
            relu,
            in_channels: cin,
            out_channels: cout,
        }
    }

    /// Checks the stored tensors against the layer contract.
    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        let k = store.get(self.kernel).shape();
        if k != [self.out_channels, self.in_channels, 3, 3] {
            return Err(Error::Shape(format!("kernel {k:?} is not {}x{}x3x3", self.out_channels, self.in_channels)));
        }
        if let Some(bn) = &self.bn {
            if store.get(bn.running_var).data().iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidArgument("batch norm running variance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Records `relu(bn(conv(x)))` on the graph. In training mode batch
/// statistics normalize the output and are folded into the running averages.
pub fn conv2d_bn_relu(
    g: &mut Graph,
    store: &mut ParamStore,
    layer: &ConvLayer,
    x: Var,
    training: bool,
) -> Result<Var> {
    let k = g.param(store, layer.kernel)?;
    let b = g.param(store, layer.bias)?;
    let mut y = g.conv2d(x, k, b)?;
    if let Some(bn) = &layer.bn {
        let gamma = g.param(store, bn.gamma)?;
        let beta = g.param(store, bn.beta)?;
        if training {
            let (out, mean, var) = g.batch_norm(y, gamma, beta, BN_EPS)?;
            let count = {
                let (n, _, h, w) = g.value(out).dims4()?;
                (n * h * w) as f64
            };
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = store.get_mut(bn.running_mean).data_mut();
            rm.iter_mut().zip(&mean).for_each(|(r, m)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            let rv = store.get_mut(bn.running_var).data_mut();
            rv.iter_mut().zip(&var).for_each(|(r, v)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias);
            y = out;
        } else {
            // Inference BN is affine in the conv output: (y - mean) * inv * gamma + beta.
            let (n, c, h, w) = g.value(y).dims4()?;
            let hw = h * w;
            let expand = |vals: &[f64]| -> Tensor {
                let mut d = Vec::with_capacity(n * c * hw);
                for _ in 0..n {
                    for v in vals {
                        d.extend(std::iter::repeat_n(*v, hw));
                    }
                }
                Tensor::new(&[n, c, h, w], d).expect("expanded shape")
            };
            let inv: Vec<f64> = store.get(bn.running_var).data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mean_v = g.input(expand(store.get(bn.running_mean).data()))?;
            let inv_v = g.input(expand(&inv))?;
            let centered = g.sub(y, mean_v)?;
            let normed = g.mul(centered, inv_v)?;
            let gscale = broadcast_channels(g, gamma, n, h, w)?;
            let bshift = broadcast_channels(g, beta, n, h, w)?;
            let scaled = g.mul(normed, gscale)?;
            let shifted = g.add(scaled, bshift)?;
            y = shifted;
        }
    }
    if layer.relu {
        y = g.relu(y)?;
    }
    Ok(y)
}

fn broadcast_channels(g: &mut Graph, v: Var, n: usize, h: usize, w: usize) -> Result<Var> {
    let c = g.value(v).len();
    // ones(N x 1 x H x W) through a 1x1 map with weight v (C x 1) and zero bias
    let ones = g.input(Tensor::full(&[n, 1, h, w], 1.0))?;
    let wv = g.reshape(v, &[c, 1])?;
    let zero = g.input(Tensor::zeros(&[c]))?;
    g.pointwise(ones, wv, zero)
}

/// Tape-free inference path of [`conv2d_bn_relu`] using running statistics.
pub fn conv2d_bn_relu_infer(store: &ParamStore, layer: &ConvLayer, x: &Tensor) -> Result<Tensor> {
    let mut y = kernels::conv2d(x, store.get(layer.kernel), Some(store.get(layer.bias)))?;
    if let Some(bn) = &layer.bn {
        y = kernels::batch_norm_infer(
            &y,
            store.get(bn.gamma),
            store.get(bn.beta),
            store.get(bn.running_mean),
            store.get(bn.running_var),
            BN_EPS,
        )?;
    }
    if layer.relu {
        y = kernels::relu(&y);
    }
    Ok(y)
}

/// Per-location fully connected layer (`out x in` weight).
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fin: usize, fout: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot_uniform(&[fout, fin], fin, fout, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fout])),
            in_features: fin,
            out_features: fout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        g.pointwise(x, w, b)
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        kernels::pointwise(x, store.get(self.weight), store.get(self.bias))
    }
}
