//! Two-branch Siamese feature extractor with a linear or fully connected
//! similarity head.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patches::extract_branches;
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_bn_relu, conv2d_bn_relu_infer, kernels, read_checkpoint, write_checkpoint, ConvLayer, Dense, Graph,
    ParamId, ParamStore, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Weighted inner product of the flattened fused features.
    Linear,
    /// Per-location two-layer perceptron on both features, averaged.
    Fcn,
}

impl Head {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lin" | "linear" => Ok(Head::Linear),
            "fcn" => Ok(Head::Fcn),
            other => Err(Error::InvalidArgument(format!("unknown similarity head `{other}` (expected lin or fcn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StereoConfig {
    /// Patch extent `P`; branch outputs are `P/2` wide.
    pub patch: usize,
    /// Convolution layers per branch.
    pub layers: usize,
    /// Channels per branch.
    pub channels: usize,
    /// Hidden width of the fully connected head.
    pub hidden: usize,
    pub head: Head,
    pub seed: u64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self { patch: 32, layers: 4, channels: 64, hidden: 64, head: Head::Linear, seed: 7 }
    }
}

impl StereoConfig {
    /// Reduced network used for training on a single CPU core.
    pub fn desk() -> Self {
        Self { patch: 16, layers: 3, channels: 16, hidden: 32, ..Self::default() }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch < 4 || self.patch % 2 != 0 {
            return Err(Error::Config(format!("patch extent must be even and at least 4, got {}", self.patch)));
        }
        if self.layers == 0 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config("layers, channels and hidden width must be positive".into()));
        }
        Ok(())
    }

    /// Spatial positions per branch output.
    pub fn positions(&self) -> usize {
        (self.patch / 2).pow(2)
    }

    /// Channels of the fused feature.
    pub fn fused_channels(&self) -> usize {
        2 * self.channels
    }

    fn encode(&self) -> Tensor {
        let head = match self.head {
            Head::Linear => 0.0,
            Head::Fcn => 1.0,
        };
        let vals = vec![self.patch as f64, self.layers as f64, self.channels as f64, self.hidden as f64, head];
        Tensor::new(&[5], vals).expect("config shape")
    }

    fn decode(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 5 || d.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Format("malformed stereo network configuration record".into()));
        }
        let head = match d[4] as u32 {
            0 => Head::Linear,
            1 => Head::Fcn,
            h => return Err(Error::Format(format!("unknown head code {h}"))),
        };
        let cfg = Self {
            patch: d[0] as usize,
            layers: d[1] as usize,
            channels: d[2] as usize,
            hidden: d[3] as usize,
            head,
            seed: 0,
        };
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum HeadParams {
    Linear { weight: ParamId },
    Fcn { hidden: Dense, out: Dense },
}

/// Shared-weight multi-scale patch network.
#[derive(Clone, Debug)]
pub struct StereoNet {
    config: StereoConfig,
    pub store: ParamStore,
    pub low: Vec<ConvLayer>,
    pub high: Vec<ConvLayer>,
    pub head: HeadParams,
}

const CONFIG_RECORD: &str = "stereo.config";

impl StereoNet {
    pub fn new(config: StereoConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        store.add_buffer(CONFIG_RECORD, config.encode());
        let c = config.channels;
        let mut branch = |store: &mut ParamStore, name: &str| -> Vec<ConvLayer> {
            (0..config.layers)
                .map(|i| ConvLayer::new(store, &format!("{name}.{i}"), if i == 0 { 1 } else { c }, c, &mut rng))
                .collect()
        };
        let low = branch(&mut store, "low");
        let high = branch(&mut store, "high");
        let fused = config.fused_channels();
        let head = match config.head {
            Head::Linear => {
                let n = fused * config.positions();
                // unit mean weighting: initial scores are feature correlations
                let weight = store.add("head.weight", Tensor::full(&[n], 1.0 / n as f64));
                HeadParams::Linear { weight }
            }
            Head::Fcn => HeadParams::Fcn {
                hidden: Dense::new(&mut store, "head.hidden", 2 * fused, config.hidden, &mut rng),
                out: Dense::new(&mut store, "head.out", config.hidden, 1, &mut rng),
            },
        };
        Ok(Self { config, store, low, high, head })
    }

    pub fn config(&self) -> &StereoConfig {
        &self.config
    }

    /// Freezes or releases both feature branches (head stays trainable).
    pub fn set_features_trainable(&mut self, trainable: bool) {
        for layer in self.low.iter().chain(&self.high) {
            self.store.set_trainable(layer.kernel, trainable);
            self.store.set_trainable(layer.bias, trainable);
            if let Some(bn) = layer.bn {
                self.store.set_trainable(bn.gamma, trainable);
                self.store.set_trainable(bn.beta, trainable);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(&self.store, BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let stored = read_checkpoint(BufReader::new(f))?;
        let record = stored
            .find(CONFIG_RECORD)
            .ok_or_else(|| Error::Format(format!("{} is not a stereo network checkpoint", path.display())))?;
        let config = StereoConfig::decode(stored.get(record))?;
        let mut net = Self::new(config)?;
        net.store.load_from(&stored)?;
        Ok(net)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let p = self.config.patch;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != p || shape[3] != p {
            return Err(Error::Shape(format!("expected N x 1 x {p} x {p} patches, got {shape:?}")));
        }
        Ok(())
    }

    /// Records both branches and returns their outputs `(low, high)`.
    pub fn branches(&mut self, g: &mut Graph, patches: Var, training: bool) -> Result<(Var, Var)> {
        self.check_input(g.value(patches).shape())?;
        let p = self.config.patch;
        let mut low = g.maxpool2x2(patches)?;
        let mut high = g.crop(patches, p / 4, p / 4, p / 2, p / 2)?;
        for layer in &self.low {
            low = conv2d_bn_relu(g, &mut self.store, layer, low, training)?;
        }
        for layer in &self.high {
            high = conv2d_bn_relu(g, &mut self.store, layer, high, training)?;
        }
        Ok((low, high))
    }

    /// Fused `N x 2C x P/2 x P/2` features on the graph.
    pub fn features(&mut self, g: &mut Graph, patches: Var, training: bool) -> Result<Var> {
        let (low, high) = self.branches(g, patches, training)?;
        g.concat_channels(low, high)
    }

    /// Similarity of paired fused features on the graph, shape `[N]`.
    pub fn score(&self, g: &mut Graph, f1: Var, f2: Var) -> Result<Var> {
        match self.head {
            HeadParams::Linear { weight } => {
                let w = g.param(&self.store, weight)?;
                g.weighted_inner(f1, f2, w)
            }
            HeadParams::Fcn { hidden, out } => {
                let n = g.value(f1).shape()[0];
                let cat = g.concat_channels(f1, f2)?;
                let h = hidden.forward(g, &self.store, cat)?;
                let h = g.relu(h)?;
                let o = out.forward(g, &self.store, h)?;
                let m = g.mean_spatial(o)?;
                g.reshape(m, &[n])
            }
        }
    }

    /// Tape-free fused features of `N x 1 x P x P` patches.
    pub fn infer_features(&self, patches: &Tensor) -> Result<Tensor> {
        self.check_input(patches.shape())?;
        let (mut low, mut high) = extract_branches(patches)?;
        for layer in &self.low {
            low = conv2d_bn_relu_infer(&self.store, layer, &low)?;
        }
        for layer in &self.high {
            high = conv2d_bn_relu_infer(&self.store, layer, &high)?;
        }
        kernels::concat_channels(&low, &high)
    }

    /// Head applied to one pair of flattened fused features (`2C x S`).
    pub fn score_features(&self, f1: &[f64], f2: &[f64]) -> f64 {
        match self.head {
            HeadParams::Linear { weight } => {
                self.store.get(weight).data().iter().zip(f1).zip(f2).map(|((w, a), b)| w * a * b).sum()
            }
            HeadParams::Fcn { hidden, out } => {
                let s = self.config.positions();
                let c = self.config.fused_channels();
                let w1 = self.store.get(hidden.weight).data();
                let b1 = self.store.get(hidden.bias).data();
                let w2 = self.store.get(out.weight).data();
                let b2 = self.store.get(out.bias).data()[0];
                let mut total = 0.0;
                for p in 0..s {
                    let mut o = b2;
                    for j in 0..hidden.out_features {
                        let row = &w1[j * 2 * c..(j + 1) * 2 * c];
                        let mut h = b1[j];
                        for k in 0..c {
                            h += row[k] * f1[k * s + p];
                        }
                        for k in 0..c {
                            h += row[c + k] * f2[k * s + p];
                        }
                        o += w2[j] * h.max(0.0);
                    }
                    total += o;
                }
                total / s as f64
            }
        }
    }

    /// Per-patch reference score: both patches run through the branches
    /// independently.
    pub fn score_patches(&self, left: &Tensor, right: &Tensor) -> Result<f64> {
        let f1 = self.infer_features(left)?;
        let f2 = self.infer_features(right)?;
        Ok(self.score_features(f1.data(), f2.data()))
    }

    /// Left-side half of the head, evaluated once per left pixel.
    pub fn prepare_left(&self, f: &[f64]) -> Vec<f64> {
        match self.head {
            HeadParams::Linear { weight } => self.store.get(weight).data().iter().zip(f).map(|(w, a)| w * a).collect(),
            HeadParams::Fcn { hidden, .. } => self.fcn_half(hidden, f, 0, true),
        }
    }

    /// Right-side half of the head, evaluated once per right pixel.
    pub fn prepare_right(&self, f: &[f64]) -> Vec<f64> {
        match self.head {
            HeadParams::Linear { .. } => f.to_vec(),
            HeadParams::Fcn { hidden, .. } => self.fcn_half(hidden, f, self.config.fused_channels(), false),
        }
    }

    // hidden pre-activation contribution of one side, `hidden x S`
    fn fcn_half(&self, hidden: Dense, f: &[f64], col0: usize, with_bias: bool) -> Vec<f64> {
        let s = self.config.positions();
        let c = self.config.fused_channels();
        let w1 = self.store.get(hidden.weight).data();
        let b1 = self.store.get(hidden.bias).data();
        let mut out = vec![0.0; hidden.out_features * s];
        for j in 0..hidden.out_features {
            let row = &w1[j * 2 * c + col0..j * 2 * c + col0 + c];
            let dst = &mut out[j * s..(j + 1) * s];
            if with_bias {
                dst.iter_mut().for_each(|v| *v = b1[j]);
            }
            for (k, wk) in row.iter().enumerate() {
                for (d, x) in dst.iter_mut().zip(&f[k * s..(k + 1) * s]) {
                    *d += wk * x;
                }
            }
        }
        out
    }

    /// Combines prepared halves into the score.
    pub fn score_prepared(&self, left: &[f64], right: &[f64]) -> f64 {
        match self.head {
            HeadParams::Linear { .. } => left.iter().zip(right).map(|(a, b)| a * b).sum(),
            HeadParams::Fcn { out, .. } => {
                let s = self.config.positions();
                let w2 = self.store.get(out.weight).data();
                let b2 = self.store.get(out.bias).data()[0];
                let mut total = 0.0;
                for (j, wj) in w2.iter().enumerate() {
                    let a = &left[j * s..(j + 1) * s];
                    let b = &right[j * s..(j + 1) * s];
                    total += wj * a.iter().zip(b).map(|(x, y)| (x + y).max(0.0)).sum::<f64>();
                }
                b2 + total / s as f64
            }
        }
    }
}
