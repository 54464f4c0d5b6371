use std::collections::BTreeMap;

use super::kernels::{self, BatchNormCache};
use super::nn::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Variable,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Conv { x: Var, kernel: Var, bias: Var },
    Pointwise { x: Var, weight: Var, bias: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BatchNormCache },
    Relu(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample(Var),
    Concat(Var, Var),
    Crop { x: Var, top: usize, left: usize },
    WeightedInner { a: Var, b: Var, w: Var },
    MeanSpatial(Var),
    Reshape(Var),
    SliceSamples { x: Var, start: usize },
    Hinge { plus: Var, minus: Var, margin: f64 },
    Sum(Var),
    Mean(Var),
    SoftmaxCe { logits: Var, target: Tensor, probs: Tensor },
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one reverse sweep.
///
/// A graph is built per training step and dropped afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Gradient of `id`, zero-filled when the loss does not reach it.
    pub fn get_or_zero(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.by_param
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    /// Global L2 norm across all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite forward value of shape {:?}",
                value.shape()
            )));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Input, false)
    }

    /// Free leaf whose gradient is recorded (used for input sensitivities).
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Variable, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * factor);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, factor), ng)
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(kernel), Some(self.value(bias)))?;
        let ng = self.ng(x) || self.ng(kernel) || self.ng(bias);
        self.push(v, Op::Conv { x, kernel, bias }, ng)
    }

    pub fn pointwise(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let v = kernels::pointwise(self.value(x), self.value(weight), self.value(bias))?;
        let ng = self.ng(x) || self.ng(weight) || self.ng(bias);
        self.push(v, Op::Pointwise { x, weight, bias }, ng)
    }

    /// Training-mode batch normalization; returns the output and the batch
    /// mean and biased variance per channel.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (v, cache) = kernels::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let (mean, var) = (cache.mean.clone(), cache.var.clone());
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let out = self.push(v, Op::BatchNorm { x, gamma, beta, cache }, ng)?;
        Ok((out, mean, var))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = kernels::relu(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = kernels::maxpool2x2(self.value(x))?;
        let ng = self.ng(x);
        self.push(v, Op::MaxPool { x, argmax }, ng)
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let v = kernels::upsample2x(self.value(x))?;
        let ng = self.ng(x);
        self.push(v, Op::Upsample(x), ng)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::concat_channels(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Concat(a, b), ng)
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        let v = kernels::crop(self.value(x), top, left, height, width)?;
        let ng = self.ng(x);
        self.push(v, Op::Crop { x, top, left }, ng)
    }

    /// Per-sample `sum_i w_i a_i b_i` where `a`, `b` are `N x ...` and `w`
    /// matches one sample. Output shape `[N]`.
    pub fn weighted_inner(&mut self, a: Var, b: Var, w: Var) -> Result<Var> {
        self.same_shape(a, b, "weighted inner product")?;
        let ta = self.value(a);
        let n = *ta.shape().first().ok_or_else(|| Error::Shape("weighted inner product of a scalar".into()))?;
        let per = ta.len() / n.max(1);
        let tw = self.value(w);
        if tw.len() != per {
            return Err(Error::Shape(format!(
                "head weight of {} entries for samples of {per} features",
                tw.len()
            )));
        }
        let tb = self.value(b);
        let scores = (0..n)
            .map(|s| {
                let r = s * per..(s + 1) * per;
                ta.data()[r.clone()]
                    .iter()
                    .zip(&tb.data()[r])
                    .zip(tw.data())
                    .map(|((x, y), k)| x * y * k)
                    .sum()
            })
            .collect();
        let ng = self.ng(a) || self.ng(b) || self.ng(w);
        self.push(Tensor::new(&[n], scores)?, Op::WeightedInner { a, b, w }, ng)
    }

    /// Spatial mean: `N x C x H x W` to `N x C x 1 x 1`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let data = self.value(x).data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        let ng = self.ng(x);
        self.push(Tensor::new(&[n, c, 1, 1], data)?, Op::MeanSpatial(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        self.push(v, Op::Reshape(x), ng)
    }

    /// Batch entries `start..start + count` of a tensor whose first axis is
    /// the batch.
    pub fn slice_samples(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().first().ok_or_else(|| Error::Shape("slice of a scalar".into()))?;
        if start + count > n || count == 0 {
            return Err(Error::Shape(format!("slice {start}..{} of a batch of {n}", start + count)));
        }
        let per = t.len() / n;
        let mut shape = t.shape().to_vec();
        shape[0] = count;
        let v = Tensor::new(&shape, t.data()[start * per..(start + count) * per].to_vec())?;
        let ng = self.ng(x);
        self.push(v, Op::SliceSamples { x, start }, ng)
    }

    /// Elementwise `max(0, minus - plus + margin)`.
    pub fn hinge(&mut self, plus: Var, minus: Var, margin: f64) -> Result<Var> {
        if margin < 0.0 {
            return Err(Error::InvalidArgument(format!("hinge margin must be non-negative, got {margin}")));
        }
        self.same_shape(plus, minus, "hinge")?;
        let v = self.zip(plus, minus, |p, m| (m - p + margin).max(0.0));
        let ng = self.ng(plus) || self.ng(minus);
        self.push(v, Op::Hinge { plus, minus, margin }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean per-pixel cross-entropy of channel-softmax `logits` against a
    /// one-hot `target` of the same shape.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let lt = self.value(logits);
        if lt.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "logits {:?} vs target mask {:?}",
                lt.shape(),
                target.shape()
            )));
        }
        let (n, c, h, w) = lt.dims4()?;
        let hw = h * w;
        for s in 0..n {
            for p in 0..hw {
                let mut ones = 0;
                for ci in 0..c {
                    let v = target.data()[(s * c + ci) * hw + p];
                    if v == 1.0 {
                        ones += 1;
                    } else if v != 0.0 {
                        ones = usize::MAX;
                        break;
                    }
                }
                if ones != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "target mask is not one-hot at sample {s}, pixel {p}"
                    )));
                }
            }
        }
        let probs = kernels::softmax_channels(lt)?;
        let mut loss = 0.0;
        for (i, &t) in target.data().iter().enumerate() {
            if t == 1.0 {
                // log-softmax computed directly for accuracy at large gaps
                let s = i / (c * hw);
                let p = i % hw;
                let col = (0..c).map(|ci| lt.data()[(s * c + ci) * hw + p]);
                let m = col.clone().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + col.map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - lt.data()[i];
            }
        }
        loss /= (n * hw) as f64;
        let ng = self.ng(logits);
        self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, target: target.clone(), probs }, ng)
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ta.len() as f64;
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(s), Op::Mse(a, b), ng)
    }

    /// Reverse sweep from a scalar `loss`. Stores gradients on every node that
    /// needs one and returns the parameter gradients (summed over reuse).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let gt = Tensor::new(self.nodes[i].value.shape(), g.clone())?;
            self.propagate(i, &gt, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut out = Gradients::default();
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at graph node {i}")));
            }
            if let Op::Param(id) = self.nodes[i].op {
                match out.by_param.get_mut(&id) {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.by_param.insert(id, Tensor::new(self.nodes[i].value.shape(), g.clone())?);
                    }
                }
            }
            self.nodes[i].value.set_grad(g)?;
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut acc = |v: Var, d: &[f64]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(d.to_vec()),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Input | Op::Variable | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.data());
                acc(*b, g.data());
            }
            Op::Sub(a, b) => {
                acc(*a, g.data());
                let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                acc(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.data().iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                acc(*a, &da);
                acc(*b, &db);
            }
            Op::Scale(a, f) => {
                let d: Vec<f64> = g.data().iter().map(|v| v * f).collect();
                acc(*a, &d);
            }
            Op::Conv { x, kernel, bias } => {
                let (dx, dk, db) = kernels::conv2d_backward(val(*x), val(*kernel), g)?;
                acc(*x, dx.data());
                acc(*kernel, dk.data());
                acc(*bias, db.data());
            }
            Op::Pointwise { x, weight, bias } => {
                let (dx, dw, db) = kernels::pointwise_backward(val(*x), val(*weight), g)?;
                acc(*x, dx.data());
                acc(*weight, dw.data());
                acc(*bias, db.data());
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (dx, dg, db) = kernels::batch_norm_backward(val(*x).shape(), val(*gamma), cache, g)?;
                acc(*x, dx.data());
                acc(*gamma, dg.data());
                acc(*beta, db.data());
            }
            Op::Relu(x) => {
                let d: Vec<f64> =
                    g.data().iter().zip(val(*x).data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
                acc(*x, &d);
            }
            Op::MaxPool { x, argmax } => {
                let mut d = vec![0.0; val(*x).len()];
                for (gv, &src) in g.data().iter().zip(argmax) {
                    d[src] += gv;
                }
                acc(*x, &d);
            }
            Op::Upsample(x) => {
                let d = kernels::upsample2x_backward(g)?;
                acc(*x, d.data());
            }
            Op::Concat(a, b) => {
                let first = val(*a).shape()[1];
                let (da, db) = kernels::split_channels(g, first)?;
                acc(*a, da.data());
                acc(*b, db.data());
            }
            Op::Crop { x, top, left } => {
                let d = kernels::crop_backward(val(*x).shape(), *top, *left, g)?;
                acc(*x, d.data());
            }
            Op::WeightedInner { a, b, w } => {
                let (ta, tb, tw) = (val(*a), val(*b), val(*w));
                let n = g.len();
                let per = tw.len();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                let mut dw = vec![0.0; per];
                for s in 0..n {
                    let gs = g.data()[s];
                    for k in 0..per {
                        let j = s * per + k;
                        da[j] = gs * tw.data()[k] * tb.data()[j];
                        db[j] = gs * tw.data()[k] * ta.data()[j];
                        dw[k] += gs * ta.data()[j] * tb.data()[j];
                    }
                }
                acc(*a, &da);
                acc(*b, &db);
                acc(*w, &dw);
            }
            Op::MeanSpatial(x) => {
                let (_, _, h, w) = val(*x).dims4()?;
                let hw = h * w;
                let d: Vec<f64> = g.data().iter().flat_map(|gv| std::iter::repeat_n(gv / hw as f64, hw)).collect();
                acc(*x, &d);
            }
            Op::Reshape(x) => acc(*x, g.data()),
            Op::SliceSamples { x, start } => {
                let t = val(*x);
                let per = t.len() / t.shape()[0];
                let mut d = vec![0.0; t.len()];
                d[start * per..start * per + g.len()].copy_from_slice(g.data());
                acc(*x, &d);
            }
            Op::Hinge { plus, minus, margin } => {
                let (tp, tm) = (val(*plus), val(*minus));
                let mut dp = vec![0.0; tp.len()];
                let mut dm = vec![0.0; tm.len()];
                for k in 0..tp.len() {
                    // Subgradient 0 at the kink keeps margin-satisfied pairs inert.
                    if tm.data()[k] - tp.data()[k] + margin > 0.0 {
                        dp[k] = -g.data()[k];
                        dm[k] = g.data()[k];
                    }
                }
                acc(*plus, &dp);
                acc(*minus, &dm);
            }
            Op::Sum(x) => {
                let d = vec![g.item(); val(*x).len()];
                acc(*x, &d);
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                let d = vec![g.item() / n as f64; n];
                acc(*x, &d);
            }
            Op::SoftmaxCe { logits, target, probs } => {
                let (n, _, h, w) = probs.dims4()?;
                let scale = g.item() / (n * h * w) as f64;
                let d: Vec<f64> = probs.data().iter().zip(target.data()).map(|(p, t)| (p - t) * scale).collect();
                acc(*logits, &d);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let k = 2.0 * g.item() / ta.len() as f64;
                let da: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| k * (x - y)).collect();
                let db: Vec<f64> = da.iter().map(|v| -v).collect();
                acc(*a, &da);
                acc(*b, &db);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w).unwrap();
        let xv = g.input(x.clone()).unwrap();
        let p = g.mul(wv, xv).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), x.data());
        assert!(g.grad(xv).is_none());
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let wv = g.param(&store, w).unwrap();
        let neg = g.scale(wv, -1.0).unwrap();
        let r = g.relu(neg).unwrap();
        let loss = g.sum(r).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(1.0));
        let unused = store.add("unused", Tensor::zeros(&[2, 2]));
        let mut g = Graph::new();
        let v = g.param(&store, used).unwrap();
        let loss = g.sum(v).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zero(unused, &store), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let v = g.variable(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.backward(v), Err(Error::Shape(_))));
    }

    #[test]
    fn reused_param_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let a = g.param(&store, w).unwrap();
        let b = g.param(&store, w).unwrap();
        let p = g.mul(a, b).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), 6.0);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g = Graph::new();
        let uniform = g.variable(Tensor::zeros(&[1, 2, 2, 2])).unwrap();
        let mut target = Tensor::zeros(&[1, 2, 2, 2]);
        target.data_mut()[..4].fill(1.0);
        let l = g.softmax_cross_entropy(uniform, &target).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let mut logits = Tensor::zeros(&[1, 2, 2, 2]);
        logits.data_mut()[..4].fill(20.0);
        let confident = g.variable(logits).unwrap();
        let l = g.softmax_cross_entropy(confident, &target).unwrap();
        assert!(g.value(l).item() < 1e-3);

        let mut bad = target.clone();
        bad.data_mut()[4] = 1.0;
        assert!(matches!(g.softmax_cross_entropy(confident, &bad), Err(Error::InvalidArgument(_))));
    }
}
