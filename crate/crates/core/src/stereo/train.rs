//! Hinge-loss training of the patch network.

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::StereoNet;
use super::patches::{jitter_brightness, sample_patch, standardize, Augmentation, PatchWarp};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Graph, LrSchedule, Sgd, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

/// Two `1 x 1 x P x P` patches from the same rectified row.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub left: Tensor,
    pub right: Tensor,
    pub label: Label,
}

/// A positive and a negative pair sharing their left patch; the unit the
/// hinge loss compares.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchExample {
    pub left: Tensor,
    pub positive: Tensor,
    pub negative: Tensor,
}

impl PatchExample {
    pub fn pairs(&self) -> [PatchPair; 2] {
        [
            PatchPair { left: self.left.clone(), right: self.positive.clone(), label: Label::Positive },
            PatchPair { left: self.left.clone(), right: self.negative.clone(), label: Label::Negative },
        ]
    }
}

/// Groups pairs into hinge examples: each positive is matched with the next
/// unused negative that has the identical left patch.
pub fn examples_from_pairs(pairs: &[PatchPair]) -> Result<Vec<PatchExample>> {
    let mut used = vec![false; pairs.len()];
    let mut out = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.label != Label::Positive {
            continue;
        }
        let j = (0..pairs.len())
            .find(|&j| !used[j] && pairs[j].label == Label::Negative && pairs[j].left == p.left)
            .ok_or_else(|| Error::InvalidArgument(format!("positive pair {i} has no negative with the same left patch")))?;
        used[j] = true;
        out.push(PatchExample { left: p.left.clone(), positive: p.right.clone(), negative: pairs[j].right.clone() });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("training needs both positive and negative pairs".into()));
    }
    Ok(out)
}

/// Default distance band, in pixels, between a negative patch and the true
/// match.
pub const NEGATIVE_BAND: (f64, f64) = (2.0, 10.0);

/// Where an example was cut: left patch center and the right-image columns
/// of its positive and negative partners, all on row `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSite {
    pub x: usize,
    pub y: usize,
    pub positive_x: f64,
    pub negative_x: f64,
}

/// Draws examples from a rectified pair with known disparity (non-finite
/// where unknown). Negatives sit 2 to 10 pixels away from the true match
/// along the same row, on a random side.
pub fn sample_examples(
    left: &Image,
    right: &Image,
    disparity: &Image,
    patch: usize,
    count: usize,
    augmentation: &Augmentation,
    rng: &mut impl Rng,
) -> Result<Vec<PatchExample>> {
    Ok(sample_sited_examples(left, right, disparity, patch, count, augmentation, NEGATIVE_BAND, rng)?
        .into_iter()
        .map(|(_, e)| e)
        .collect())
}

/// [`sample_examples`] with an explicit negative band, also reporting
/// where each example came from.
#[allow(clippy::too_many_arguments)]
pub fn sample_sited_examples(
    left: &Image,
    right: &Image,
    disparity: &Image,
    patch: usize,
    count: usize,
    augmentation: &Augmentation,
    band: (f64, f64),
    rng: &mut impl Rng,
) -> Result<Vec<(PatchSite, PatchExample)>> {
    if left.dims() != right.dims() || left.dims() != disparity.dims() {
        return Err(Error::Shape("stereo pair and disparity must share dimensions".into()));
    }
    if !(band.0 > 0.0 && band.1 >= band.0) {
        return Err(Error::InvalidArgument(format!("negative offset band {band:?} must be positive and ordered")));
    }
    let (left, right) = (standardize(left), standardize(right));
    let (w, h) = left.dims();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 50 * count + 1000 {
            return Err(Error::InvalidArgument(format!(
                "could only place {} of {count} training examples; too little valid disparity",
                out.len()
            )));
        }
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let d = disparity.get(x, y);
        if !d.is_finite() {
            continue;
        }
        let offset = rng.random_range(band.0..=band.1) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let warp = PatchWarp::random(augmentation, rng);
        let (xf, yf) = (x as f64, y as f64);
        let Some(mut l) = sample_patch(&left, xf, yf, patch, warp) else { continue };
        let Some(mut p) = sample_patch(&right, xf - d, yf, patch, warp) else { continue };
        let n = sample_patch(&right, xf - d - offset, yf, patch, warp)
            .map(|n| (n, xf - d - offset))
            .or_else(|| sample_patch(&right, xf - d + offset, yf, patch, warp).map(|n| (n, xf - d + offset)));
        let Some((mut n, negative_x)) = n else { continue };
        jitter_brightness(&mut l, augmentation, rng);
        jitter_brightness(&mut p, augmentation, rng);
        jitter_brightness(&mut n, augmentation, rng);
        out.push((PatchSite { x, y, positive_x: xf - d, negative_x }, PatchExample { left: l, positive: p, negative: n }));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub margin: f64,
    pub seed: u64,
    /// Trains only the similarity head, keeping both branches fixed.
    pub freeze_features: bool,
}

impl Default for StereoSchedule {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.003,
            momentum: 0.9,
            margin: 0.2,
            seed: 1,
            freeze_features: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    /// Mean hinge loss per epoch.
    pub epoch_loss: Vec<f64>,
}

fn batch_tensor(examples: &[&PatchExample]) -> Result<Tensor> {
    let mut items: Vec<Tensor> = Vec::with_capacity(examples.len() * 3);
    items.extend(examples.iter().map(|e| e.left.clone()));
    items.extend(examples.iter().map(|e| e.positive.clone()));
    items.extend(examples.iter().map(|e| e.negative.clone()));
    Tensor::stack(&items)
}

/// Mean of `max(0, s_- - s_+ + m)` over a batch, recorded for backward.
fn batch_loss(net: &mut StereoNet, g: &mut Graph, batch: &[&PatchExample], margin: f64, training: bool) -> Result<crate::tensor::Var> {
    let b = batch.len();
    let x = g.input(batch_tensor(batch)?)?;
    let f = net.features(g, x, training)?;
    let fl = g.slice_samples(f, 0, b)?;
    let fp = g.slice_samples(f, b, b)?;
    let fneg = g.slice_samples(f, 2 * b, b)?;
    let sp = net.score(g, fl, fp)?;
    let sn = net.score(g, fl, fneg)?;
    let hinge = g.hinge(sp, sn, margin)?;
    g.mean(hinge)
}

/// Minimizes the hinge loss with momentum SGD, the rate decayed tenfold at
/// half and three quarters of the run. Shuffling is seeded, so a run is
/// reproducible. Aborts on a non-finite loss.
pub fn train_stereo(net: &mut StereoNet, examples: &[PatchExample], schedule: &StereoSchedule) -> Result<TrainTrace> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if schedule.batch_size == 0 || schedule.epochs == 0 {
        return Err(Error::InvalidArgument("batch size and epoch count must be positive".into()));
    }
    net.set_features_trainable(!schedule.freeze_features);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = Sgd::new(schedule.learning_rate, schedule.momentum)?;
    let lr = LrSchedule::two_step(schedule.learning_rate);
    let steps_per_epoch = examples.len().div_ceil(schedule.batch_size);
    let total = steps_per_epoch * schedule.epochs;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = TrainTrace::default();
    let mut step = 0;
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&PatchExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut g = Graph::new();
            let loss = batch_loss(net, &mut g, &batch, schedule.margin, true)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("hinge loss became {value} at epoch {epoch}, step {step}")));
            }
            let grads = g.backward(loss)?;
            opt.lr = lr.rate(step, total);
            opt.step(&mut net.store, &grads)?;
            sum += value * batch.len() as f64;
            step += 1;
        }
        let mean = sum / examples.len() as f64;
        info!("stereo epoch {epoch}: hinge {mean:.4}");
        trace.epoch_loss.push(mean);
    }
    net.set_features_trainable(true);
    Ok(trace)
}

/// Positive and negative scores of each example (inference mode).
pub fn example_scores(net: &StereoNet, examples: &[PatchExample]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(64) {
        let refs: Vec<&PatchExample> = chunk.iter().collect();
        let f = net.infer_features(&batch_tensor(&refs)?)?;
        let b = chunk.len();
        let per = f.len() / (3 * b);
        let feat = |i: usize| &f.data()[i * per..(i + 1) * per];
        for i in 0..b {
            out.push((net.score_features(feat(i), feat(b + i)), net.score_features(feat(i), feat(2 * b + i))));
        }
    }
    Ok(out)
}

/// Fraction of examples ranked correctly (`s_+ > s_-`).
pub fn ranking_accuracy(net: &StereoNet, examples: &[PatchExample]) -> Result<f64> {
    let scores = example_scores(net, examples)?;
    Ok(scores.iter().filter(|(p, n)| p > n).count() as f64 / scores.len().max(1) as f64)
}

/// Mean inference-mode hinge loss.
pub fn mean_hinge(net: &StereoNet, examples: &[PatchExample], margin: f64) -> Result<f64> {
    let scores = example_scores(net, examples)?;
    Ok(scores.iter().map(|(p, n)| (n - p + margin).max(0.0)).sum::<f64>() / scores.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stereo::{Head, StereoConfig};

    fn noise(rng: &mut ChaCha8Rng, p: usize) -> Tensor {
        Tensor::new(&[1, 1, p, p], (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn pairs_group_into_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = PatchExample { left: noise(&mut rng, 4), positive: noise(&mut rng, 4), negative: noise(&mut rng, 4) };
        let [p, n] = e.pairs();
        assert_eq!(examples_from_pairs(&[n.clone(), p.clone()]).unwrap(), vec![e]);
        assert!(examples_from_pairs(&[p]).is_err());
        assert!(examples_from_pairs(&[n]).is_err());
    }

    #[test]
    fn zero_margin_with_shared_inputs_reaches_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let examples: Vec<PatchExample> = (0..8)
            .map(|_| {
                let l = noise(&mut rng, 8);
                let r = noise(&mut rng, 8);
                PatchExample { left: l, positive: r.clone(), negative: r }
            })
            .collect();
        let mut net = StereoNet::new(StereoConfig { patch: 8, layers: 1, channels: 2, hidden: 3, head: Head::Fcn, seed: 1 }).unwrap();
        let schedule = StereoSchedule { epochs: 1, batch_size: 4, margin: 0.0, ..Default::default() };
        let trace = train_stereo(&mut net, &examples, &schedule).unwrap();
        assert_eq!(trace.epoch_loss, vec![0.0]);
    }

    #[test]
    fn satisfied_margin_gives_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = noise(&mut rng, 8);
        let e = PatchExample { left: l.clone(), positive: l.clone(), negative: noise(&mut rng, 8) };
        let mut net = StereoNet::new(StereoConfig { patch: 8, layers: 1, channels: 2, hidden: 3, head: Head::Linear, seed: 1 }).unwrap();
        let mut g = Graph::new();
        // negative margin is rejected; a zero margin with s_+ far above s_- is inert
        let (sp, sn) = example_scores(&net, std::slice::from_ref(&e)).unwrap()[0];
        assert!(sp > sn);
        let loss = batch_loss(&mut net, &mut g, &[&e], 0.0, false).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.norm(), 0.0);
    }

    #[test]
    fn sampled_examples_follow_the_disparity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tex = |x: f64, y: f64| (0.7 * x).sin() + (0.43 * y + 0.2 * x).cos();
        let left = Image::from_fn(48, 24, |x, y| tex(x as f64, y as f64));
        let right = Image::from_fn(48, 24, |x, y| tex(x as f64 + 6.0, y as f64));
        let disp = Image::filled(48, 24, 6.0);
        let ex = sample_examples(&left, &right, &disp, 8, 20, &Augmentation::none(), &mut rng).unwrap();
        assert_eq!(ex.len(), 20);
        // each image is standardized on its own, so matches agree up to an affine map
        let corr = |a: &Tensor, b: &Tensor| {
            let n = a.len() as f64;
            let (ma, mb) = (a.data().iter().sum::<f64>() / n, b.data().iter().sum::<f64>() / n);
            let cov: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.data().iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.data().iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        for e in &ex {
            assert!(corr(&e.left, &e.positive) > 1.0 - 1e-9);
            assert!(corr(&e.left, &e.negative) < 0.99);
        }
    }
}
