//! Central finite-difference gradient oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwstereo::tensor::{Graph, Tensor, Var};
use uwstereo::Result;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Builds `op` on fresh variables and contracts its output with fixed random
/// weights into a scalar.
fn evaluate<F>(op: &F, inputs: &[Tensor], probe: &mut Option<Tensor>, seed: u64) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect::<Result<_>>()?;
    let out = op(&mut g, &vars)?;
    let shape = g.value(out).shape().to_vec();
    if probe.is_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        *probe = Some(random_tensor(&shape, &mut rng, 1.0));
    }
    let w = g.input(probe.clone().unwrap())?;
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    Ok((g, vars, loss))
}

/// Relative error `|a - n| / (|a| + |n|)` (vector 2-norms) between the
/// analytic gradient and central differences, over all inputs.
pub fn relative_error<F>(op: F, inputs: &[Tensor], seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut probe = None;
    let (mut g, vars, loss) = evaluate(&op, inputs, &mut probe, seed).expect("forward");
    g.backward(loss).expect("backward");
    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += STEP;
            let (g1, _, l1) = evaluate(&op, &shifted, &mut probe, seed).expect("forward+");
            shifted[k].data_mut()[i] -= 2.0 * STEP;
            let (g2, _, l2) = evaluate(&op, &shifted, &mut probe, seed).expect("forward-");
            let numeric = (g1.value(l1).item() - g2.value(l2).item()) / (2.0 * STEP);
            diff += (analytic[i] - numeric).powi(2);
            norm_a += analytic[i].powi(2);
            norm_n += numeric.powi(2);
        }
    }
    let denom = norm_a.sqrt() + norm_n.sqrt();
    if denom < 1e-12 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Distance from every element to the nearest kink of a piecewise op is
/// at least this, so central differences never straddle one.
pub const KINK_CLEARANCE: f64 = 4.0 * STEP;

pub fn clear_of_zero(t: &Tensor) -> bool {
    t.data().iter().all(|v| v.abs() > KINK_CLEARANCE)
}

/// Every 2x2 block has a unique maximum separated by the clearance.
pub fn pool_blocks_separated(t: &Tensor) -> bool {
    let (n, c, h, w) = t.dims4().unwrap();
    for p in 0..n * c {
        for by in 0..h / 2 {
            for bx in 0..w / 2 {
                let i0 = p * h * w + 2 * by * w + 2 * bx;
                let mut vals = [t.data()[i0], t.data()[i0 + 1], t.data()[i0 + w], t.data()[i0 + w + 1]];
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if vals[0] - vals[1] < KINK_CLEARANCE {
                    return false;
                }
            }
        }
    }
    true
}
