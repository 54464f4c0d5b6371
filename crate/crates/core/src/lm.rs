//! Dense Levenberg-Marquardt with central-difference Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tolerance: f64,
    /// Stop when the relative step norm falls below this.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, cost_tolerance: 1e-20, step_tolerance: 1e-14 }
    }
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Root mean square of the final residual vector.
    pub rms: f64,
    pub iterations: usize,
}

fn jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, p: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-7 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        let rp = f(&q);
        q[j] = p[j] - h;
        let rm = f(&q);
        q[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `sum f(p)^2` from `p0`.
pub fn minimize(f: impl Fn(&[f64]) -> Vec<f64>, p0: &[f64], opts: &LmOptions) -> Result<LmReport> {
    let mut p = p0.to_vec();
    let mut r = f(&p);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite residual at the initial guess".into()));
    }
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let rms = |c: f64, n: usize| (c / n.max(1) as f64).sqrt();
    for it in 0..opts.max_iterations {
        if c == 0.0 {
            return Ok(LmReport { params: p, rms: 0.0, iterations: it });
        }
        let jac = jacobian(&f, &p, &r);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..p.len() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rc = f(&cand);
            let cc = cost(&rc);
            if cc.is_finite() && cc < c {
                let rel_cost = (c - cc) / c;
                let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let rel_step = step.norm() / pnorm;
                p = cand;
                r = rc;
                c = cc;
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if rel_cost < opts.cost_tolerance || rel_step < opts.step_tolerance {
                    return Ok(LmReport { params: p, rms: rms(c, r.len()), iterations: it + 1 });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction improves the cost: a (numerical) minimum.
            return Ok(LmReport { params: p, rms: rms(c, r.len()), iterations: it + 1 });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iterations, residual: rms(c, r.len()) })
}
