//! Weighted binary logistic regression fitted by damped Newton iterations.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence threshold on half the squared Newton decrement.
    pub tol: f64,
    /// L2 penalty on the slopes (the intercept is not penalized).
    pub ridge: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticModel {
    pub fn decision(&self, row: ArrayView1<f64>) -> f64 {
        self.intercept + row.iter().zip(&self.coef).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| sigmoid(self.decision(r))).collect()
    }
}

/// Class weights giving each arm the same total weight (N / (2 N_arm)).
pub fn balanced_weights(labels: &[bool]) -> Vec<f64> {
    let n = labels.len() as f64;
    let n1 = labels.iter().filter(|&&t| t).count() as f64;
    let n0 = n - n1;
    labels
        .iter()
        .map(|&t| if t { n / (2.0 * n1) } else { n / (2.0 * n0) })
        .collect()
}

/// In-place Cholesky solve of `a x = b` for symmetric positive definite `a`
/// (row-major, `k × k`). Returns `None` when `a` is not numerically PD.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize) -> Option<()> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in i + 1..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    Some(())
}

/// Fits `P(y = 1 | x) = sigmoid(b0 + x·b)` by minimizing the weighted
/// negative log-likelihood plus `ridge / 2 · |b|²`. Targets may be soft
/// (in `[0, 1]`).
pub fn fit_logistic(
    x: &Array2<f64>,
    targets: &[f64],
    weights: &[f64],
    opts: &LogisticOptions,
) -> Result<LogisticModel> {
    let (n, d) = x.dim();
    if targets.len() != n || weights.len() != n || n == 0 {
        return Err(Error::Validation(
            "logistic regression inputs disagree in length".into(),
        ));
    }
    let k = d + 1;
    let mut beta = vec![0.0f64; k];

    let objective = |beta: &[f64]| -> f64 {
        let mut f = 0.0;
        for (i, row) in x.rows().into_iter().enumerate() {
            let z = beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            f += weights[i] * (softplus(z) - targets[i] * z);
        }
        f + 0.5 * opts.ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
    };

    let mut current = objective(&beta);
    let mut grad = vec![0.0f64; k];
    let mut hess = vec![0.0f64; k * k];
    for iter in 1..=opts.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for (i, row) in x.rows().into_iter().enumerate() {
            let z = beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let p = sigmoid(z);
            let r = weights[i] * (p - targets[i]);
            let h = weights[i] * p * (1.0 - p);
            grad[0] += r;
            hess[0] += h;
            for a in 0..d {
                let xa = row[a];
                grad[a + 1] += r * xa;
                hess[a + 1] += h * xa;
                for b in 0..=a {
                    hess[(a + 1) * k + b + 1] += h * xa * row[b];
                }
            }
        }
        for a in 1..k {
            grad[a] += opts.ridge * beta[a];
            hess[a * k] = hess[a];
            for b in 0..a {
                hess[b * k + a] = hess[a * k + b];
            }
        }
        // The ridge also damps the intercept direction of the Hessian so the
        // system stays solvable when every prediction saturates.
        for a in 0..k {
            hess[a * k + a] += opts.ridge;
        }

        let mut step = grad.clone();
        let mut h = hess.clone();
        if cholesky_solve(&mut h, &mut step, k).is_none() {
            let mut jitter = opts.ridge.max(1e-10);
            loop {
                step.copy_from_slice(&grad);
                h.copy_from_slice(&hess);
                for a in 0..k {
                    h[a * k + a] += jitter;
                }
                if cholesky_solve(&mut h, &mut step, k).is_some() {
                    break;
                }
                jitter *= 10.0;
                if jitter > 1e6 {
                    return Err(Error::Convergence { iterations: iter });
                }
            }
        }
        let decrement: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        if !decrement.is_finite() {
            return Err(Error::Convergence { iterations: iter });
        }
        if 0.5 * decrement <= opts.tol {
            return Ok(LogisticModel {
                intercept: beta[0],
                coef: beta[1..].to_vec(),
                iterations: iter,
            });
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            let value = objective(&trial);
            if value <= current - 1e-4 * t * decrement {
                beta = trial;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No representable decrease along the Newton direction: the
            // objective is flat to machine precision.
            return Ok(LogisticModel {
                intercept: beta[0],
                coef: beta[1..].to_vec(),
                iterations: iter,
            });
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
    })
}
