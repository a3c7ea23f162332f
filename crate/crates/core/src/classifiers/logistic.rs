//! L2-regularized logistic regression solved by damped Newton iterations.

use serde::{Deserialize, Serialize};

use super::boosting::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrParams {
    /// Penalty on the weights (not the intercept), relative to the mean log-loss.
    pub l2: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            l2: 1e-3,
            max_iter: 200,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Gradient norm at the returned solution.
    pub gradient_norm: f64,
}

impl Logistic {
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &LrParams) -> Logistic {
        let n = x.len() as f64;
        let p = x.first().map_or(0, Vec::len);
        // theta = [weights..., intercept]
        let mut theta = vec![0.0; p + 1];
        let objective = |theta: &[f64]| -> f64 {
            let loss: f64 = x
                .iter()
                .zip(y)
                .map(|(row, &t)| {
                    let z = margin(theta, row);
                    // log(1 + e^z) - t*z, computed stably
                    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                    softplus - if t { z } else { 0.0 }
                })
                .sum();
            loss / n + 0.5 * params.l2 * theta[..p].iter().map(|w| w * w).sum::<f64>()
        };

        let mut grad_norm = f64::INFINITY;
        for _ in 0..params.max_iter {
            let mut grad = vec![0.0; p + 1];
            let mut hess = vec![vec![0.0; p + 1]; p + 1];
            for (row, &t) in x.iter().zip(y) {
                let prob = sigmoid(margin(&theta, row));
                let r = prob - if t { 1.0 } else { 0.0 };
                let s = prob * (1.0 - prob);
                for a in 0..=p {
                    let xa = if a < p { row[a] } else { 1.0 };
                    grad[a] += r * xa / n;
                    for b in 0..=a {
                        let xb = if b < p { row[b] } else { 1.0 };
                        hess[a][b] += s * xa * xb / n;
                    }
                }
            }
            for a in 0..=p {
                for b in 0..a {
                    hess[b][a] = hess[a][b];
                }
                if a < p {
                    grad[a] += params.l2 * theta[a];
                    hess[a][a] += params.l2;
                }
                hess[a][a] += 1e-12;
            }
            grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < params.tolerance {
                break;
            }
            let Some(step) = cholesky_solve(hess, &grad) else {
                break;
            };
            let current = objective(&theta);
            let mut alpha = 1.0;
            let decrease: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
            loop {
                let candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - alpha * s).collect();
                if objective(&candidate) <= current - 1e-4 * alpha * decrease || alpha < 1e-10 {
                    theta = candidate;
                    break;
                }
                alpha *= 0.5;
            }
        }
        let intercept = theta[p];
        theta.truncate(p);
        Logistic {
            weights: theta,
            intercept,
            gradient_norm: grad_norm,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let z: f64 = self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        sigmoid(z)
    }
}

fn margin(theta: &[f64], row: &[f64]) -> f64 {
    let p = row.len();
    theta[p] + theta[..p].iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
}

/// Solves `a * x = b` for symmetric positive definite `a`.
fn cholesky_solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i][k] * z[k];
        }
        z[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k][i] * z[k];
        }
        z[i] /= a[i][i];
    }
    Some(z)
}
