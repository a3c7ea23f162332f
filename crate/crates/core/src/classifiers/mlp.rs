//! One-hidden-layer perceptron: ReLU hidden units, logistic output, trained on
//! mini-batches of binary cross-entropy with either Adam or plain SGD.
//!
//! When the training set is large enough, a stratified 10% slice is held out
//! and training stops once its loss has not improved by `min_delta` for
//! `patience` epochs; the best weights seen are kept.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::boosting::sigmoid;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    /// L2 penalty on weights.
    pub alpha: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 128,
            learning_rate: 0.001,
            optimizer: Optimizer::Adam,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-4,
            validation_fraction: 0.1,
            alpha: 1e-4,
        }
    }
}

/// Flat parameter layout: `w1` (hidden x inputs, row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

/// Fewer validation rows than this per class disables early stopping.
const MIN_VALIDATION_PER_CLASS: usize = 2;

impl Mlp {
    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.inputs;
        (w1, w1 + self.hidden, w1 + 2 * self.hidden)
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut z = p[b2];
        for j in 0..self.hidden {
            let row = &p[j * self.inputs..(j + 1) * self.inputs];
            let a = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if a > 0.0 {
                z += p[w2 + j] * a;
            }
        }
        sigmoid(z)
    }

    fn mean_loss(&self, x: &[Vec<f64>], y: &[bool], rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&i| {
                let prob = self.predict_proba(&x[i]).clamp(1e-12, 1.0 - 1e-12);
                if y[i] {
                    -prob.ln()
                } else {
                    -(1.0 - prob).ln()
                }
            })
            .sum();
        total / rows.len() as f64
    }

    /// Gradient of the batch loss (mean BCE plus L2) into `grad`.
    fn gradient(&self, x: &[Vec<f64>], y: &[bool], batch: &[usize], alpha: f64, grad: &mut [f64], act: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let xi = &x[i];
            let mut z = p[b2];
            for j in 0..self.hidden {
                let row = &p[j * self.inputs..(j + 1) * self.inputs];
                let a = p[b1 + j] + row.iter().zip(xi).map(|(w, v)| w * v).sum::<f64>();
                act[j] = a.max(0.0);
                z += p[w2 + j] * act[j];
            }
            let delta = (sigmoid(z) - if y[i] { 1.0 } else { 0.0 }) * scale;
            grad[b2] += delta;
            for j in 0..self.hidden {
                grad[w2 + j] += delta * act[j];
                if act[j] > 0.0 {
                    let dh = delta * p[w2 + j];
                    grad[b1 + j] += dh;
                    let g = &mut grad[j * self.inputs..(j + 1) * self.inputs];
                    for (gk, v) in g.iter_mut().zip(xi) {
                        *gk += dh * v;
                    }
                }
            }
        }
        for k in 0..b1 {
            grad[k] += alpha * p[k];
        }
        for j in 0..self.hidden {
            grad[w2 + j] += alpha * p[w2 + j];
        }
    }

    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &MlpParams, seed: u64) -> Mlp {
        let inputs = x.first().map_or(0, Vec::len);
        let hidden = params.hidden.max(1);
        let mut rng = stream_rng(seed, 0);

        let mut params_vec = vec![0.0; hidden * inputs + 2 * hidden + 1];
        let he = Normal::new(0.0, (2.0 / inputs.max(1) as f64).sqrt()).expect("valid std");
        let glorot = Normal::new(0.0, (2.0 / (hidden + 1) as f64).sqrt()).expect("valid std");
        for w in &mut params_vec[..hidden * inputs] {
            *w = he.sample(&mut rng);
        }
        for w in &mut params_vec[hidden * inputs + hidden..hidden * inputs + 2 * hidden] {
            *w = glorot.sample(&mut rng);
        }
        let mut model = Mlp {
            inputs,
            hidden,
            params: params_vec,
        };

        let (train_rows, val_rows) = validation_split(y, params.validation_fraction, &mut rng);
        let mut order = train_rows;
        let batch_size = params.batch_size.clamp(1, order.len().max(1));

        let n_params = model.params.len();
        let mut grad = vec![0.0; n_params];
        let mut act = vec![0.0; hidden];
        let mut m1 = vec![0.0; n_params];
        let mut m2 = vec![0.0; n_params];
        let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut step = 0i32;

        let mut best_loss = f64::INFINITY;
        let mut best_params = model.params.clone();
        let mut stale = 0;
        for _ in 0..params.max_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(batch_size) {
                model.gradient(x, y, batch, params.alpha, &mut grad, &mut act);
                match params.optimizer {
                    Optimizer::Sgd => {
                        for (w, g) in model.params.iter_mut().zip(&grad) {
                            *w -= params.learning_rate * g;
                        }
                    }
                    Optimizer::Adam => {
                        step += 1;
                        let c1 = 1.0 - beta1.powi(step);
                        let c2 = 1.0 - beta2.powi(step);
                        for k in 0..n_params {
                            m1[k] = beta1 * m1[k] + (1.0 - beta1) * grad[k];
                            m2[k] = beta2 * m2[k] + (1.0 - beta2) * grad[k] * grad[k];
                            model.params[k] -= params.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                        }
                    }
                }
            }
            if let Some(val) = &val_rows {
                let loss = model.mean_loss(x, y, val);
                if loss < best_loss - params.min_delta {
                    best_loss = loss;
                    best_params.copy_from_slice(&model.params);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= params.patience {
                        break;
                    }
                }
            }
        }
        if val_rows.is_some() {
            model.params = best_params;
        }
        model
    }
}

/// Stratified hold-out; `None` when either class would get too few rows.
fn validation_split<R: rand::Rng>(y: &[bool], fraction: f64, rng: &mut R) -> (Vec<usize>, Option<Vec<usize>>) {
    let all: Vec<usize> = (0..y.len()).collect();
    if !(fraction > 0.0 && fraction < 1.0) {
        return (all, None);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = all.iter().copied().filter(|&i| y[i] == class).collect();
        let take = (members.len() as f64 * fraction).round() as usize;
        if take < MIN_VALIDATION_PER_CLASS || take >= members.len() {
            return (all, None);
        }
        members.shuffle(rng);
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, Some(val))
}
