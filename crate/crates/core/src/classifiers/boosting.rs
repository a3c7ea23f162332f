//! Gradient-boosted regression trees under logistic loss, with second-order
//! leaf weights `-G / (H + lambda)`. Starts from the training log-odds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowParams, Newton, Presorted, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 500,
            learning_rate: 0.05,
            max_depth: 6,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Boosted {
    pub base_margin: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Boosted {
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &GbtParams) -> Boosted {
        let n = x.len();
        let p = x.first().map_or(0, Vec::len);
        let positives = y.iter().filter(|&&t| t).count() as f64;
        let prior = (positives / n as f64).clamp(1e-6, 1.0 - 1e-6);
        let base_margin = (prior / (1.0 - prior)).ln();

        let rows: Vec<usize> = (0..n).collect();
        let presorted = Presorted::new(x, &rows, p);
        let grow_params = GrowParams {
            max_depth: Some(params.max_depth),
            max_features: None,
            min_gain: 1e-12,
        };
        // all features are examined, so the generator is never consulted
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut margin = vec![base_margin; n];
        let mut gradients = vec![0.0; n];
        let mut hessians = vec![0.0; n];
        let mut trees = Vec::with_capacity(params.n_estimators);
        for _ in 0..params.n_estimators {
            for i in 0..n {
                let prob = sigmoid(margin[i]);
                gradients[i] = prob - if y[i] { 1.0 } else { 0.0 };
                hessians[i] = (prob * (1.0 - prob)).max(1e-16);
            }
            let criterion = Newton {
                gradients: &gradients,
                hessians: &hessians,
                lambda: params.lambda,
                min_child_weight: params.min_child_weight,
            };
            let tree = grow(x, &presorted, &criterion, &grow_params, &mut rng);
            for (m, row) in margin.iter_mut().zip(x) {
                *m += params.learning_rate * tree.predict(row);
            }
            trees.push(tree);
        }
        Boosted {
            base_margin,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    /// Margin using only the first `stages` trees.
    pub fn staged_margin(&self, x: &[f64], stages: usize) -> f64 {
        self.trees
            .iter()
            .take(stages)
            .fold(self.base_margin, |m, t| m + self.learning_rate * t.predict(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.staged_margin(x, self.trees.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<bool>) {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let y = x.iter().map(|r| r[0] + 0.5 * r[1] > 0.2).collect();
        (x, y)
    }

    #[test]
    fn staged_prefix_matches_shorter_model() {
        let (x, y) = data();
        let long = GbtParams {
            n_estimators: 30,
            learning_rate: 0.1,
            max_depth: 3,
            ..GbtParams::default()
        };
        let short = GbtParams {
            n_estimators: 12,
            ..long.clone()
        };
        let a = Boosted::fit(&x, &y, &long);
        let b = Boosted::fit(&x, &y, &short);
        assert_eq!(&a.trees[..12], &b.trees[..]);
        for row in &x {
            assert_eq!(a.staged_margin(row, 12), b.staged_margin(row, 12));
        }
    }

    #[test]
    fn learns_training_data() {
        let (x, y) = data();
        let m = Boosted::fit(
            &x,
            &y,
            &GbtParams {
                n_estimators: 100,
                learning_rate: 0.3,
                max_depth: 3,
                ..GbtParams::default()
            },
        );
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(r, &t)| (m.predict_proba(r) >= 0.5) == t)
            .count();
        assert!(correct >= 57, "{correct}");
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(!sigmoid(-800.0).is_nan());
    }
}
