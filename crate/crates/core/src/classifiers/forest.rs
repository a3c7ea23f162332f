//! Random forest: bootstrap-sampled Gini trees with sqrt(p) features per split.
//! The forest probability is the mean of the trees' leaf positive fractions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Gini, GrowParams, Presorted, Tree};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 400,
            max_depth: Some(10),
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: &RfParams, seed: u64) -> Forest {
        let n = x.len();
        let p = x.first().map_or(0, Vec::len);
        let rows: Vec<usize> = (0..n).collect();
        let presorted = Presorted::new(x, &rows, p);
        let max_features = ((p as f64).sqrt().round() as usize).max(1);
        let grow_params = GrowParams {
            max_depth: params.max_depth,
            max_features: Some(max_features),
            min_gain: f64::NEG_INFINITY,
        };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(seed, t as u64);
                let mut weights = vec![0.0; n];
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1.0;
                }
                let keep: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
                let criterion = Gini {
                    targets: y,
                    weights: &weights,
                    min_split_weight: params.min_samples_split as f64,
                };
                grow(x, &presorted.filtered(&keep), &criterion, &grow_params, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }
}
