//! Hyperparameter selection by stratified k-fold cross-validation.
//!
//! Each grid point is scored by its mean validation F1 on the hallucination
//! class; the first point (in enumeration order) with the best mean wins.

use rayon::prelude::*;
use serde::Serialize;

use super::{train, Hyperparams};
use crate::error::{Error, Result};
use crate::eval::{metrics_at, require_stratifiable, stratified_kfold, Metrics};
use crate::features::Dataset;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPointReport {
    pub params: Hyperparams,
    pub fold_f1: Vec<f64>,
    pub fold_auc: Vec<f64>,
    pub mean_f1: f64,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    pub best_index: usize,
    pub points: Vec<GridPointReport>,
}

pub fn grid_search(dataset: &Dataset, grid: &[Hyperparams], folds: usize, seed: u64) -> Result<(Hyperparams, CvReport)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let targets = dataset.targets();
    require_stratifiable(&targets, folds)?;
    let assignment = stratified_kfold(&targets, folds, seed)?;
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| assignment[i] == fold);
            (dataset.subset(&train), dataset.subset(&test))
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let results = jobs
        .par_iter()
        .map(|&(g, f)| -> Result<Metrics> {
            let (train_set, test_set) = &splits[f];
            let model = train(train_set, &grid[g], derive_seed(seed, f as u64))?;
            let scores = model.predict_dataset(test_set)?;
            metrics_at(&test_set.targets(), &scores, model.threshold).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;

    let points: Vec<GridPointReport> = grid
        .iter()
        .enumerate()
        .map(|(g, params)| {
            let fold_metrics = &results[g * folds..(g + 1) * folds];
            let fold_f1: Vec<f64> = fold_metrics.iter().map(|m| m.f1).collect();
            let fold_auc: Vec<f64> = fold_metrics.iter().map(|m| m.auc).collect();
            GridPointReport {
                params: params.clone(),
                mean_f1: fold_f1.iter().sum::<f64>() / folds as f64,
                mean_auc: fold_auc.iter().sum::<f64>() / folds as f64,
                fold_f1,
                fold_auc,
            }
        })
        .collect();

    let mut best_index = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean_f1 > points[best_index].mean_f1 {
            best_index = i;
        }
    }
    Ok((
        grid[best_index].clone(),
        CvReport {
            folds,
            seed,
            best_index,
            points,
        },
    ))
}
