//! Detection metrics and evaluation protocols. Hallucinated is the positive class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{train, Hyperparams, TrainedDetector};
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<Confusion> {
    if labels.len() != predictions.len() || labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut c = Confusion::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks (Mann-Whitney U).
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks are 1-based; a tie group spanning ranks lo..=hi gets (lo + hi) / 2
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        let pos_in_group = order[start..=end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid_rank * pos_in_group as f64;
        start = end + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

pub fn metrics_at(labels: &[bool], scores: &[f64], threshold: f64) -> Result<(Metrics, Confusion)> {
    let predictions: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let c = confusion(labels, &predictions)?;
    Ok((
        Metrics {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            auc: auc(labels, scores)?,
        },
        c,
    ))
}

/// Metrics at each decision threshold, for sensitivity studies.
pub fn threshold_sweep(labels: &[bool], scores: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, Metrics)>> {
    thresholds
        .iter()
        .map(|&t| metrics_at(labels, scores, t).map(|(m, _)| (t, m)))
        .collect()
}

/// Fold index per row. Each class is shuffled and dealt round-robin, the deal
/// continuing across classes, so fold class counts differ by at most one.
pub fn stratified_kfold(targets: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > targets.len() {
        return Err(Error::Infeasible(format!(
            "{k} folds over {} rows",
            targets.len()
        )));
    }
    let mut folds = vec![0; targets.len()];
    let mut dealt = 0;
    for (stream, class) in [false, true].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == class).collect();
        rand::seq::SliceRandom::shuffle(&mut members[..], &mut stream_rng(seed, stream as u64));
        for i in members {
            folds[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(folds)
}

/// Checks that every class has at least `k` rows.
pub fn require_stratifiable(targets: &[bool], k: usize) -> Result<()> {
    let pos = targets.iter().filter(|&&t| t).count();
    let neg = targets.len() - pos;
    if pos < k || neg < k {
        return Err(Error::Infeasible(format!(
            "{k} folds need at least {k} rows per class, have {neg} grounded / {pos} hallucinated"
        )));
    }
    Ok(())
}

/// Stratified (train, test) split with `fraction` of each class held out.
pub fn holdout_split(targets: &[bool], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    require_stratifiable(targets, 2)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (stream, class) in [false, true].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == class).collect();
        rand::seq::SliceRandom::shuffle(&mut members[..], &mut stream_rng(seed, 100 + stream as u64));
        let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Anything that assigns hallucination scores to dataset rows.
pub trait Scorer: Send + Sync {
    fn scores(&self, data: &Dataset) -> Result<Vec<f64>>;
    fn threshold(&self) -> f64 {
        0.5
    }
}

impl Scorer for TrainedDetector {
    fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.predict_dataset(data)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Produces a fresh scorer from training rows.
pub trait Trainer: Send + Sync {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Scorer>>;
    fn describe(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

/// Trains one classifier family with fixed hyperparameters.
pub struct FamilyTrainer {
    pub params: Hyperparams,
    pub threshold: f64,
}

impl Trainer for FamilyTrainer {
    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Scorer>> {
        Ok(Box::new(train(data, &self.params, seed)?.with_threshold(self.threshold)?))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).unwrap_or_default()
    }
}

/// What `evaluate` measures: a fixed scorer, or a trainer refitted per split.
pub enum Subject<'a> {
    Fitted(&'a dyn Scorer),
    Trained(&'a dyn Trainer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Holdout,
    #[default]
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub folds: usize,
    pub holdout_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: Protocol::Kfold,
            folds: 5,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Holdout: test-split metrics. K-fold: mean over folds.
    pub metrics: Metrics,
    /// Sample standard deviation over folds (k-fold only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics_std: Option<Metrics>,
    /// Summed over all evaluated rows.
    pub confusion: Confusion,
    pub folds: Vec<FoldReport>,
    pub config: serde_json::Value,
    pub seed: u64,
}

fn score_split(subject: &Subject<'_>, data: &Dataset, train_idx: &[usize], test_idx: &[usize], seed: u64, fold: usize) -> Result<FoldReport> {
    let test = data.subset(test_idx);
    let (scores, threshold) = match subject {
        Subject::Fitted(s) => (s.scores(&test)?, s.threshold()),
        Subject::Trained(t) => {
            let model = t.fit(&data.subset(train_idx), seed)?;
            (model.scores(&test)?, model.threshold())
        }
    };
    let (metrics, confusion) = metrics_at(&test.targets(), &scores, threshold)?;
    Ok(FoldReport {
        fold,
        n_test: test_idx.len(),
        metrics,
        confusion,
    })
}

fn mean_std(folds: &[FoldReport]) -> (Metrics, Metrics) {
    let n = folds.len() as f64;
    let pick: [fn(&Metrics) -> f64; 4] = [|m| m.precision, |m| m.recall, |m| m.f1, |m| m.auc];
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for (k, f) in pick.iter().enumerate() {
        let m = folds.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let var = if folds.len() > 1 {
            folds.iter().map(|r| (f(&r.metrics) - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean[k] = m;
        std[k] = var.sqrt();
    }
    let to = |a: [f64; 4]| Metrics {
        precision: a[0],
        recall: a[1],
        f1: a[2],
        auc: a[3],
    };
    (to(mean), to(std))
}

/// Runs `protocol` over `data`. Every split is derived from `seed` alone, so
/// results do not depend on the worker count.
pub fn evaluate(subject: &Subject<'_>, data: &Dataset, config: &EvalConfig, seed: u64, snapshot: serde_json::Value) -> Result<EvalReport> {
    let targets = data.targets();
    match config.protocol {
        Protocol::Holdout => {
            let (train_idx, test_idx) = holdout_split(&targets, config.holdout_fraction, seed)?;
            let fold = score_split(subject, data, &train_idx, &test_idx, crate::rng::derive_seed(seed, 0), 0)?;
            Ok(EvalReport {
                protocol: Protocol::Holdout,
                metrics: fold.metrics,
                metrics_std: None,
                confusion: fold.confusion,
                folds: vec![fold],
                config: snapshot,
                seed,
            })
        }
        Protocol::Kfold => {
            let k = config.folds;
            require_stratifiable(&targets, k)?;
            let assignment = stratified_kfold(&targets, k, seed)?;
            let folds = (0..k)
                .into_par_iter()
                .map(|fold| {
                    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
                        (0..data.len()).partition(|&i| assignment[i] == fold);
                    score_split(subject, data, &train_idx, &test_idx, crate::rng::derive_seed(seed, fold as u64), fold)
                })
                .collect::<Result<Vec<_>>>()?;
            let (metrics, std) = mean_std(&folds);
            let confusion = folds.iter().fold(Confusion::default(), |a, f| a.add(f.confusion));
            Ok(EvalReport {
                protocol: Protocol::Kfold,
                metrics,
                metrics_std: Some(std),
                confusion,
                folds,
                config: snapshot,
                seed,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::trace::Label;

    struct Oracle;
    impl Scorer for Oracle {
        fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
            Ok(data.targets().iter().map(|&t| if t { 1.0 } else { 0.0 }).collect())
        }
    }

    struct Constant;
    impl Scorer for Constant {
        fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
            Ok(vec![0.7; data.len()])
        }
    }

    fn toy(n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| FeatureVector {
                token_id: format!("t{i}"),
                values: vec![i as f64],
                label: if i % 3 == 0 { Label::Hallucinated } else { Label::Grounded },
            })
            .collect();
        Dataset::new(vec!["x".into()], rows).unwrap()
    }

    #[test]
    fn oracle_detector_scores_perfectly() {
        for protocol in [Protocol::Kfold, Protocol::Holdout] {
            let cfg = EvalConfig {
                protocol,
                holdout_fraction: 0.3,
                ..EvalConfig::default()
            };
            let r = evaluate(&Subject::Fitted(&Oracle), &toy(30), &cfg, 1, serde_json::Value::Null).unwrap();
            let m = r.metrics;
            assert_eq!((m.precision, m.recall, m.f1, m.auc), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn constant_detector_has_chance_auc() {
        let r = evaluate(&Subject::Fitted(&Constant), &toy(30), &EvalConfig::default(), 1, serde_json::Value::Null).unwrap();
        assert_eq!(r.metrics.auc, 0.5);
        assert_eq!(r.metrics.recall, 1.0);
        assert_eq!(r.confusion.tn, 0);
    }

    #[test]
    fn confusion_extremes() {
        let y = [true, false, true, false];
        assert_eq!(confusion(&y, &y).unwrap(), Confusion { tp: 2, fp: 0, tn: 2, fn_: 0 });
        let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
        let c = confusion(&y, &flipped).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(c.f1(), 0.0);
        assert!(confusion(&y, &y[..3]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        let y = [false, false, true, true];
        assert_eq!(auc(&y, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&y, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(auc(&y, &[0.5; 4]).unwrap(), 0.5);
        // one tie across classes: 3 wins + 1 half
        assert_eq!(auc(&y, &[0.1, 0.5, 0.5, 0.9]).unwrap(), 0.875);
        assert!(matches!(auc(&[true, true], &[0.1, 0.2]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn folds_balanced_small() {
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let f = stratified_kfold(&y, 5, 3).unwrap();
        for fold in 0..5 {
            let pos = (0..10).filter(|&i| f[i] == fold && y[i]).count();
            let neg = (0..10).filter(|&i| f[i] == fold && !y[i]).count();
            assert_eq!((pos, neg), (1, 1));
        }
    }

    #[test]
    fn leave_one_out() {
        let y: Vec<bool> = (0..6).map(|i| i % 2 == 0).collect();
        let mut f = stratified_kfold(&y, 6, 0).unwrap();
        f.sort();
        assert_eq!(f, vec![0, 1, 2, 3, 4, 5]);
        assert!(stratified_kfold(&y, 7, 0).is_err());
        assert!(stratified_kfold(&y, 1, 0).is_err());
    }

    #[test]
    fn pope_imbalance() {
        let y: Vec<bool> = (0..3339 + 217).map(|i| i >= 3339).collect();
        let f = stratified_kfold(&y, 5, 11).unwrap();
        for fold in 0..5 {
            let pos = (0..y.len()).filter(|&i| f[i] == fold && y[i]).count();
            assert!(pos == 43 || pos == 44, "{pos}");
        }
    }

    #[test]
    fn holdout_is_stratified_and_deterministic() {
        let y: Vec<bool> = (0..100).map(|i| i % 5 == 0).collect();
        let (train, test) = holdout_split(&y, 0.1, 4).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(test.iter().filter(|&&i| y[i]).count(), 2);
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(holdout_split(&y, 0.1, 4).unwrap(), (train, test));
    }

    #[test]
    fn sweep_moves_recall() {
        let y = [false, true, true];
        let s = [0.2, 0.4, 0.9];
        let sweep = threshold_sweep(&y, &s, &[0.3, 0.5]).unwrap();
        assert_eq!(sweep[0].1.recall, 1.0);
        assert_eq!(sweep[1].1.recall, 0.5);
        assert_eq!(sweep[0].1.auc, sweep[1].1.auc);
    }
}
