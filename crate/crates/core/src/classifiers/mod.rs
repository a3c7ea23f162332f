//! Supervised detectors over feature vectors.
//!
//! Four families are available: logistic regression, a one-hidden-layer
//! perceptron, a random forest and gradient-boosted trees (the role XGBoost
//! plays in the reference experiments, implemented here from scratch). Every
//! detector standardizes its inputs with statistics fitted on the training
//! rows and treats `hallucinated` as the positive class.

mod boosting;
mod forest;
mod logistic;
mod mlp;
mod model_io;
mod search;
mod tree;

pub use boosting::{Boosted, GbtParams};
pub use forest::{Forest, RfParams};
pub use logistic::{Logistic, LrParams};
pub use mlp::{Mlp, MlpParams, Optimizer};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use search::{grid_search, CvReport, GridPointReport};
pub use tree::{Node, Tree};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compute_features, Dataset, FeatureSpec, TokenFeatures};
use crate::trace::TokenTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lr,
    Mlp,
    Rf,
    Gbt,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Lr, Family::Mlp, Family::Rf, Family::Gbt];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lr => "lr",
            Family::Mlp => "mlp",
            Family::Rf => "rf",
            Family::Gbt => "gbt",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Family::Lr => 0,
            Family::Mlp => 1,
            Family::Rf => 2,
            Family::Gbt => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.tag() == tag)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown classifier family `{s}` (lr|mlp|rf|gbt)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparams {
    Lr(LrParams),
    Mlp(MlpParams),
    Rf(RfParams),
    Gbt(GbtParams),
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Lr(_) => Family::Lr,
            Hyperparams::Mlp(_) => Family::Mlp,
            Hyperparams::Rf(_) => Family::Rf,
            Hyperparams::Gbt(_) => Family::Gbt,
        }
    }
}

/// Search space per family. Points are enumerated in nested-loop order over
/// the fields as listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperGrid {
    pub lr_l2: Vec<f64>,
    pub mlp_hidden: Vec<usize>,
    pub mlp_learning_rate: Vec<f64>,
    pub mlp_optimizer: Vec<Optimizer>,
    pub rf_max_depth: Vec<Option<usize>>,
    pub rf_n_trees: Vec<usize>,
    pub gbt_max_depth: Vec<usize>,
    pub gbt_learning_rate: Vec<f64>,
    pub gbt_n_estimators: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            lr_l2: vec![1e-3],
            mlp_hidden: vec![64, 128, 256],
            mlp_learning_rate: vec![0.01, 0.001],
            mlp_optimizer: vec![Optimizer::Adam, Optimizer::Sgd],
            rf_max_depth: vec![None, Some(10), Some(20)],
            rf_n_trees: vec![200, 400, 600],
            gbt_max_depth: vec![4, 6, 8],
            gbt_learning_rate: vec![0.1, 0.05],
            gbt_n_estimators: vec![100, 200, 500],
        }
    }
}

impl HyperGrid {
    /// All grid points for `family`, filling non-grid fields from `base`.
    pub fn expand(&self, family: Family, base: &TrainConfig) -> Result<Vec<Hyperparams>> {
        let mut points = Vec::new();
        match family {
            Family::Lr => {
                for &l2 in &self.lr_l2 {
                    points.push(Hyperparams::Lr(LrParams { l2, ..base.lr.clone() }));
                }
            }
            Family::Mlp => {
                for &hidden in &self.mlp_hidden {
                    for &learning_rate in &self.mlp_learning_rate {
                        for &optimizer in &self.mlp_optimizer {
                            points.push(Hyperparams::Mlp(MlpParams {
                                hidden,
                                learning_rate,
                                optimizer,
                                ..base.mlp.clone()
                            }));
                        }
                    }
                }
            }
            Family::Rf => {
                for &max_depth in &self.rf_max_depth {
                    for &n_trees in &self.rf_n_trees {
                        points.push(Hyperparams::Rf(RfParams {
                            max_depth,
                            n_trees,
                            ..base.rf.clone()
                        }));
                    }
                }
            }
            Family::Gbt => {
                for &max_depth in &self.gbt_max_depth {
                    for &learning_rate in &self.gbt_learning_rate {
                        for &n_estimators in &self.gbt_n_estimators {
                            points.push(Hyperparams::Gbt(GbtParams {
                                max_depth,
                                learning_rate,
                                n_estimators,
                                ..base.gbt.clone()
                            }));
                        }
                    }
                }
            }
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument(format!("empty hyperparameter grid for {family}")));
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub family: Family,
    pub grid_search: bool,
    pub folds: usize,
    pub threshold: f64,
    pub lr: LrParams,
    pub mlp: MlpParams,
    pub rf: RfParams,
    pub gbt: GbtParams,
    pub grid: HyperGrid,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            family: Family::Gbt,
            grid_search: false,
            folds: 5,
            threshold: 0.5,
            lr: LrParams::default(),
            mlp: MlpParams::default(),
            rf: RfParams::default(),
            gbt: GbtParams::default(),
            grid: HyperGrid::default(),
        }
    }
}

impl TrainConfig {
    /// The configured (non-searched) parameters for `family`.
    pub fn params_for(&self, family: Family) -> Hyperparams {
        match family {
            Family::Lr => Hyperparams::Lr(self.lr.clone()),
            Family::Mlp => Hyperparams::Mlp(self.mlp.clone()),
            Family::Rf => Hyperparams::Rf(self.rf.clone()),
            Family::Gbt => Hyperparams::Gbt(self.gbt.clone()),
        }
    }
}

/// Per-feature z-scoring. Features with zero variance on the training rows are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub used: Vec<bool>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let p = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        let mut std = vec![0.0; p];
        for f in 0..p {
            // scaled by the largest magnitude so extreme finite values cannot overflow
            let scale = rows.iter().map(|r| r[f].abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                continue;
            }
            let m = rows.iter().map(|r| r[f] / scale).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[f] / scale - m).powi(2)).sum::<f64>() / n;
            mean[f] = m * scale;
            std[f] = var.sqrt() * scale;
        }
        let used = std.iter().map(|&s| s > 1e-12 && s.is_finite()).collect();
        Standardizer { mean, std, used }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .filter(|(f, _)| self.used[*f])
            .map(|(f, &v)| (v - self.mean[f]) / self.std[f])
            .collect()
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.used.len()).filter(|&f| !self.used[f]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lr(Logistic),
    Mlp(Mlp),
    Rf(Forest),
    Gbt(Boosted),
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Lr(_) => Family::Lr,
            Model::Mlp(_) => Family::Mlp,
            Model::Rf(_) => Family::Rf,
            Model::Gbt(_) => Family::Gbt,
        }
    }

    fn predict_proba(&self, z: &[f64]) -> f64 {
        let p = match self {
            Model::Lr(m) => m.predict_proba(z),
            Model::Mlp(m) => m.predict_proba(z),
            Model::Rf(m) => m.predict_proba(z),
            Model::Gbt(m) => m.predict_proba(z),
        };
        if p.is_nan() {
            0.5
        } else {
            p.clamp(0.0, 1.0)
        }
    }
}

/// A trained classifier together with the input layout it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector {
    pub feature_names: Vec<String>,
    /// Feature extraction settings the training data was produced with, when known.
    pub feature_spec: Option<FeatureSpec>,
    pub hyperparams: Hyperparams,
    pub standardizer: Standardizer,
    pub threshold: f64,
    pub model: Model,
}

fn check_finite(rows: &[Vec<f64>]) -> Result<()> {
    for (r, row) in rows.iter().enumerate() {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: r, column: c });
        }
    }
    Ok(())
}

/// Fits one detector. The result depends only on `(dataset, params, seed)`.
pub fn train(dataset: &Dataset, params: &Hyperparams, seed: u64) -> Result<TrainedDetector> {
    let counts = dataset.class_counts();
    if counts.grounded == 0 || counts.hallucinated == 0 {
        return Err(Error::SingleClass);
    }
    let raw = dataset.matrix();
    check_finite(&raw)?;
    let standardizer = Standardizer::fit(&raw);
    if !standardizer.dropped().is_empty() {
        log::info!(
            "dropping zero-variance features: {:?}",
            standardizer
                .dropped()
                .iter()
                .map(|&f| &dataset.feature_names[f])
                .collect::<Vec<_>>()
        );
    }
    if !standardizer.used.iter().any(|&u| u) {
        return Err(Error::DegenerateInput("no feature varies across the training rows".into()));
    }
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.transform(r)).collect();
    let y = dataset.targets();
    let model = match params {
        Hyperparams::Lr(p) => Model::Lr(Logistic::fit(&x, &y, p)),
        Hyperparams::Mlp(p) => Model::Mlp(Mlp::fit(&x, &y, p, seed)),
        Hyperparams::Rf(p) => Model::Rf(Forest::fit(&x, &y, p, seed)),
        Hyperparams::Gbt(p) => Model::Gbt(Boosted::fit(&x, &y, p)),
    };
    Ok(TrainedDetector {
        feature_names: dataset.feature_names.clone(),
        feature_spec: None,
        hyperparams: params.clone(),
        standardizer,
        threshold: 0.5,
        model,
    })
}

/// Trains `family` as configured, grid-searching over `config.grid` first when
/// `config.grid_search` is set. The chosen point is refit on all of `dataset`.
pub fn fit_configured(
    dataset: &Dataset,
    config: &TrainConfig,
    family: Family,
    seed: u64,
) -> Result<(TrainedDetector, Option<CvReport>)> {
    let (params, report) = if config.grid_search {
        let grid = config.grid.expand(family, config)?;
        let (best, report) = grid_search(dataset, &grid, config.folds, seed)?;
        (best, Some(report))
    } else {
        (config.params_for(family), None)
    };
    let detector = train(dataset, &params, seed)?.with_threshold(config.threshold)?;
    Ok((detector, report))
}

/// Inference output for one token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenScore {
    pub token_id: String,
    pub object_text: String,
    pub p_hallucination: f64,
    pub ads: Vec<f64>,
    pub cgc: Vec<f64>,
}

impl TrainedDetector {
    /// Scores every trace regardless of label, with the detector's own
    /// feature spec when it carries one and `fallback` otherwise.
    pub fn score_traces(&self, traces: &[TokenTrace], fallback: &FeatureSpec) -> Result<Vec<TokenScore>> {
        if traces.is_empty() {
            return Ok(Vec::new());
        }
        let spec = self.feature_spec.as_ref().unwrap_or(fallback);
        let (layout, feats) = compute_features(traces, spec)?;
        let rows: Vec<Vec<f64>> = feats.iter().map(TokenFeatures::concat).collect();
        let probs = self.predict_proba(&layout.names, &rows)?;
        Ok(feats
            .into_iter()
            .zip(probs)
            .map(|(f, p)| TokenScore {
                token_id: f.token_id,
                object_text: f.object_text,
                p_hallucination: p,
                ads: f.ads,
                cgc: f.cgc,
            })
            .collect())
    }

    pub fn family(&self) -> Family {
        self.model.family()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn check_layout(&self, names: &[String]) -> Result<()> {
        if names == self.feature_names.as_slice() {
            return Ok(());
        }
        let missing = self
            .feature_names
            .iter()
            .filter(|n| !names.contains(n))
            .cloned()
            .collect();
        let extra = names
            .iter()
            .filter(|n| !self.feature_names.contains(n))
            .cloned()
            .collect();
        Err(Error::LayoutMismatch { missing, extra })
    }

    /// Probability of the hallucinated class for each row laid out as `names`.
    pub fn predict_proba(&self, names: &[String], rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_layout(names)?;
        check_finite(rows)?;
        Ok(rows
            .iter()
            .map(|r| self.model.predict_proba(&self.standardizer.transform(r)))
            .collect())
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.predict_proba(&dataset.feature_names, &dataset.matrix())
    }
}
