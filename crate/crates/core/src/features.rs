//! Per-token feature vectors `[ADS block ‖ CGC block]` and labeled datasets.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ads::{ads_layer, AdsConfig};
use crate::cgc::{cgc_layer, similarity_map, CgcConfig};
use crate::config::LayerSelection;
use crate::error::{Error, Result};
use crate::trace::{Label, LabelMap, TokenTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub layer_subset: LayerSelection,
}

/// Everything that determines the feature layout and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub ads: AdsConfig,
    pub cgc: CgcConfig,
    pub features: FeatureConfig,
}

/// Column layout resolved against a concrete list of layer indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    /// Positions (into the trace's layer list) feeding the ADS block.
    pub ads_positions: Vec<usize>,
    pub cgc_positions: Vec<usize>,
    pub names: Vec<String>,
}

impl FeatureSpec {
    pub fn layout(&self, layer_indices: &[u32]) -> Result<FeatureLayout> {
        let subset = &self.features.layer_subset;
        let ads_positions = self.ads.layers.intersect(subset).resolve(layer_indices)?;
        let cgc_positions = self.cgc.layers.intersect(subset).resolve(layer_indices)?;
        if ads_positions.is_empty() && cgc_positions.is_empty() {
            return Err(Error::InvalidArgument("layer selection leaves no features".into()));
        }
        let names = ads_positions
            .iter()
            .map(|&p| format!("ads_L{}", layer_indices[p]))
            .chain(cgc_positions.iter().map(|&p| format!("cgc_L{}", layer_indices[p])))
            .collect();
        Ok(FeatureLayout {
            ads_positions,
            cgc_positions,
            names,
        })
    }
}

/// Features of one token, before labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub token_id: String,
    pub object_text: String,
    pub ads: Vec<f64>,
    pub cgc: Vec<f64>,
}

impl TokenFeatures {
    pub fn concat(&self) -> Vec<f64> {
        self.ads.iter().chain(&self.cgc).copied().collect()
    }
}

pub fn token_features(trace: &TokenTrace, spec: &FeatureSpec, layout: &FeatureLayout) -> Result<TokenFeatures> {
    let compute = || -> Result<TokenFeatures> {
        let ads = layout
            .ads_positions
            .iter()
            .map(|&p| {
                let layer = &trace.layers[p];
                ads_layer(layer, &spec.ads)
                    .map(|b| b.ads)
                    .map_err(|e| e.in_layer(layer.layer_index))
            })
            .collect::<Result<Vec<_>>>()?;
        let cgc = layout
            .cgc_positions
            .iter()
            .map(|&p| {
                let layer = &trace.layers[p];
                similarity_map(layer)
                    .and_then(|m| cgc_layer(&m, spec.cgc.top_k_percent))
                    .map_err(|e| e.in_layer(layer.layer_index))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenFeatures {
            token_id: trace.token_id.clone(),
            object_text: trace.object_text.clone(),
            ads,
            cgc,
        })
    };
    compute().map_err(|e| e.in_token(&trace.token_id))
}

/// Features for every trace, in input order. Traces must share layer indices.
pub fn compute_features(traces: &[TokenTrace], spec: &FeatureSpec) -> Result<(FeatureLayout, Vec<TokenFeatures>)> {
    let indices = traces.first().map(TokenTrace::layer_indices).unwrap_or_default();
    let layout = spec.layout(&indices)?;
    if let Some(t) = traces.iter().find(|t| t.layer_indices() != indices) {
        return Err(Error::InvalidTrace {
            token_id: t.token_id.clone(),
            reason: "layer indices differ from the first trace".into(),
        });
    }
    let rows = traces
        .par_iter()
        .map(|t| token_features(t, spec, &layout))
        .collect::<Result<Vec<_>>>()?;
    Ok((layout, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub token_id: String,
    pub values: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub grounded: usize,
    pub hallucinated: usize,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<FeatureVector>) -> Result<Self> {
        let width = feature_names.len();
        if let Some(i) = rows.iter().position(|r| r.values.len() != width) {
            return Err(Error::InvalidArgument(format!(
                "row {i} has {} values, expected {width}",
                rows[i].values.len()
            )));
        }
        Ok(Dataset { feature_names, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// `true` for hallucinated rows.
    pub fn targets(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label.is_positive()).collect()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn class_counts(&self) -> ClassCounts {
        let hallucinated = self.rows.iter().filter(|r| r.label.is_positive()).count();
        ClassCounts {
            grounded: self.rows.len() - hallucinated,
            hallucinated,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        let positions = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::InvalidArgument(format!("no column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            feature_names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureVector {
                    token_id: r.token_id.clone(),
                    values: positions.iter().map(|&p| r.values[p]).collect(),
                    label: r.label,
                })
                .collect(),
        })
    }

    /// Equality of names, values and labels; token ids are not persisted in CSV.
    pub fn same_content(&self, other: &Dataset) -> bool {
        self.feature_names == other.feature_names
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.label == b.label && a.values.len() == b.values.len()
                    && a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

/// Labels carried inside the bundle itself, skipping `unknown`.
pub fn bundle_labels(traces: &[TokenTrace]) -> LabelMap {
    traces
        .iter()
        .filter(|t| t.label != Label::Unknown)
        .map(|t| (t.token_id.clone(), t.label))
        .collect()
}

/// One row per labeled token, in bundle order. Tokens absent from `labels`
/// or labeled `unknown` are skipped; labeled ids absent from the bundle are an error.
pub fn build_features(traces: &[TokenTrace], labels: &LabelMap, spec: &FeatureSpec) -> Result<Dataset> {
    let present: BTreeSet<&str> = traces.iter().map(|t| t.token_id.as_str()).collect();
    let missing: Vec<String> = labels
        .keys()
        .filter(|id| !present.contains(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTokens(missing));
    }
    let selected: Vec<TokenTrace> = traces
        .iter()
        .filter(|t| matches!(labels.get(&t.token_id), Some(l) if *l != Label::Unknown))
        .cloned()
        .collect();
    let indices = traces.first().map(TokenTrace::layer_indices).unwrap_or_default();
    let (layout, feats) = if selected.is_empty() {
        (spec.layout(&indices)?, Vec::new())
    } else {
        compute_features(&selected, spec)?
    };
    let rows = feats
        .into_iter()
        .map(|f| FeatureVector {
            label: labels[&f.token_id],
            values: f.concat(),
            token_id: f.token_id,
        })
        .collect::<Vec<_>>();
    for (i, r) in rows.iter().enumerate() {
        if let Some(c) = r.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: c });
        }
    }
    Dataset::new(layout.names, rows)
}

/// Writes `feature_names..., label` with shortest round-trip float formatting.
pub fn export_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<&str> = dataset
        .feature_names
        .iter()
        .map(String::as_str)
        .chain(std::iter::once("label"))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in &dataset.rows {
        let mut record: Vec<String> = row.values.iter().map(|v| format!("{v:?}")).collect();
        record.push(row.label.as_str().to_string());
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let width = header.len();
    if width < 2 || &header[width - 1] != "label" {
        return Err(Error::Format(format!(
            "{}: header must end with a `label` column",
            path.display()
        )));
    }
    let feature_names: Vec<String> = header.iter().take(width - 1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let values = record
            .iter()
            .take(width - 1)
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match &record[width - 1] {
            "grounded" => Label::Grounded,
            "hallucinated" => Label::Hallucinated,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown label `{other}`"),
                })
            }
        };
        rows.push(FeatureVector {
            token_id: format!("row-{}", i + 1),
            values,
            label,
        });
    }
    Dataset::new(feature_names, rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}
