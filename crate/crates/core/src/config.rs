//! Shared run configuration, read from one JSON file with a section per stage.
//!
//! Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ads::AdsConfig;
use crate::cgc::CgcConfig;
use crate::classifiers::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::features::FeatureConfig;
use crate::synth::SynthConfig;

/// A set of decoder layers, by layer index. Serialized as `"all"` or a list of indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSelection {
    #[default]
    All,
    Indices(Vec<u32>),
}

impl LayerSelection {
    /// Inclusive range of layer indices.
    pub fn range(first: u32, last: u32) -> Self {
        LayerSelection::Indices((first..=last).collect())
    }

    pub fn contains(&self, layer_index: u32) -> bool {
        match self {
            LayerSelection::All => true,
            LayerSelection::Indices(v) => v.contains(&layer_index),
        }
    }

    /// Positions within `available` selected by `self`, in `available` order.
    /// Every requested index must exist.
    pub fn resolve(&self, available: &[u32]) -> Result<Vec<usize>> {
        if let LayerSelection::Indices(wanted) = self {
            let missing: Vec<String> = wanted
                .iter()
                .filter(|w| !available.contains(w))
                .map(u32::to_string)
                .collect();
            if !missing.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "layers [{}] not present in the bundle",
                    missing.join(", ")
                )));
            }
        }
        Ok(available
            .iter()
            .enumerate()
            .filter(|(_, &l)| self.contains(l))
            .map(|(i, _)| i)
            .collect())
    }

    pub fn intersect(&self, other: &LayerSelection) -> LayerSelection {
        match (self, other) {
            (LayerSelection::All, o) => o.clone(),
            (s, LayerSelection::All) => s.clone(),
            (LayerSelection::Indices(a), LayerSelection::Indices(b)) => {
                LayerSelection::Indices(a.iter().copied().filter(|l| b.contains(l)).collect())
            }
        }
    }
}

/// Parses `all`, or comma-separated indices and inclusive ranges such as `1,3-5`.
impl std::str::FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(LayerSelection::All);
        }
        let bad = || Error::InvalidArgument(format!("bad layer selection `{s}`"));
        let mut out = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                    if a > b {
                        return Err(bad());
                    }
                    out.extend(a..=b);
                }
                None => out.push(part.parse().map_err(|_| bad())?),
            }
        }
        out.dedup();
        Ok(LayerSelection::Indices(out))
    }
}

impl Serialize for LayerSelection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LayerSelection::All => s.serialize_str("all"),
            LayerSelection::Indices(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for LayerSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Keyword(String),
            List(Vec<u32>),
        }
        match Raw::deserialize(d)? {
            Raw::Keyword(k) if k == "all" => Ok(LayerSelection::All),
            Raw::Keyword(k) => Err(serde::de::Error::custom(format!(
                "expected \"all\" or a list of layer indices, got \"{k}\""
            ))),
            Raw::List(v) => Ok(LayerSelection::Indices(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses available parallelism. Never affects results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub ads: AdsConfig,
    pub cgc: CgcConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The configuration without execution-only knobs, for reproducibility records.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.threads = None;
        serde_json::to_value(c).expect("config serializes")
    }
}
