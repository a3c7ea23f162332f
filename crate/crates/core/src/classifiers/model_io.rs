//! Model file container (little-endian):
//!
//! ```text
//! "GCMD" | u16 version | u8 family tag
//! u32 descriptor length | descriptor JSON (feature names, feature spec, hyperparameters)
//! u64 payload length (count of f64) | payload f64...
//! ```
//!
//! The payload holds the threshold, the standardization statistics and the
//! family's parameters. Integers inside the payload (counts, node links,
//! feature indices) are stored as exactly representable f64 values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Boosted, Family, Forest, Hyperparams, Logistic, Mlp, Model, Node, Standardizer, TrainedDetector, Tree};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;

pub const MODEL_MAGIC: &[u8; 4] = b"GCMD";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    feature_names: Vec<String>,
    feature_spec: Option<FeatureSpec>,
    hyperparams: Hyperparams,
}

pub fn encode_model(d: &TrainedDetector) -> Result<Vec<u8>> {
    let descriptor = serde_json::to_vec(&Descriptor {
        feature_names: d.feature_names.clone(),
        feature_spec: d.feature_spec.clone(),
        hyperparams: d.hyperparams.clone(),
    })?;

    let mut p: Vec<f64> = vec![d.threshold, d.standardizer.mean.len() as f64];
    p.extend(&d.standardizer.mean);
    p.extend(&d.standardizer.std);
    p.extend(d.standardizer.used.iter().map(|&u| if u { 1.0 } else { 0.0 }));
    match &d.model {
        Model::Lr(m) => {
            p.push(m.weights.len() as f64);
            p.extend(&m.weights);
            p.push(m.intercept);
            p.push(m.gradient_norm);
        }
        Model::Mlp(m) => {
            p.extend([m.inputs as f64, m.hidden as f64, m.params.len() as f64]);
            p.extend(&m.params);
        }
        Model::Rf(m) => push_trees(&mut p, &m.trees),
        Model::Gbt(m) => {
            p.push(m.base_margin);
            p.push(m.learning_rate);
            push_trees(&mut p, &m.trees);
        }
    }

    let mut out = Vec::with_capacity(19 + descriptor.len() + 8 * p.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(d.family().tag());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(&descriptor);
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in p {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn push_trees(p: &mut Vec<f64>, trees: &[Tree]) {
    p.push(trees.len() as f64);
    for t in trees {
        p.push(t.nodes.len() as f64);
        for n in &t.nodes {
            match *n {
                Node::Leaf { value } => p.extend([0.0, value, 0.0, 0.0, 0.0]),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => p.extend([1.0, feature as f64, threshold, left as f64, right as f64]),
            }
        }
    }
}

struct Bytes<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Bytes<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Corruption {
                offset: self.data.len() as u64,
                message: format!("model file truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

struct Floats {
    values: Vec<f64>,
    pos: usize,
    base_offset: usize,
}

impl Floats {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Corruption {
            offset: (self.base_offset + 8 * self.pos) as u64,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<f64> {
        let v = *self
            .values
            .get(self.pos)
            .ok_or_else(|| self.corrupt("parameter payload ended early"))?;
        self.pos += 1;
        Ok(v)
    }

    fn count(&mut self, limit: usize) -> Result<usize> {
        let v = self.next()?;
        if v < 0.0 || v.fract() != 0.0 || v > limit as f64 {
            return Err(self.corrupt(format!("invalid count {v}")));
        }
        Ok(v as usize)
    }

    fn many(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.values.len() - self.pos < n {
            return Err(self.corrupt("parameter payload ended early"));
        }
        let s = self.values[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(s)
    }

    fn trees(&mut self, n_features: usize) -> Result<Vec<Tree>> {
        let n_trees = self.count(self.values.len())?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = self.count(self.values.len() / 5)?;
            if n_nodes == 0 {
                return Err(self.corrupt("empty tree"));
            }
            let mut nodes = Vec::with_capacity(n_nodes);
            for i in 0..n_nodes {
                let f = self.many(5)?;
                let node = if f[0] == 0.0 {
                    Node::Leaf { value: f[1] }
                } else {
                    let link = |v: f64| v.fract() == 0.0 && v > i as f64 && v < n_nodes as f64;
                    if f[0] != 1.0 || !link(f[3]) || !link(f[4]) || f[1].fract() != 0.0 || !(f[1] >= 0.0 && f[1] < n_features as f64) {
                        return Err(self.corrupt("malformed tree node"));
                    }
                    Node::Split {
                        feature: f[1] as usize,
                        threshold: f[2],
                        left: f[3] as usize,
                        right: f[4] as usize,
                    }
                };
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        Ok(trees)
    }
}

pub fn decode_model(data: &[u8]) -> Result<TrainedDetector> {
    let mut b = Bytes { data, pos: 0 };
    if b.take(4).map_err(|_| Error::Format("not a model file".into()))? != MODEL_MAGIC {
        return Err(Error::Format("missing GCMD magic".into()));
    }
    let version = u16::from_le_bytes(b.take(2)?.try_into().expect("2 bytes"));
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version.into(),
            supported: MODEL_VERSION.into(),
        });
    }
    let tag = b.take(1)?[0];
    let family = Family::from_tag(tag).ok_or_else(|| Error::Corruption {
        offset: 6,
        message: format!("unknown family tag {tag}"),
    })?;
    let desc_len = u32::from_le_bytes(b.take(4)?.try_into().expect("4 bytes")) as usize;
    let desc_offset = b.pos;
    let descriptor: Descriptor = serde_json::from_slice(b.take(desc_len)?).map_err(|e| Error::Corruption {
        offset: desc_offset as u64,
        message: format!("descriptor: {e}"),
    })?;
    if descriptor.hyperparams.family() != family {
        return Err(Error::Corruption {
            offset: desc_offset as u64,
            message: "descriptor family differs from header tag".into(),
        });
    }
    let n = u64::from_le_bytes(b.take(8)?.try_into().expect("8 bytes"));
    let base_offset = b.pos;
    let byte_len = n.checked_mul(8).filter(|&l| l <= (data.len() - b.pos) as u64).ok_or(Error::Corruption {
        offset: data.len() as u64,
        message: format!("payload declares {n} values but the file is shorter"),
    })?;
    let values: Vec<f64> = b
        .take(byte_len as usize)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if b.pos != data.len() {
        return Err(Error::Corruption {
            offset: b.pos as u64,
            message: "trailing bytes after payload".into(),
        });
    }

    let mut f = Floats {
        values,
        pos: 0,
        base_offset,
    };
    let threshold = f.next()?;
    let p = f.count(descriptor.feature_names.len())?;
    if p != descriptor.feature_names.len() {
        return Err(f.corrupt("standardizer width differs from feature layout"));
    }
    let mean = f.many(p)?;
    let std = f.many(p)?;
    let used: Vec<bool> = f.many(p)?.into_iter().map(|u| u != 0.0).collect();
    let n_used = used.iter().filter(|&&u| u).count();
    let model = match family {
        Family::Lr => {
            let k = f.count(p)?;
            let weights = f.many(k)?;
            Model::Lr(Logistic {
                weights,
                intercept: f.next()?,
                gradient_norm: f.next()?,
            })
        }
        Family::Mlp => {
            let inputs = f.count(p)?;
            let hidden = f.count(f.values.len())?;
            let len = f.count(f.values.len())?;
            if len != hidden * inputs + 2 * hidden + 1 {
                return Err(f.corrupt("perceptron parameter count mismatch"));
            }
            Model::Mlp(Mlp {
                inputs,
                hidden,
                params: f.many(len)?,
            })
        }
        Family::Rf => Model::Rf(Forest { trees: f.trees(n_used)? }),
        Family::Gbt => {
            let base_margin = f.next()?;
            let learning_rate = f.next()?;
            Model::Gbt(Boosted {
                base_margin,
                learning_rate,
                trees: f.trees(n_used)?,
            })
        }
    };
    if f.pos != f.values.len() {
        return Err(f.corrupt("unused values at end of payload"));
    }
    Ok(TrainedDetector {
        feature_names: descriptor.feature_names,
        feature_spec: descriptor.feature_spec,
        hyperparams: descriptor.hyperparams,
        standardizer: Standardizer { mean, std, used },
        threshold,
        model,
    })
}

pub fn save_model(detector: &TrainedDetector, path: &Path) -> Result<()> {
    let bytes = encode_model(detector)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedDetector> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
