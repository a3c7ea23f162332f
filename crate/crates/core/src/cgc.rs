//! Cross-modal Grounding Consistency: cosine similarity between the token
//! hidden state and every patch hidden state at the same layer, summarized
//! by the mean of the top-k% similarities.

use serde::{Deserialize, Serialize};

use crate::config::LayerSelection;
use crate::error::{EmbeddingRef, Error, Result};
use crate::grid::{percent_count, top_indices};
use crate::trace::{Grid, LayerSlice, TokenTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgcConfig {
    pub top_k_percent: f64,
    pub layers: LayerSelection,
}

impl Default for CgcConfig {
    fn default() -> Self {
        CgcConfig {
            top_k_percent: 5.0,
            layers: LayerSelection::All,
        }
    }
}

/// Per-patch cosine similarities laid out on the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap(pub Grid<f64>);

impl SimilarityMap {
    pub fn values(&self) -> &[f64] {
        self.0.values()
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn similarity_map(slice: &LayerSlice) -> Result<SimilarityMap> {
    let h = &slice.token_embedding;
    let h_norm = norm(h);
    if !(h_norm > 0.0) {
        return Err(Error::DegenerateEmbedding {
            which: EmbeddingRef::Token,
        });
    }
    let values = (0..slice.num_patches())
        .map(|p| {
            let v = slice.patch_embedding(p);
            let v_norm = norm(v);
            if !(v_norm > 0.0) {
                return Err(Error::DegenerateEmbedding {
                    which: EmbeddingRef::Patch(p),
                });
            }
            let dot: f64 = h
                .iter()
                .zip(v)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            Ok((dot / (h_norm * v_norm)).clamp(-1.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (rows, cols) = slice.attention.dims();
    Ok(SimilarityMap(Grid::new(rows, cols, values)?))
}

/// Mean of the `ceil(k/100 * |P|)` largest similarities, summed in descending order.
pub fn cgc_layer(map: &SimilarityMap, k_percent: f64) -> Result<f64> {
    let values = map.values();
    let count = percent_count(k_percent, values.len())?;
    let top = top_indices(values, count);
    let sum: f64 = top.iter().map(|&p| values[p]).sum();
    Ok(sum / count as f64)
}

pub fn cgc_vector(trace: &TokenTrace, k_percent: f64) -> Result<Vec<f64>> {
    trace
        .layers
        .iter()
        .map(|layer| {
            similarity_map(layer)
                .and_then(|m| cgc_layer(&m, k_percent))
                .map_err(|e| e.in_layer(layer.layer_index))
        })
        .collect()
}
