//! In-memory trace types and their on-disk representations.
//!
//! A [`TokenTrace`] holds everything captured for one generated object token:
//! for every recorded decoder layer, the head-averaged attention restricted
//! to image-patch keys, the token hidden state and the hidden states at every
//! patch position.

mod bundle;
mod labels;

pub use bundle::{read_bundle, read_manifest, write_bundle, BundleSummary, Manifest, ManifestToken, FORMAT_VERSION, MAGIC, MANIFEST_FILE, TENSORS_FILE};
pub use labels::{load_labels, parse_labels, write_labels, LabelMap, Labels};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D grid over the image patch layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

/// Attention mass over image patches, in 64-bit precision for metric math.
pub type PatchGrid = Grid<f64>;

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of patches, `height * width`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid<f64> {
    /// Builds an attention grid, rejecting negative or non-finite entries.
    pub fn attention(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(p) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "attention value at patch {p} is negative or non-finite"
            )));
        }
        Self::new(height, width, values)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl Grid<f32> {
    pub fn to_f64(&self) -> Grid<f64> {
        self.map(f64::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Grounded,
    Hallucinated,
    Unknown,
}

impl Label {
    /// Hallucinated is the positive class everywhere.
    pub fn is_positive(self) -> bool {
        self == Label::Hallucinated
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Grounded => "grounded",
            Label::Hallucinated => "hallucinated",
            Label::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "grounded" => Some(Label::Grounded),
            "hallucinated" => Some(Label::Hallucinated),
            "unknown" => Some(Label::Unknown),
            _ => None,
        }
    }
}

/// Introspection data of one token at one decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlice {
    pub layer_index: u32,
    /// Head-averaged attention over patch keys.
    pub attention: Grid<f32>,
    pub token_embedding: Vec<f32>,
    /// `|P| x d`, row `p` is the hidden state at patch `p` (row-major over the grid).
    pub patch_embeddings: Vec<f32>,
}

impl LayerSlice {
    pub fn embed_dim(&self) -> usize {
        self.token_embedding.len()
    }

    pub fn num_patches(&self) -> usize {
        self.attention.len()
    }

    pub fn patch_embedding(&self, patch: usize) -> &[f32] {
        let d = self.embed_dim();
        &self.patch_embeddings[patch * d..(patch + 1) * d]
    }

    /// Number of f32 values this slice occupies in the tensor payload.
    pub fn float_count(&self) -> usize {
        self.attention.len() + self.patch_embeddings.len() + self.token_embedding.len()
    }

    fn check(&self) -> std::result::Result<(), String> {
        let d = self.embed_dim();
        if d == 0 {
            return Err(format!("layer {}: empty token embedding", self.layer_index));
        }
        if self.patch_embeddings.len() != self.num_patches() * d {
            return Err(format!(
                "layer {}: patch embedding matrix has {} values, expected {}x{}",
                self.layer_index,
                self.patch_embeddings.len(),
                self.num_patches(),
                d
            ));
        }
        if let Some(p) = self
            .attention
            .values()
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(format!(
                "layer {}: attention at patch {p} is negative or non-finite",
                self.layer_index
            ));
        }
        if self.token_embedding.iter().any(|v| !v.is_finite()) {
            return Err(format!("layer {}: non-finite token embedding", self.layer_index));
        }
        if self.patch_embeddings.iter().any(|v| !v.is_finite()) {
            return Err(format!("layer {}: non-finite patch embedding", self.layer_index));
        }
        Ok(())
    }
}

/// All recorded layers for one generated object token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    pub token_id: String,
    pub object_text: String,
    pub label: Label,
    pub layers: Vec<LayerSlice>,
}

impl TokenTrace {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_indices(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.layer_index).collect()
    }

    /// Grid dimensions shared by every layer. Panics on a trace with no layers.
    pub fn grid_dims(&self) -> (usize, usize) {
        self.layers[0].attention.dims()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[0].embed_dim()
    }

    /// Checks every structural invariant; the error names this token.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|reason| Error::InvalidTrace {
            token_id: self.token_id.clone(),
            reason,
        })
    }

    fn check(&self) -> std::result::Result<(), String> {
        let first = self.layers.first().ok_or("trace has no layers")?;
        let dims = first.attention.dims();
        let d = first.embed_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            if layer.attention.dims() != dims {
                return Err(format!(
                    "layer {} grid {:?} differs from {:?}",
                    layer.layer_index,
                    layer.attention.dims(),
                    dims
                ));
            }
            if layer.embed_dim() != d {
                return Err(format!(
                    "layer {} embedding dimension {} differs from {d}",
                    layer.layer_index,
                    layer.embed_dim()
                ));
            }
            if i > 0 && layer.layer_index <= self.layers[i - 1].layer_index {
                return Err(format!(
                    "layer indices not strictly increasing at position {i}"
                ));
            }
        }
        Ok(())
    }
}
