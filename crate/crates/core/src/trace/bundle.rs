//! Trace bundle: a directory holding `manifest.json` and `tensors.bin`.
//!
//! `tensors.bin` layout (little-endian):
//! - magic `GCHK` (4 bytes)
//! - format version: u16
//! - one record per token, in manifest order. A record is, for each layer in
//!   order: attention (`H*W` f32), patch embeddings (`H*W*d` f32, row-major),
//!   token embedding (`d` f32).
//!
//! `offset_bytes` in the manifest is measured from the start of `tensors.bin`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, Label, LayerSlice, TokenTrace};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GCHK";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 6;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u16,
    pub model: String,
    pub num_layers: usize,
    /// `[height, width]` of the patch grid.
    pub grid: [usize; 2],
    pub embed_dim: usize,
    /// Decoder layer index of each recorded slice, shared by all tokens.
    pub layer_indices: Vec<u32>,
    pub tokens: Vec<ManifestToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestToken {
    pub token_id: String,
    pub object_text: String,
    pub label: Label,
    pub offset_bytes: u64,
    pub length_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BundleSummary {
    pub tokens: usize,
    pub num_layers: usize,
    pub manifest_bytes: u64,
    pub tensor_bytes: u64,
}

impl Manifest {
    fn record_floats(&self) -> u64 {
        let patches = (self.grid[0] * self.grid[1]) as u64;
        self.num_layers as u64 * (patches + patches * self.embed_dim as u64 + self.embed_dim as u64)
    }
}

/// Writes `traces` as a bundle under `destination`, creating the directory.
///
/// Every trace is validated first and all traces must share layer indices,
/// grid dimensions and embedding dimension; nothing is written otherwise.
pub fn write_bundle(traces: &[TokenTrace], destination: &Path, model: &str) -> Result<BundleSummary> {
    for t in traces {
        t.validate()?;
    }
    let (layer_indices, grid, embed_dim) = match traces.first() {
        Some(first) => {
            let dims = first.grid_dims();
            (first.layer_indices(), [dims.0, dims.1], first.embed_dim())
        }
        None => (Vec::new(), [0, 0], 0),
    };
    for t in traces.iter().skip(1) {
        let reject = |reason: String| Error::InvalidTrace {
            token_id: t.token_id.clone(),
            reason,
        };
        if t.layer_indices() != layer_indices {
            return Err(reject("layer indices differ from the first trace".into()));
        }
        let dims = t.grid_dims();
        if [dims.0, dims.1] != grid || t.embed_dim() != embed_dim {
            return Err(reject("grid or embedding dimensions differ from the first trace".into()));
        }
    }

    let mut manifest = Manifest {
        version: FORMAT_VERSION,
        model: model.to_string(),
        num_layers: layer_indices.len(),
        grid,
        embed_dim,
        layer_indices,
        tokens: Vec::with_capacity(traces.len()),
    };

    fs::create_dir_all(destination).map_err(|e| Error::io(destination, e))?;
    let tensors_path = destination.join(TENSORS_FILE);
    let file = fs::File::create(&tensors_path).map_err(|e| Error::io(&tensors_path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(&tensors_path, e);

    out.write_all(MAGIC).map_err(io_err)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    let mut offset = HEADER_LEN;
    for t in traces {
        let mut length = 0u64;
        for layer in &t.layers {
            for chunk in [
                layer.attention.values(),
                &layer.patch_embeddings[..],
                &layer.token_embedding[..],
            ] {
                for v in chunk {
                    out.write_all(&v.to_le_bytes()).map_err(io_err)?;
                }
                length += 4 * chunk.len() as u64;
            }
        }
        manifest.tokens.push(ManifestToken {
            token_id: t.token_id.clone(),
            object_text: t.object_text.clone(),
            label: t.label,
            offset_bytes: offset,
            length_bytes: length,
        });
        offset += length;
    }
    out.flush().map_err(io_err)?;

    let manifest_path = destination.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, &json).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(BundleSummary {
        tokens: traces.len(),
        num_layers: manifest.num_layers,
        manifest_bytes: json.len() as u64,
        tensor_bytes: offset,
    })
}

pub fn read_manifest(source: &Path) -> Result<Manifest> {
    let path = source.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.version.into(),
            supported: FORMAT_VERSION.into(),
        });
    }
    if manifest.layer_indices.len() != manifest.num_layers {
        return Err(Error::Consistency(format!(
            "num_layers = {} but {} layer indices listed",
            manifest.num_layers,
            manifest.layer_indices.len()
        )));
    }
    Ok(manifest)
}

/// Reads a bundle written by [`write_bundle`], re-validating every trace.
pub fn read_bundle(source: &Path) -> Result<Vec<TokenTrace>> {
    let manifest = read_manifest(source)?;
    let tensors_path: PathBuf = source.join(TENSORS_FILE);
    let bytes = fs::read(&tensors_path).map_err(|e| Error::io(&tensors_path, e))?;

    if bytes.len() < HEADER_LEN as usize || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: missing GCHK magic",
            tensors_path.display()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version.into(),
            supported: FORMAT_VERSION.into(),
        });
    }
    if version != manifest.version {
        return Err(Error::Consistency(format!(
            "manifest version {} != payload version {version}",
            manifest.version
        )));
    }

    let expected_len = 4 * manifest.record_floats();
    let [height, width] = manifest.grid;
    let patches = height * width;
    let d = manifest.embed_dim;
    let mut cursor = HEADER_LEN;
    let mut traces = Vec::with_capacity(manifest.tokens.len());
    for entry in &manifest.tokens {
        if entry.offset_bytes != cursor {
            return Err(Error::Consistency(format!(
                "token `{}` starts at byte {} but previous record ends at {cursor}",
                entry.token_id, entry.offset_bytes
            )));
        }
        if entry.length_bytes != expected_len {
            return Err(Error::Consistency(format!(
                "token `{}` has length {} bytes, layout requires {expected_len}",
                entry.token_id, entry.length_bytes
            )));
        }
        let end = cursor + entry.length_bytes;
        if end > bytes.len() as u64 {
            return Err(Error::Corruption {
                offset: bytes.len() as u64,
                message: format!(
                    "payload truncated inside record `{}` (needs {end} bytes)",
                    entry.token_id
                ),
            });
        }
        let mut floats = bytes[cursor as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
        let mut layers = Vec::with_capacity(manifest.num_layers);
        for &layer_index in &manifest.layer_indices {
            let attention = Grid::new(height, width, take(patches))?;
            let patch_embeddings = take(patches * d);
            let token_embedding = take(d);
            layers.push(LayerSlice {
                layer_index,
                attention,
                token_embedding,
                patch_embeddings,
            });
        }
        let trace = TokenTrace {
            token_id: entry.token_id.clone(),
            object_text: entry.object_text.clone(),
            label: entry.label,
            layers,
        };
        trace.validate()?;
        traces.push(trace);
        cursor = end;
    }
    if cursor != bytes.len() as u64 {
        return Err(Error::Consistency(format!(
            "manifest lists {} records ending at byte {cursor}, payload has {} bytes",
            manifest.tokens.len(),
            bytes.len()
        )));
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(token_id: &str) -> TokenTrace {
        let layer = |layer_index| LayerSlice {
            layer_index,
            attention: Grid::new(2, 2, vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
            token_embedding: vec![1.0, -2.0, 0.5],
            patch_embeddings: (0..12).map(|i| i as f32 * 0.25).collect(),
        };
        TokenTrace {
            token_id: token_id.into(),
            object_text: "cat".into(),
            label: Label::Hallucinated,
            layers: vec![layer(4), layer(9)],
        }
    }

    #[test]
    fn one_trace_layout_size() {
        let dir = tempfile::tempdir().unwrap();
        let summary = write_bundle(&[sample("a")], dir.path(), "test").unwrap();
        // 2 layers * (4 + 4*3 + 3) floats
        assert_eq!(summary.tensor_bytes, HEADER_LEN + 38 * 4);
        let bytes = fs::read(dir.path().join(TENSORS_FILE)).unwrap();
        assert_eq!(bytes.len(), 6 + 152);
        assert_eq!(&bytes[..4], b"GCHK");
        assert_eq!(&bytes[4..6], &[1, 0]);
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, vec![sample("a")]);
        assert_eq!(back[0].num_layers(), 2);
    }

    #[test]
    fn empty_bundle_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let summary = write_bundle(&[], dir.path(), "test").unwrap();
        assert_eq!(summary.tokens, 0);
        assert_eq!(summary.tensor_bytes, HEADER_LEN);
        assert!(read_bundle(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&[sample("a"), sample("b")], dir.path(), "test").unwrap();
        let path = dir.path().join(TENSORS_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        match read_bundle(dir.path()).unwrap_err() {
            Error::Corruption { offset, .. } => assert_eq!(offset, bytes.len() as u64 - 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&[sample("a")], dir.path(), "test").unwrap();
        let path = dir.path().join(TENSORS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Format(_))));
        bytes[0] = b'G';
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&[sample("a"), sample("b")], dir.path(), "test").unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let mut manifest: Manifest = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
        manifest.tokens.pop();
        fs::write(&mpath, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::Consistency(_))));
    }

    #[test]
    fn invalid_values_on_disk_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&[sample("a")], dir.path(), "test").unwrap();
        let path = dir.path().join(TENSORS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[6..10].copy_from_slice(&(-1.0f32).to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = read_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidTrace { ref token_id, .. } if token_id == "a"));
    }

    #[test]
    fn write_rejects_invalid_trace_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = sample("bad-one");
        bad.layers[1].token_embedding.pop();
        let err = write_bundle(&[sample("a"), bad], dir.path(), "test").unwrap_err();
        assert!(err.to_string().contains("bad-one"));
    }

    #[test]
    fn write_rejects_mismatched_layer_sets() {
        let dir = tempfile::tempdir().unwrap();
        let mut other = sample("b");
        other.layers[1].layer_index = 10;
        assert!(write_bundle(&[sample("a"), other], dir.path(), "test").is_err());
    }
}
