// SPDX-License-Identifier: MIT OR Apache-2.0

//! Paired speech/text activation container.
//!
//! A corpus is a JSON manifest plus one raw payload file per sample and
//! modality. Each payload holds `L + 1` layer matrices of shape `T x d`
//! (layer 0 is the embedding/adapter output) as little-endian `f32`,
//! row-major, layer-major, with no header or padding. Payload paths are
//! resolved relative to the manifest's directory.
//!
//! Values are widened to `f64` on decode; writing narrows back to `f32`, so
//! a decode/encode cycle reproduces the payload bytes exactly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_parent, Error, Result};
use crate::matrix::Matrix;

pub const MANIFEST_VERSION: u32 = 1;
const F32_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dim: usize,
    pub layer_count: usize,
    pub samples: Vec<SampleEntry>,
    /// Free-form provenance (span policy, intervention notes, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub speech_frames: usize,
    pub text_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_token_strings: Option<Vec<String>>,
    #[serde(default)]
    pub speech_payload: Option<PathBuf>,
    #[serde(default)]
    pub text_payload: Option<PathBuf>,
    /// Set when layers `1..=L` of the speech payload no longer follow from
    /// layer 0 (after an embedding intervention).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stale: bool,
}

impl SampleEntry {
    pub fn frames(&self, modality: Modality) -> usize {
        match modality {
            Modality::Speech => self.speech_frames,
            Modality::Text => self.text_tokens,
        }
    }

    pub fn payload(&self, modality: Modality) -> Option<&Path> {
        match modality {
            Modality::Speech => self.speech_payload.as_deref(),
            Modality::Text => self.text_payload.as_deref(),
        }
    }
}

impl Manifest {
    pub fn new(dim: usize, layer_count: usize) -> Self {
        Self {
            version: MANIFEST_VERSION,
            dim,
            layer_count,
            samples: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    /// Expected payload length in bytes for a sequence of `frames` rows.
    pub fn payload_len(&self, frames: usize) -> u64 {
        (self.layer_count as u64 + 1) * frames as u64 * self.dim as u64 * F32_BYTES
    }

    pub fn sample(&self, id: &str) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate_schema(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::SchemaViolation(format!(
                "unsupported version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.dim == 0 {
            return Err(Error::SchemaViolation("dim must be positive".into()));
        }
        if self.layer_count == 0 {
            return Err(Error::SchemaViolation("layer_count must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.id.is_empty() {
                return Err(Error::SchemaViolation("empty sample id".into()));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::SchemaViolation(format!("duplicate sample id '{}'", s.id)));
            }
            if s.speech_frames == 0 || s.text_tokens == 0 {
                return Err(Error::SchemaViolation(format!(
                    "sample '{}' must have at least one speech frame and one text token",
                    s.id
                )));
            }
            if let Some(tokens) = &s.text_token_strings {
                if tokens.len() != s.text_tokens {
                    return Err(Error::SchemaViolation(format!(
                        "sample '{}' lists {} token strings for {} text tokens",
                        s.id,
                        tokens.len(),
                        s.text_tokens
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-layer hidden states of one input in one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    modality: Modality,
    layers: Vec<Matrix>,
}

impl LayerStack {
    /// Validates uniform shapes and finite entries.
    pub fn new(modality: Modality, layers: Vec<Matrix>) -> Result<Self> {
        check_layers(&layers)?;
        Ok(Self { modality, layers })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Number of block outputs `L`, excluding the embedding layer.
    pub fn layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn frames(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// Layer `l` in `0..=L`.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    /// Block outputs `1..=L` paired with their layer index.
    pub fn block_layers(&self) -> impl Iterator<Item = (usize, &Matrix)> + '_ {
        self.layers.iter().enumerate().skip(1)
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }
}

fn check_layers(layers: &[Matrix]) -> Result<()> {
    let first = layers
        .first()
        .ok_or_else(|| Error::ShapeMismatch("a layer stack needs at least one layer".into()))?;
    let shape = first.shape();
    for (l, m) in layers.iter().enumerate() {
        if m.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "layer {l} is {}x{}, layer 0 is {}x{}",
                m.rows(),
                m.cols(),
                shape.0,
                shape.1
            )));
        }
        if let Some((row, col)) = m.first_non_finite() {
            return Err(Error::NonFiniteValue { layer: l, row, col });
        }
    }
    Ok(())
}

/// A loaded manifest together with the directory its payload paths are relative to.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    pub manifest: Manifest,
    base_dir: PathBuf,
}

/// Parses and validates a manifest, stat-checking every payload file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ActivationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
    manifest.validate_schema()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let set = ActivationSet { manifest, base_dir };
    for sample in &set.manifest.samples {
        for modality in [Modality::Speech, Modality::Text] {
            if let Some(rel) = sample.payload(modality) {
                let full = set.base_dir.join(rel);
                let actual = fs::metadata(&full).map_err(|e| Error::io(&full, e))?.len();
                let expected = set.manifest.payload_len(sample.frames(modality));
                if actual != expected {
                    return Err(Error::SizeMismatch {
                        path: full,
                        expected,
                        actual,
                    });
                }
            }
        }
    }
    Ok(set)
}

impl ActivationSet {
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn payload_path(&self, id: &str, modality: Modality) -> Result<PathBuf> {
        self.manifest
            .sample(id)
            .and_then(|s| s.payload(modality))
            .map(|rel| self.base_dir.join(rel))
            .ok_or_else(|| Error::UnknownSample {
                id: id.to_string(),
                modality,
            })
    }

    /// Sample ids in lexicographic order, the reduction order for every aggregate.
    pub fn sorted_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.manifest.samples.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn read_sample(&self, id: &str, modality: Modality) -> Result<LayerStack> {
        let entry = self.manifest.sample(id).ok_or_else(|| Error::UnknownSample {
            id: id.to_string(),
            modality,
        })?;
        let path = self.payload_path(id, modality)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let frames = entry.frames(modality);
        let expected = self.manifest.payload_len(frames);
        if bytes.len() as u64 != expected {
            return Err(Error::SizeMismatch {
                path,
                expected,
                actual: bytes.len() as u64,
            });
        }
        decode_layers(&bytes, self.manifest.layer_count + 1, frames, self.manifest.dim)
            .and_then(|layers| LayerStack::new(modality, layers))
            .map_err(|e| e.in_sample(id))
    }

    pub fn read_pair(&self, id: &str) -> Result<(LayerStack, LayerStack)> {
        Ok((
            self.read_sample(id, Modality::Speech)?,
            self.read_sample(id, Modality::Text)?,
        ))
    }
}

fn decode_layers(bytes: &[u8], layers: usize, rows: usize, cols: usize) -> Result<Vec<Matrix>> {
    let per_layer = rows * cols;
    let values: Vec<f64> = bytes
        .chunks_exact(F32_BYTES as usize)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    (0..layers)
        .map(|l| Matrix::from_vec(rows, cols, values[l * per_layer..(l + 1) * per_layer].to_vec()))
        .collect()
}

/// Encodes a layer stack into the payload byte layout.
pub fn encode_layers(layers: &[Matrix]) -> Result<Vec<u8>> {
    check_layers(layers)?;
    let mut out = Vec::with_capacity(layers.iter().map(|m| m.as_slice().len() * 4).sum());
    for m in layers {
        for &v in m.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes a payload file. Values are narrowed to `f32`.
pub fn write_sample(layers: &[Matrix], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_layers(layers)?;
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate_schema()?;
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    json.push('\n');
    ensure_parent(path)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}
