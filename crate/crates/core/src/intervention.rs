// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-level edits of speech embeddings.
//!
//! Each text token is paired with the speech frame its cosine path visits
//! most often across block layers (smallest frame on ties), and scored by
//! its mean cosine path value. A plan lists the `(token, frame)` pairs to
//! edit; a frame is edited at most once, on behalf of its highest-scoring
//! token.
//!
//! Edits apply to layer 0 (the embedding/adapter output). The block layers
//! of an edited speech payload are copied unchanged and the sample is
//! flagged `stale`: they only become meaningful again once the model is run
//! on the patched embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coarse::check_pair;
use crate::error::{ensure_parent, Error, Result};
use crate::metric::{norm, Metric};
use crate::numeric;
use crate::store::{write_manifest, ActivationSet, LayerStack, Manifest, Modality};
use crate::token::layer_paths;

pub const BOTTOM_K: usize = 3;

pub const SELECTION_RULE: &str =
    "frame = most frequent cosine-path frame over layers 1..L (smallest on ties); score = mean cosine path value over layers 1..L";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bottom3,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Angle,
    Length,
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bottom3" => Ok(Strategy::Bottom3),
            "all" => Ok(Strategy::All),
            other => Err(format!("unknown strategy '{other}' (expected bottom3 or all)")),
        }
    }
}

impl FromStr for Operator {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "angle" => Ok(Operator::Angle),
            "length" => Ok(Operator::Length),
            other => Err(format!("unknown operator '{other}' (expected angle or length)")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Bottom3 => "bottom3",
            Strategy::All => "all",
        })
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Angle => "angle",
            Operator::Length => "length",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanPair {
    pub text_index: usize,
    pub speech_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub sample_id: String,
    pub pairs: Vec<PlanPair>,
    pub strategy: Strategy,
    pub operator: Operator,
    #[serde(default)]
    pub selection_rule: String,
}

impl InterventionPlan {
    pub fn empty(sample_id: impl Into<String>, operator: Operator) -> Self {
        Self {
            sample_id: sample_id.into(),
            pairs: Vec::new(),
            strategy: Strategy::All,
            operator,
            selection_rule: SELECTION_RULE.to_string(),
        }
    }
}

/// Most frequent value, smallest on ties.
fn modal(values: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // equal counts rank the smaller frame higher
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
}

/// Per text token: `(frame, score)` from the cosine paths of layers `1..=L`.
pub fn token_scores(speech: &LayerStack, text: &LayerStack) -> Result<Vec<(usize, f64)>> {
    check_pair(speech, text)?;
    let paths = layer_paths(speech, text, Metric::Cos)?;
    Ok((0..text.frames())
        .map(|j| {
            let frame = modal(paths.iter().map(|p| p.indices[j])).expect("at least one layer");
            let values: Vec<f64> = paths.iter().map(|p| p.values[j]).collect();
            (frame, numeric::mean(&values).expect("at least one layer"))
        })
        .collect())
}

/// Chooses pairs from per-token `(frame, score)`.
///
/// `Bottom3` takes the three lowest-scoring text tokens first; frames shared
/// by several chosen tokens are then written once, so at most three frames
/// are touched.
pub fn select_from_scores(scores: &[(usize, f64)], strategy: Strategy) -> Vec<PlanPair> {
    let by_score = |a: &PlanPair, b: &PlanPair| a.score.total_cmp(&b.score).then(a.text_index.cmp(&b.text_index));
    let mut chosen: Vec<PlanPair> = scores
        .iter()
        .enumerate()
        .map(|(j, &(frame, score))| PlanPair {
            text_index: j,
            speech_index: frame,
            score,
        })
        .collect();
    if strategy == Strategy::Bottom3 {
        chosen.sort_by(by_score);
        chosen.truncate(BOTTOM_K);
    }
    // One partner per frame: highest score, then smallest text index.
    let mut by_frame: BTreeMap<usize, PlanPair> = BTreeMap::new();
    for candidate in chosen {
        by_frame
            .entry(candidate.speech_index)
            .and_modify(|kept| {
                let better = candidate.score > kept.score
                    || (candidate.score == kept.score && candidate.text_index < kept.text_index);
                if better {
                    *kept = candidate;
                }
            })
            .or_insert(candidate);
    }
    let mut pairs: Vec<PlanPair> = by_frame.into_values().collect();
    match strategy {
        Strategy::All => pairs.sort_by_key(|p| p.text_index),
        Strategy::Bottom3 => pairs.sort_by(by_score),
    }
    pairs
}

pub fn select_tokens(
    sample_id: &str,
    speech: &LayerStack,
    text: &LayerStack,
    strategy: Strategy,
    operator: Operator,
) -> Result<InterventionPlan> {
    let scores = token_scores(speech, text)?;
    Ok(InterventionPlan {
        sample_id: sample_id.to_string(),
        pairs: select_from_scores(&scores, strategy),
        strategy,
        operator,
        selection_rule: SELECTION_RULE.to_string(),
    })
}

fn nonzero_norm(v: &[f64], site: &str) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroVector { site: site.to_string() });
    }
    Ok(n)
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
            site: String::new(),
        });
    }
    Ok(())
}

/// Keeps the speech norm, takes the text direction: `|s| * t / |t|`.
pub fn angle_project(speech: &[f64], text: &[f64]) -> Result<Vec<f64>> {
    check_dims(speech, text)?;
    let ns = nonzero_norm(speech, "speech vector")?;
    let nt = nonzero_norm(text, "text vector")?;
    let scale = ns / nt;
    Ok(text.iter().map(|&t| t * scale).collect())
}

/// Keeps the speech direction, takes the text norm: `(|t| / |s|) * s`.
pub fn length_normalize(speech: &[f64], text: &[f64]) -> Result<Vec<f64>> {
    check_dims(speech, text)?;
    let ns = nonzero_norm(speech, "speech vector")?;
    let nt = nonzero_norm(text, "text vector")?;
    let scale = nt / ns;
    Ok(speech.iter().map(|&s| s * scale).collect())
}

impl Operator {
    pub fn apply(self, speech: &[f64], text: &[f64]) -> Result<Vec<f64>> {
        match self {
            Operator::Angle => angle_project(speech, text),
            Operator::Length => length_normalize(speech, text),
        }
    }
}

/// New layer-0 rows for each planned pair, checked against the sample shape.
pub fn planned_rows(
    plan: &InterventionPlan,
    speech0: &crate::matrix::Matrix,
    text0: &crate::matrix::Matrix,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut seen = std::collections::HashSet::new();
    plan.pairs
        .iter()
        .map(|p| {
            if p.speech_index >= speech0.rows() || p.text_index >= text0.rows() {
                return Err(Error::IndexOutOfRange(format!(
                    "pair (text {}, speech {}) outside sample '{}' with {} frames and {} tokens",
                    p.text_index,
                    p.speech_index,
                    plan.sample_id,
                    speech0.rows(),
                    text0.rows()
                )));
            }
            if !seen.insert(p.speech_index) {
                return Err(Error::IndexOutOfRange(format!(
                    "speech frame {} planned twice for sample '{}'",
                    p.speech_index, plan.sample_id
                )));
            }
            let row = plan
                .operator
                .apply(speech0.row(p.speech_index), text0.row(p.text_index))
                .map_err(|e| e.at(format!("pair (text {}, speech {})", p.text_index, p.speech_index)))?;
            Ok((p.speech_index, row))
        })
        .collect()
}

/// Writes a copy of the corpus into `out_dir` with the plans applied to the
/// speech embeddings, and returns the new manifest (saved as
/// `out_dir/manifest.json`).
///
/// Payload bytes outside the planned layer-0 rows are copied verbatim.
pub fn apply_plans(set: &ActivationSet, plans: &[InterventionPlan], out_dir: &Path) -> Result<Manifest> {
    let mut by_sample: BTreeMap<&str, &InterventionPlan> = BTreeMap::new();
    for plan in plans {
        if set.manifest.sample(&plan.sample_id).is_none() {
            return Err(Error::UnknownSample {
                id: plan.sample_id.clone(),
                modality: Modality::Speech,
            });
        }
        if by_sample.insert(plan.sample_id.as_str(), plan).is_some() {
            return Err(Error::SchemaViolation(format!(
                "more than one plan for sample '{}'",
                plan.sample_id
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Compute every patch before writing anything.
    let dim = set.manifest.dim;
    let mut patches: BTreeMap<&str, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for (&id, plan) in &by_sample {
        if plan.pairs.is_empty() {
            continue;
        }
        let (speech, text) = set.read_pair(id)?;
        let rows = planned_rows(plan, speech.layer(0), text.layer(0)).map_err(|e| e.in_sample(id))?;
        patches.insert(id, rows);
    }

    let mut manifest = set.manifest.clone();
    for (k, entry) in manifest.samples.iter_mut().enumerate() {
        for modality in [Modality::Speech, Modality::Text] {
            let Some(rel) = entry.payload(modality).map(Path::to_path_buf) else {
                continue;
            };
            let src = set.base_dir().join(&rel);
            let file_name = format!("{k:04}_{}.{modality}.bin", sanitize(&entry.id));
            let dst = out_dir.join(&file_name);
            let mut bytes = fs::read(&src).map_err(|e| Error::io(&src, e))?;
            if modality == Modality::Speech {
                if let Some(rows) = patches.get(entry.id.as_str()) {
                    for (i, row) in rows {
                        let start = i * dim * 4;
                        for (k, v) in row.iter().enumerate() {
                            let at = start + k * 4;
                            bytes[at..at + 4].copy_from_slice(&(*v as f32).to_le_bytes());
                        }
                    }
                    entry.stale = true;
                }
            }
            fs::write(&dst, &bytes).map_err(|e| Error::io(&dst, e))?;
            match modality {
                Modality::Speech => entry.speech_payload = Some(file_name.into()),
                Modality::Text => entry.text_payload = Some(file_name.into()),
            }
        }
    }
    manifest.metadata.insert(
        "intervention".into(),
        serde_json::json!({
            "layer": 0,
            "selection_rule": SELECTION_RULE,
            "plans": by_sample.values().map(|p| serde_json::json!({
                "sample_id": p.sample_id,
                "strategy": p.strategy,
                "operator": p.operator,
                "pairs": p.pairs.len(),
            })).collect::<Vec<_>>(),
        }),
    );
    write_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_plans(plans: &[InterventionPlan], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(plans).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    ensure_parent(path)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_plans(path: impl AsRef<Path>) -> Result<Vec<InterventionPlan>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
