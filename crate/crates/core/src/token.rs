// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-level alignment between speech frames and text tokens.
//!
//! At each block layer a `T_s x T_t` matrix compares every speech frame with
//! every text token. For each text token (column) the alignment path picks
//! the speech frame with the highest cosine similarity, or the lowest
//! Euclidean distance; exact ties go to the smallest frame index. Paths are
//! per-column extremes, not a globally monotone warping.
//!
//! From the paths we derive:
//! - monotonicity: tie-corrected Spearman correlation between token position
//!   and aligned frame index,
//! - consistency: the fraction of tokens whose cosine and distance paths
//!   land on the same frame,
//! - the alignment path score (APS): the mean path value over all block
//!   layers and all text tokens.
//!
//! Per sample, monotonicity and consistency are computed per layer and then
//! averaged over layers; corpus figures are means over samples in id order.
//! A path whose frame indices are all equal has no rank variance, so its
//! Spearman coefficient is undefined and it is left out of the averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse::check_pair;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metric::{cosine_from_parts, euclidean, Metric};
use crate::numeric::{self, dot, CompensatedSum};
use crate::store::{ActivationSet, LayerStack};

/// Frame-by-token similarity at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub metric: Metric,
    pub layer: usize,
    /// `T_s x T_t`; rows are speech frames, columns text tokens.
    pub values: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub metric: Metric,
    pub layer: usize,
    /// Aligned speech frame for each text token.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn token_matrix(speech_layer: &Matrix, text_layer: &Matrix, metric: Metric, layer: usize) -> Result<TokenMatrix> {
    if speech_layer.cols() != text_layer.cols() {
        return Err(Error::DimensionMismatch {
            left: speech_layer.cols(),
            right: text_layer.cols(),
            site: format!("layer {layer}"),
        });
    }
    let (ts, tt) = (speech_layer.rows(), text_layer.rows());
    let mut values = Matrix::zeros(ts, tt);
    match metric {
        Metric::Cos => {
            let speech_sq = nonzero_squared_norms(speech_layer, layer, "speech")?;
            let text_sq = nonzero_squared_norms(text_layer, layer, "text")?;
            for (i, s) in speech_layer.iter_rows().enumerate() {
                for (j, t) in text_layer.iter_rows().enumerate() {
                    values.set(i, j, cosine_from_parts(dot(s, t), speech_sq[i], text_sq[j]));
                }
            }
        }
        Metric::Dist => {
            for (i, s) in speech_layer.iter_rows().enumerate() {
                for (j, t) in text_layer.iter_rows().enumerate() {
                    values.set(i, j, euclidean(s, t)?);
                }
            }
        }
    }
    Ok(TokenMatrix { metric, layer, values })
}

fn nonzero_squared_norms(m: &Matrix, layer: usize, side: &str) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let n = dot(row, row);
            if n == 0.0 {
                Err(Error::ZeroVector {
                    site: format!("layer {layer}, {side} row {i}"),
                })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Column-wise extreme of a token matrix; ties resolve to the smallest row.
pub fn alignment_path(m: &TokenMatrix) -> Result<AlignmentPath> {
    let (rows, cols) = m.values.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut indices = Vec::with_capacity(cols);
    let mut values = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut best = 0;
        let mut best_value = m.values.get(0, j);
        for i in 1..rows {
            let v = m.values.get(i, j);
            if m.metric.prefers(v, best_value) {
                best = i;
                best_value = v;
            }
        }
        indices.push(best);
        values.push(best_value);
    }
    Ok(AlignmentPath {
        metric: m.metric,
        layer: m.layer,
        indices,
        values,
    })
}

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share rank mean of start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = numeric::sum(x.iter().copied()) / n;
    let my = numeric::sum(y.iter().copied()) / n;
    let mut sxy = CompensatedSum::new();
    let mut sxx = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy.add(da * db);
        sxx.add(da * da);
        syy.add(db * db);
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy.value() / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Tie-corrected Spearman correlation: Pearson correlation of average ranks.
pub fn spearman_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "rank correlation needs at least 2 points, got {}",
            x.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::DegenerateInput("constant sequence has no rank variance".into()))
}

/// Monotonicity of aligned frame indices against token order.
pub fn spearman_indices(indices: &[usize]) -> Result<f64> {
    let position: Vec<f64> = (0..indices.len()).map(|j| j as f64).collect();
    let frames: Vec<f64> = indices.iter().map(|&i| i as f64).collect();
    spearman_correlation(&position, &frames)
}

pub fn spearman(path: &AlignmentPath) -> Result<f64> {
    spearman_indices(&path.indices)
}

/// Fraction of tokens aligned to the same frame by both paths.
pub fn path_consistency(a: &AlignmentPath, b: &AlignmentPath) -> Result<f64> {
    if a.indices.len() != b.indices.len() {
        return Err(Error::LengthMismatch {
            left: a.indices.len(),
            right: b.indices.len(),
        });
    }
    if a.layer != b.layer {
        return Err(Error::ShapeMismatch(format!(
            "paths come from layers {} and {}",
            a.layer, b.layer
        )));
    }
    if a.indices.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let same = a.indices.iter().zip(&b.indices).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.indices.len() as f64)
}

/// Alignment paths for every block layer `1..=L`.
pub fn layer_paths(speech: &LayerStack, text: &LayerStack, metric: Metric) -> Result<Vec<AlignmentPath>> {
    check_pair(speech, text)?;
    speech
        .block_layers()
        .zip(text.block_layers())
        .map(|((l, s), (_, t))| alignment_path(&token_matrix(s, t, metric, l)?))
        .collect()
}

fn flat_mean(paths: &[AlignmentPath]) -> f64 {
    let count: usize = paths.iter().map(|p| p.values.len()).sum();
    numeric::sum(paths.iter().flat_map(|p| p.values.iter().copied())) / count as f64
}

/// Alignment path score: mean path value over all block layers and text tokens.
pub fn aps(speech: &LayerStack, text: &LayerStack, metric: Metric) -> Result<f64> {
    Ok(flat_mean(&layer_paths(speech, text, metric)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    pub layer: usize,
    pub rho_cos: Option<f64>,
    pub rho_dist: Option<f64>,
    pub consistency: f64,
    pub aps_cos: f64,
    pub aps_dist: f64,
}

/// Path statistics; `None` marks an undefined rank correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub rho_cos: Option<f64>,
    pub rho_dist: Option<f64>,
    pub consistency: f64,
    pub aps_cos: f64,
    pub aps_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAlignment {
    pub sample_id: String,
    pub layers: Vec<LayerAlignment>,
    pub stats: AlignmentStats,
    #[serde(skip)]
    pub cos_paths: Vec<AlignmentPath>,
    #[serde(skip)]
    pub dist_paths: Vec<AlignmentPath>,
}

fn defined_mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.into_iter().flatten().collect();
    numeric::mean(&defined)
}

pub fn sample_alignment(sample_id: &str, speech: &LayerStack, text: &LayerStack) -> Result<SampleAlignment> {
    let cos_paths = layer_paths(speech, text, Metric::Cos)?;
    let dist_paths = layer_paths(speech, text, Metric::Dist)?;
    let layers = cos_paths
        .iter()
        .zip(&dist_paths)
        .map(|(c, d)| {
            Ok(LayerAlignment {
                layer: c.layer,
                rho_cos: spearman(c).ok(),
                rho_dist: spearman(d).ok(),
                consistency: path_consistency(c, d)?,
                aps_cos: numeric::mean(&c.values).expect("nonempty path"),
                aps_dist: numeric::mean(&d.values).expect("nonempty path"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let consistency: Vec<f64> = layers.iter().map(|l| l.consistency).collect();
    let stats = AlignmentStats {
        rho_cos: defined_mean(layers.iter().map(|l| l.rho_cos)),
        rho_dist: defined_mean(layers.iter().map(|l| l.rho_dist)),
        consistency: numeric::mean(&consistency).expect("at least one layer"),
        aps_cos: flat_mean(&cos_paths),
        aps_dist: flat_mean(&dist_paths),
    };
    Ok(SampleAlignment {
        sample_id: sample_id.to_string(),
        layers,
        stats,
        cos_paths,
        dist_paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusAlignment {
    /// Sorted by sample id.
    pub per_sample: Vec<SampleAlignment>,
    pub aggregate: AlignmentStats,
    /// Samples whose cosine-path correlation was undefined at every layer.
    pub undefined_rho_cos: usize,
    pub undefined_rho_dist: usize,
}

/// Mean of per-sample statistics in sample-id order.
pub fn aggregate_stats(per_sample: &[SampleAlignment]) -> Result<CorpusAlignment> {
    let mut sorted = per_sample.to_vec();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if sorted.is_empty() {
        return Err(Error::EmptySet);
    }
    let column = |f: fn(&AlignmentStats) -> f64| -> f64 {
        let v: Vec<f64> = sorted.iter().map(|s| f(&s.stats)).collect();
        numeric::mean(&v).expect("nonempty")
    };
    let aggregate = AlignmentStats {
        rho_cos: defined_mean(sorted.iter().map(|s| s.stats.rho_cos)),
        rho_dist: defined_mean(sorted.iter().map(|s| s.stats.rho_dist)),
        consistency: column(|s| s.consistency),
        aps_cos: column(|s| s.aps_cos),
        aps_dist: column(|s| s.aps_dist),
    };
    Ok(CorpusAlignment {
        undefined_rho_cos: sorted.iter().filter(|s| s.stats.rho_cos.is_none()).count(),
        undefined_rho_dist: sorted.iter().filter(|s| s.stats.rho_dist.is_none()).count(),
        per_sample: sorted,
        aggregate,
    })
}

pub fn corpus_alignment_stats(set: &ActivationSet) -> Result<CorpusAlignment> {
    let ids = set.sorted_ids();
    if ids.is_empty() {
        return Err(Error::EmptySet);
    }
    let per_sample = ids
        .par_iter()
        .map(|&id| {
            let (speech, text) = set.read_pair(id)?;
            sample_alignment(id, &speech, &text).map_err(|e| e.in_sample(id))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_stats(&per_sample)
}
