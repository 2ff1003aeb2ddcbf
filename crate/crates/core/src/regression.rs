// SPDX-License-Identifier: MIT OR Apache-2.0

//! Modality gap and least-squares fits of the gap against similarity
//! predictors.
//!
//! The gap of a checkpoint is its text-input score minus its speech-input
//! score. Each checkpoint contributes one point `(predictor, gap)`; fits are
//! run over all checkpoints and, when a group column is present, per group.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_parent, Error, Result};
use crate::numeric::{self, CompensatedSum};

/// Tolerance for a stored gap column against the recomputed difference.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Group label used for the fit over every checkpoint.
pub const ALL_GROUPS: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub checkpoint_id: String,
    pub group: Option<String>,
    pub text_score: f64,
    pub speech_score: f64,
    pub gap: f64,
}

pub fn compute_gap(text_score: f64, speech_score: f64) -> f64 {
    text_score - speech_score
}

impl ScoreRecord {
    pub fn new(checkpoint_id: impl Into<String>, group: Option<String>, text_score: f64, speech_score: f64) -> Self {
        Self {
            checkpoint_id: checkpoint_id.into(),
            group,
            text_score,
            speech_score,
            gap: compute_gap(text_score, speech_score),
        }
    }

    /// Builds a record from a row that also states its gap; the stated value
    /// must agree with the recomputed one.
    pub fn with_stated_gap(
        checkpoint_id: impl Into<String>,
        group: Option<String>,
        text_score: f64,
        speech_score: f64,
        stated_gap: f64,
    ) -> Result<Self> {
        let record = Self::new(checkpoint_id, group, text_score, speech_score);
        if (record.gap - stated_gap).abs() > GAP_TOLERANCE {
            return Err(Error::GapMismatch {
                checkpoint: record.checkpoint_id,
                stored: stated_gap,
                computed: record.gap,
            });
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub predictor_name: String,
    pub group: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<RegressionResult> {
    if points.len() < 2 {
        return Err(Error::InsufficientOverlap { found: points.len() });
    }
    let n = points.len() as f64;
    let mx = numeric::sum(points.iter().map(|p| p.0)) / n;
    let my = numeric::sum(points.iter().map(|p| p.1)) / n;
    let mut sxx = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx.add(dx * dx);
        sxy.add(dx * dy);
        syy.add(dy * dy);
    }
    let (sxx, sxy, syy) = (sxx.value(), sxy.value(), syy.value());
    if sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    if syy == 0.0 {
        return Err(Error::DegenerateY);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = numeric::sum(points.iter().map(|&(x, y)| {
        let r = y - (slope * x + intercept);
        r * r
    }));
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    Ok(RegressionResult {
        predictor_name: String::new(),
        group: ALL_GROUPS.to_string(),
        slope,
        intercept,
        r_squared,
        n: points.len(),
    })
}

fn index_predictors(predictors: &[(String, f64)]) -> Result<BTreeMap<&str, f64>> {
    let mut map = BTreeMap::new();
    for (id, v) in predictors {
        if map.insert(id.as_str(), *v).is_some() {
            return Err(Error::DuplicateCheckpoint(id.clone()));
        }
    }
    Ok(map)
}

fn check_unique_scores(scores: &[ScoreRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in scores {
        if !seen.insert(s.checkpoint_id.as_str()) {
            return Err(Error::DuplicateCheckpoint(s.checkpoint_id.clone()));
        }
    }
    Ok(())
}

/// Inner join on checkpoint id, in id order: `(predictor, gap, record)`.
fn join<'a>(predictors: &BTreeMap<&str, f64>, scores: &'a [ScoreRecord]) -> Vec<(f64, f64, &'a ScoreRecord)> {
    let mut by_id: Vec<&ScoreRecord> = scores.iter().collect();
    by_id.sort_by(|a, b| a.checkpoint_id.cmp(&b.checkpoint_id));
    by_id
        .into_iter()
        .filter_map(|s| predictors.get(s.checkpoint_id.as_str()).map(|&x| (x, s.gap, s)))
        .collect()
}

/// Fits gap (y) on the predictor (x) over every joined checkpoint.
pub fn correlate(
    predictors: &[(String, f64)],
    scores: &[ScoreRecord],
    predictor_name: &str,
) -> Result<RegressionResult> {
    let index = index_predictors(predictors)?;
    check_unique_scores(scores)?;
    let points: Vec<(f64, f64)> = join(&index, scores).into_iter().map(|(x, y, _)| (x, y)).collect();
    if points.len() < 2 {
        return Err(Error::InsufficientOverlap { found: points.len() });
    }
    let mut fit = ols_fit(&points)?;
    fit.predictor_name = predictor_name.to_string();
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub group: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedRegression {
    pub predictor_name: String,
    pub fits: Vec<RegressionResult>,
    pub skipped: Vec<SkippedGroup>,
    /// Joined `(checkpoint_id, group, predictor, gap)` rows, for plotting.
    pub points: Vec<(String, String, f64, f64)>,
}

/// Pooled fit followed by one fit per group (groups in name order).
///
/// The pooled fit must succeed; a group whose fit fails is listed in
/// `skipped` instead of failing the whole call.
pub fn correlate_grouped(
    predictors: &[(String, f64)],
    scores: &[ScoreRecord],
    predictor_name: &str,
) -> Result<GroupedRegression> {
    let pooled = correlate(predictors, scores, predictor_name)?;
    let index = index_predictors(predictors)?;
    let joined = join(&index, scores);
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (x, y, rec) in &joined {
        if let Some(g) = rec.group.as_deref().filter(|g| !g.is_empty()) {
            groups.entry(g).or_default().push((*x, *y));
        }
    }
    let mut fits = vec![pooled];
    let mut skipped = Vec::new();
    for (group, points) in groups {
        match ols_fit(&points) {
            Ok(mut fit) => {
                fit.predictor_name = predictor_name.to_string();
                fit.group = group.to_string();
                fits.push(fit);
            }
            Err(e) => skipped.push(SkippedGroup {
                group: group.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    let points = joined
        .iter()
        .map(|(x, y, r)| (r.checkpoint_id.clone(), r.group.clone().unwrap_or_default(), *x, *y))
        .collect();
    Ok(GroupedRegression {
        predictor_name: predictor_name.to_string(),
        fits,
        skipped,
        points,
    })
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    checkpoint_id: String,
    #[serde(default)]
    group: Option<String>,
    text_score: f64,
    speech_score: f64,
    #[serde(default)]
    gap: Option<f64>,
}

/// Reads `checkpoint_id,group,text_score,speech_score[,gap]`.
///
/// When the optional `gap` column is present every row is checked against
/// the recomputed difference.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => csv_err(e),
    })?;
    let mut records = Vec::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row.map_err(csv_err)?;
        let group = row.group.filter(|g| !g.is_empty());
        let record = match row.gap {
            Some(stated) => {
                ScoreRecord::with_stated_gap(row.checkpoint_id, group, row.text_score, row.speech_score, stated)?
            }
            None => ScoreRecord::new(row.checkpoint_id, group, row.text_score, row.speech_score),
        };
        records.push(record);
    }
    check_unique_scores(&records)?;
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorRow {
    checkpoint_id: String,
    predictor: String,
    value: f64,
}

/// Reads the long-format `checkpoint_id,predictor,value` table, keyed by
/// predictor name. Duplicate `(checkpoint, predictor)` pairs are rejected.
pub fn read_predictors(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<(String, f64)>>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => csv_err(e),
    })?;
    let mut out: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for row in reader.deserialize::<PredictorRow>() {
        let row = row.map_err(csv_err)?;
        let entries = out.entry(row.predictor).or_default();
        if entries.iter().any(|(id, _)| *id == row.checkpoint_id) {
            return Err(Error::DuplicateCheckpoint(row.checkpoint_id));
        }
        entries.push((row.checkpoint_id, row.value));
    }
    Ok(out)
}

/// Appends predictor rows, writing the header when the file is new.
pub fn append_predictors(path: impl AsRef<Path>, checkpoint_id: &str, values: &[(&str, f64)]) -> Result<()> {
    let path = path.as_ref();
    let exists = path.exists();
    ensure_parent(path)?;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for &(predictor, value) in values {
        w.serialize(PredictorRow {
            checkpoint_id: checkpoint_id.to_string(),
            predictor: predictor.to_string(),
            value,
        })
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
