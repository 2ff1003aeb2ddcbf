// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tables and figures for analysis results.
//!
//! CSV layouts:
//! - profiles: `sample_id,metric,layer,value` (`AGGREGATE` for the mean)
//! - path statistics: `sample_id,layer,metric,statistic,value`, with
//!   `layer = mean` for layer-averaged rows; undefined correlations are
//!   written as `undefined`
//! - path dumps: `sample_id,layer,metric,j,i,value`
//! - regressions: `predictor,group,slope,intercept,r_squared,n`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::coarse::CoarseAnalysis;
use crate::error::{ensure_parent, Error, Result};
use crate::metric::Metric;
use crate::regression::GroupedRegression;
use crate::svg::{self, Axes, Series};
use crate::token::CorpusAlignment;

pub const AGGREGATE: &str = "AGGREGATE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format '{other}' (expected csv, json or svg)")),
        }
    }
}

/// One labelled point on a checkpoint trajectory of path statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub label: String,
    pub rho_cos: Option<f64>,
    pub rho_dist: Option<f64>,
    pub consistency: f64,
}

/// Everything a report can contain. Profiles keyed by a series label
/// (usually a checkpoint name) are drawn together, one chart per metric.
#[derive(Debug, Clone, Default)]
pub struct ResultsBundle {
    pub profiles: Vec<(String, CoarseAnalysis)>,
    pub alignment: Vec<(String, CorpusAlignment)>,
    pub regressions: Vec<GroupedRegression>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ResultsBundle {
    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty() && self.alignment.is_empty() && self.regressions.is_empty()
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row.as_ref()).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn profile_rows(analysis: &CoarseAnalysis) -> Vec<[String; 4]> {
    let metric = analysis.metric.to_string();
    let mut rows = Vec::new();
    for s in &analysis.per_sample {
        for (l, v) in s.profile.by_layer() {
            rows.push([s.sample_id.clone(), metric.clone(), l.to_string(), v.to_string()]);
        }
    }
    for (l, v) in analysis.aggregate.by_layer() {
        rows.push([AGGREGATE.to_string(), metric.clone(), l.to_string(), v.to_string()]);
    }
    rows
}

pub fn write_profiles_csv(analyses: &[CoarseAnalysis], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<[String; 4]> = analyses.iter().flat_map(profile_rows).collect();
    write_rows(path.as_ref(), &["sample_id", "metric", "layer", "value"], &rows)
}

pub fn alignment_rows(corpus: &CorpusAlignment) -> Vec<[String; 5]> {
    let mut rows = Vec::new();
    let row = |id: &str, layer: String, metric: &str, stat: &str, value: String| {
        [id.to_string(), layer, metric.to_string(), stat.to_string(), value]
    };
    let summary = |rows: &mut Vec<[String; 5]>, id: &str, s: &crate::token::AlignmentStats| {
        rows.push(row(id, "mean".into(), "cos", "rho", opt(s.rho_cos)));
        rows.push(row(id, "mean".into(), "dist", "rho", opt(s.rho_dist)));
        rows.push(row(id, "mean".into(), "both", "consistency", s.consistency.to_string()));
        rows.push(row(id, "mean".into(), "cos", "aps", s.aps_cos.to_string()));
        rows.push(row(id, "mean".into(), "dist", "aps", s.aps_dist.to_string()));
    };
    for sample in &corpus.per_sample {
        let id = sample.sample_id.as_str();
        for l in &sample.layers {
            let layer = l.layer.to_string();
            rows.push(row(id, layer.clone(), "cos", "rho", opt(l.rho_cos)));
            rows.push(row(id, layer.clone(), "dist", "rho", opt(l.rho_dist)));
            rows.push(row(id, layer.clone(), "both", "consistency", l.consistency.to_string()));
            rows.push(row(id, layer.clone(), "cos", "aps", l.aps_cos.to_string()));
            rows.push(row(id, layer, "dist", "aps", l.aps_dist.to_string()));
        }
        summary(&mut rows, id, &sample.stats);
    }
    summary(&mut rows, AGGREGATE, &corpus.aggregate);
    rows
}

pub fn write_alignment_csv(corpus: &CorpusAlignment, path: impl AsRef<Path>) -> Result<()> {
    write_rows(
        path.as_ref(),
        &["sample_id", "layer", "metric", "statistic", "value"],
        &alignment_rows(corpus),
    )
}

pub fn write_path_dump(corpus: &CorpusAlignment, path: impl AsRef<Path>) -> Result<()> {
    let mut rows = Vec::new();
    for sample in &corpus.per_sample {
        for p in sample.cos_paths.iter().chain(&sample.dist_paths) {
            for (j, (&i, &v)) in p.indices.iter().zip(&p.values).enumerate() {
                rows.push([
                    sample.sample_id.clone(),
                    p.layer.to_string(),
                    p.metric.to_string(),
                    j.to_string(),
                    i.to_string(),
                    v.to_string(),
                ]);
            }
        }
    }
    write_rows(
        path.as_ref(),
        &["sample_id", "layer", "metric", "j", "i", "value"],
        &rows,
    )
}

pub fn write_aps_csv(corpus: &CorpusAlignment, path: impl AsRef<Path>) -> Result<()> {
    let mut rows = Vec::new();
    for s in &corpus.per_sample {
        rows.push([s.sample_id.clone(), "cos".into(), s.stats.aps_cos.to_string()]);
        rows.push([s.sample_id.clone(), "dist".into(), s.stats.aps_dist.to_string()]);
    }
    rows.push([AGGREGATE.into(), "cos".into(), corpus.aggregate.aps_cos.to_string()]);
    rows.push([AGGREGATE.into(), "dist".into(), corpus.aggregate.aps_dist.to_string()]);
    write_rows(path.as_ref(), &["sample_id", "metric", "aps"], &rows)
}

pub fn regression_rows(reg: &GroupedRegression) -> Vec<[String; 6]> {
    reg.fits
        .iter()
        .map(|f| {
            [
                reg.predictor_name.clone(),
                f.group.clone(),
                f.slope.to_string(),
                f.intercept.to_string(),
                f.r_squared.to_string(),
                f.n.to_string(),
            ]
        })
        .collect()
}

pub fn write_regressions_csv(regs: &[GroupedRegression], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<[String; 6]> = regs.iter().flat_map(regression_rows).collect();
    write_rows(
        path.as_ref(),
        &["predictor", "group", "slope", "intercept", "r_squared", "n"],
        &rows,
    )
}

/// Line chart of aggregate profiles for one metric, one polyline per label.
pub fn profile_svg(metric: Metric, profiles: &[(&str, &CoarseAnalysis)]) -> String {
    let series: Vec<Series> = profiles
        .iter()
        .map(|(label, a)| Series {
            label: label.to_string(),
            points: a.aggregate.by_layer().map(|(l, v)| (l as f64, v)).collect(),
        })
        .collect();
    let (title, y_label) = match metric {
        Metric::Cos => ("Layer-wise cosine similarity", "cosine similarity"),
        Metric::Dist => ("Layer-wise Euclidean distance", "Euclidean distance"),
    };
    svg::line_chart(
        &Axes {
            title: title.into(),
            x_label: "layer".into(),
            y_label: y_label.into(),
        },
        &series,
    )
}

/// Path statistics across labelled checkpoints (x = position in `points`).
pub fn trajectory_svg(points: &[TrajectoryPoint]) -> String {
    let pick = |f: &dyn Fn(&TrajectoryPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        points
            .iter()
            .enumerate()
            .filter_map(|(k, p)| f(p).map(|v| (k as f64, v)))
            .collect()
    };
    let series = vec![
        Series {
            label: "cosine path monotonicity".into(),
            points: pick(&|p| p.rho_cos),
        },
        Series {
            label: "distance path monotonicity".into(),
            points: pick(&|p| p.rho_dist),
        },
        Series {
            label: "path consistency".into(),
            points: pick(&|p| Some(p.consistency)),
        },
    ];
    let title = format!(
        "Alignment path statistics ({})",
        points.iter().map(|p| p.label.as_str()).collect::<Vec<_>>().join(", ")
    );
    svg::line_chart(
        &Axes {
            title,
            x_label: "checkpoint index".into(),
            y_label: "statistic".into(),
        },
        &series,
    )
}

pub fn regression_svgs(reg: &GroupedRegression) -> Vec<(String, String)> {
    reg.fits
        .iter()
        .map(|fit| {
            let points: Vec<(f64, f64)> = reg
                .points
                .iter()
                .filter(|(_, g, _, _)| fit.group == crate::regression::ALL_GROUPS || *g == fit.group)
                .map(|&(_, _, x, y)| (x, y))
                .collect();
            let axes = Axes {
                title: format!("GAP vs {} ({})", reg.predictor_name, fit.group),
                x_label: reg.predictor_name.clone(),
                y_label: "GAP".into(),
            };
            let label = format!("R² = {:.3}", fit.r_squared);
            let name = format!(
                "regression_{}_{}.svg",
                file_safe(&reg.predictor_name),
                file_safe(&fit.group)
            );
            (
                name,
                svg::scatter_with_fit(&axes, &points, fit.slope, fit.intercept, &label),
            )
        })
        .collect()
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize)]
struct JsonReport<'a> {
    metadata: &'a BTreeMap<String, serde_json::Value>,
    profiles: BTreeMap<String, Vec<&'a CoarseAnalysis>>,
    alignment: BTreeMap<String, &'a CorpusAlignment>,
    regressions: &'a [GroupedRegression],
}

fn write_file(path: PathBuf, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the bundle into `out_dir`. CSV tables are always written; JSON and
/// SVG on request. Returns the written paths in creation order.
pub fn render_report(bundle: &ResultsBundle, formats: &[Format], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if bundle.is_empty() {
        return Err(Error::EmptyBundle);
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let multi = |n: usize, label: &str, base: &str| {
        if n > 1 {
            format!("{base}_{}.csv", file_safe(label))
        } else {
            format!("{base}.csv")
        }
    };

    let mut labels: Vec<&str> = Vec::new();
    for (label, _) in &bundle.profiles {
        if !labels.contains(&label.as_str()) {
            labels.push(label);
        }
    }
    for label in &labels {
        let analyses: Vec<CoarseAnalysis> = bundle
            .profiles
            .iter()
            .filter(|(l, _)| l == label)
            .map(|(_, a)| a.clone())
            .collect();
        let path = out_dir.join(multi(labels.len(), label, "profiles"));
        write_profiles_csv(&analyses, &path)?;
        written.push(path);
    }
    for (label, corpus) in &bundle.alignment {
        let path = out_dir.join(multi(bundle.alignment.len(), label, "path_stats"));
        write_alignment_csv(corpus, &path)?;
        written.push(path);
    }
    if !bundle.regressions.is_empty() {
        let path = out_dir.join("regressions.csv");
        write_regressions_csv(&bundle.regressions, &path)?;
        written.push(path);
    }

    if formats.contains(&Format::Json) {
        let mut profiles: BTreeMap<String, Vec<&CoarseAnalysis>> = BTreeMap::new();
        for (label, a) in &bundle.profiles {
            profiles.entry(label.clone()).or_default().push(a);
        }
        let report = JsonReport {
            metadata: &bundle.metadata,
            profiles,
            alignment: bundle.alignment.iter().map(|(l, c)| (l.clone(), c)).collect(),
            regressions: &bundle.regressions,
        };
        let path = out_dir.join("report.json");
        let json = serde_json::to_string_pretty(&report).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        write_file(path, (json + "\n").as_bytes(), &mut written)?;
    }

    if formats.contains(&Format::Svg) {
        for metric in Metric::ALL {
            let series: Vec<(&str, &CoarseAnalysis)> = bundle
                .profiles
                .iter()
                .filter(|(_, a)| a.metric == metric)
                .map(|(l, a)| (l.as_str(), a))
                .collect();
            if !series.is_empty() {
                let path = out_dir.join(format!("profile_{metric}.svg"));
                write_file(path, profile_svg(metric, &series).as_bytes(), &mut written)?;
            }
        }
        if bundle.alignment.len() > 1 {
            let points: Vec<TrajectoryPoint> = bundle
                .alignment
                .iter()
                .map(|(label, c)| TrajectoryPoint {
                    label: label.clone(),
                    rho_cos: c.aggregate.rho_cos,
                    rho_dist: c.aggregate.rho_dist,
                    consistency: c.aggregate.consistency,
                })
                .collect();
            write_file(
                out_dir.join("path_trajectory.svg"),
                trajectory_svg(&points).as_bytes(),
                &mut written,
            )?;
        }
        for reg in &bundle.regressions {
            for (name, svg) in regression_svgs(reg) {
                write_file(out_dir.join(name), svg.as_bytes(), &mut written)?;
            }
        }
    }
    Ok(written)
}
