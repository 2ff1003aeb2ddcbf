// SPDX-License-Identifier: MIT OR Apache-2.0

//! Similarity kernels and mean pooling.
//!
//! Cosine similarity and Euclidean distance are the two measures every
//! analysis is expressed in. Cosine is "higher is closer", distance is
//! "lower is closer"; [`Metric::prefers`] encodes that so callers can treat
//! both uniformly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::{dot, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cos,
    Dist,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Cos, Metric::Dist];

    pub fn eval(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Metric::Cos => cosine(x, y),
            Metric::Dist => euclidean(x, y),
        }
    }

    /// True when `candidate` is strictly closer than `incumbent` under this metric.
    pub fn prefers(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Metric::Cos => candidate > incumbent,
            Metric::Dist => candidate < incumbent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cos => "cos",
            Metric::Dist => "dist",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cos" => Ok(Metric::Cos),
            "dist" => Ok(Metric::Dist),
            other => Err(format!("unknown metric '{other}' (expected cos or dist)")),
        }
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
            site: String::new(),
        });
    }
    Ok(())
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `xy / sqrt(xx * yy)`; a single square root makes `cosine(x, x)` exactly 1.
pub(crate) fn cosine_from_parts(xy: f64, xx: f64, yy: f64) -> f64 {
    (xy / (xx * yy).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let sx = dot(x, x);
    if sx == 0.0 {
        return Err(Error::ZeroVector {
            site: "left operand".into(),
        });
    }
    let sy = dot(y, y);
    if sy == 0.0 {
        return Err(Error::ZeroVector {
            site: "right operand".into(),
        });
    }
    Ok(cosine_from_parts(dot(x, y), sx, sy))
}

pub fn euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let mut acc = CompensatedSum::new();
    for (&a, &b) in x.iter().zip(y) {
        let d = a - b;
        let sq = d * d;
        acc.add(sq);
        acc.add(d.mul_add(d, -sq));
    }
    Ok(acc.value().sqrt())
}

/// Column-wise mean over the rows of `m`.
pub fn mean_pool(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut acc = vec![CompensatedSum::new(); m.cols()];
    for row in m.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            a.add(v);
        }
    }
    let n = m.rows() as f64;
    Ok(acc.iter().map(|a| a.value() / n).collect())
}
