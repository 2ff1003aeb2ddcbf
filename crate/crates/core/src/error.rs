// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use crate::store::Modality;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("size mismatch for {}: expected {expected} bytes, found {actual}", .path.display())]
    SizeMismatch { path: PathBuf, expected: u64, actual: u64 },

    #[error("unknown sample '{id}' ({modality})")]
    UnknownSample { id: String, modality: Modality },

    #[error("non-finite value at layer {layer}, row {row}, col {col}")]
    NonFiniteValue { layer: usize, row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("i/o failure on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("zero-norm vector{}", site_suffix(.site))]
    ZeroVector { site: String },

    #[error("dimension mismatch: {left} vs {right}{}", site_suffix(.site))]
    DimensionMismatch { left: usize, right: usize, site: String },

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("empty activation set")]
    EmptySet,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("predictor has zero variance")]
    DegenerateX,

    #[error("response has zero variance; R² is undefined")]
    DegenerateY,

    #[error("need at least 2 joined checkpoints, found {found}")]
    InsufficientOverlap { found: usize },

    #[error("duplicate checkpoint id '{0}'")]
    DuplicateCheckpoint(String),

    #[error("stored gap {stored} for '{checkpoint}' disagrees with text - speech = {computed}")]
    GapMismatch {
        checkpoint: String,
        stored: f64,
        computed: f64,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),

    #[error("nothing to render")]
    EmptyBundle,

    #[error("csv error in {}: {source}", .path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("sample '{id}': {source}")]
    InSample {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

fn site_suffix(site: &str) -> String {
    if site.is_empty() {
        String::new()
    } else {
        format!(" at {site}")
    }
}

impl Error {
    /// Attaches a location to kernel errors; other variants pass through.
    pub fn at(self, location: impl AsRef<str>) -> Self {
        let location = location.as_ref();
        let join = |site: String| {
            if site.is_empty() {
                location.to_string()
            } else {
                format!("{location}, {site}")
            }
        };
        match self {
            Error::ZeroVector { site } => Error::ZeroVector { site: join(site) },
            Error::DimensionMismatch { left, right, site } => Error::DimensionMismatch {
                left,
                right,
                site: join(site),
            },
            other => other,
        }
    }

    pub fn in_sample(self, id: &str) -> Self {
        match self {
            already @ Error::InSample { .. } => already,
            other => Error::InSample {
                id: id.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, skipping sample context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InSample { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

/// Creates the parent directory of an output file if it is missing.
pub(crate) fn ensure_parent(path: &std::path::Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}
