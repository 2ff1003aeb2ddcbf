// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic corpora with a known alignment.
//!
//! Text rows are random unit vectors. Speech frame `planted_map[j]` copies
//! text row `j` (plus optional Gaussian noise) at every layer; every other
//! frame is a fresh random unit vector scaled by 0.5. Without noise the
//! planted frame is the unique cosine maximum and distance minimum of its
//! column, so both alignment paths recover `planted_map` exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::store::{write_manifest, write_sample, Manifest, SampleEntry};

pub const DISTRACTOR_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub n_samples: usize,
    pub layer_count: usize,
    pub dim: usize,
    pub text_len: usize,
    pub speech_len: usize,
    pub planted_map: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Evenly spread, strictly increasing frame indices.
pub fn spread_map(text_len: usize, speech_len: usize) -> Vec<usize> {
    (0..text_len).map(|j| j * speech_len / text_len).collect()
}

impl FixtureSpec {
    pub fn new(n_samples: usize, layer_count: usize, dim: usize, text_len: usize, speech_len: usize) -> Self {
        Self {
            n_samples,
            layer_count,
            dim,
            text_len,
            speech_len,
            planted_map: spread_map(text_len, speech_len),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_samples == 0 || self.layer_count == 0 || self.dim == 0 || self.text_len == 0 {
            return fail("n_samples, layer_count, dim and text_len must all be positive".into());
        }
        if self.speech_len < self.text_len {
            return fail(format!(
                "speech_len {} is shorter than text_len {}",
                self.speech_len, self.text_len
            ));
        }
        if self.planted_map.len() != self.text_len {
            return fail(format!(
                "planted_map has {} entries for {} text tokens",
                self.planted_map.len(),
                self.text_len
            ));
        }
        if let Some(&bad) = self.planted_map.iter().find(|&&i| i >= self.speech_len) {
            return fail(format!("planted frame {bad} is outside 0..{}", self.speech_len));
        }
        if self.planted_map.windows(2).any(|w| w[0] >= w[1]) {
            return fail("planted_map must be strictly increasing".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail(format!(
                "noise_sigma {} must be finite and non-negative",
                self.noise_sigma
            ));
        }
        Ok(())
    }

    pub fn sample_id(index: usize) -> String {
        format!("sample_{index:04}")
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `(speech, text)` layer stacks (layers `0..=L`) for one sample.
pub fn sample_layers(spec: &FixtureSpec, index: usize) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));
    let mut planted_for = vec![None; spec.speech_len];
    for (j, &i) in spec.planted_map.iter().enumerate() {
        planted_for[i] = Some(j);
    }
    let mut speech = Vec::with_capacity(spec.layer_count + 1);
    let mut text = Vec::with_capacity(spec.layer_count + 1);
    for _ in 0..=spec.layer_count {
        let text_rows: Vec<Vec<f64>> = (0..spec.text_len).map(|_| unit_vector(&mut rng, spec.dim)).collect();
        let speech_rows: Vec<Vec<f64>> = planted_for
            .iter()
            .map(|slot| match slot {
                Some(j) => {
                    let mut row = text_rows[*j].clone();
                    if let Some(noise) = &noise {
                        for v in &mut row {
                            *v += noise.sample(&mut rng);
                        }
                    }
                    row
                }
                None => unit_vector(&mut rng, spec.dim)
                    .into_iter()
                    .map(|v| v * DISTRACTOR_SCALE)
                    .collect(),
            })
            .collect();
        // Store exactly what the f32 payload will hold.
        let narrow = |rows: Vec<Vec<f64>>| {
            Matrix::from_rows(&rows)
                .expect("uniform rows")
                .map(|v| f64::from(v as f32))
        };
        text.push(narrow(text_rows));
        speech.push(narrow(speech_rows));
    }
    (speech, text)
}

/// Writes a fixture corpus into `out_dir` and returns the manifest path.
pub fn generate_fixture(spec: &FixtureSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest::new(spec.dim, spec.layer_count);
    for index in 0..spec.n_samples {
        let id = FixtureSpec::sample_id(index);
        let (speech, text) = sample_layers(spec, index);
        let speech_file = format!("{id}.speech.bin");
        let text_file = format!("{id}.text.bin");
        write_sample(&speech, out_dir.join(&speech_file))?;
        write_sample(&text, out_dir.join(&text_file))?;
        manifest.samples.push(SampleEntry {
            id,
            speech_frames: spec.speech_len,
            text_tokens: spec.text_len,
            text_token_strings: Some((0..spec.text_len).map(|j| format!("tok{j}")).collect()),
            speech_payload: Some(speech_file.into()),
            text_payload: Some(text_file.into()),
            stale: false,
        });
    }
    manifest
        .metadata
        .insert("fixture".into(), serde_json::to_value(spec).expect("spec serializes"));
    let path = out_dir.join("manifest.json");
    write_manifest(&manifest, &path)?;
    Ok(path)
}

/// A random planted map for property tests: strictly increasing, within `0..speech_len`.
pub fn random_map(rng: &mut impl Rng, text_len: usize, speech_len: usize) -> Vec<usize> {
    let mut frames: Vec<usize> = (0..speech_len).collect();
    for k in 0..text_len {
        let pick = rng.random_range(k..speech_len);
        frames.swap(k, pick);
    }
    let mut map = frames[..text_len].to_vec();
    map.sort_unstable();
    map
}
