// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequence-level similarity between mean-pooled speech and text states,
//! layer by layer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{mean_pool, Metric};
use crate::numeric;
use crate::store::{ActivationSet, LayerStack};

/// One value per block layer `1..=L`; `values[0]` is layer 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub metric: Metric,
    pub values: Vec<f64>,
    pub sample_count: usize,
}

impl SimilarityProfile {
    pub fn layer_count(&self) -> usize {
        self.values.len()
    }

    /// `(layer, value)` pairs with 1-based layer numbering.
    pub fn by_layer(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, &v)| (i + 1, v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProfile {
    pub sample_id: String,
    pub profile: SimilarityProfile,
}

/// Per-sample profiles (sorted by id) and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseAnalysis {
    pub metric: Metric,
    pub per_sample: Vec<SampleProfile>,
    pub aggregate: SimilarityProfile,
}

pub(crate) fn check_pair(speech: &LayerStack, text: &LayerStack) -> Result<()> {
    if speech.dim() != text.dim() {
        return Err(Error::DimensionMismatch {
            left: speech.dim(),
            right: text.dim(),
            site: "speech vs text hidden size".into(),
        });
    }
    if speech.layer_count() != text.layer_count() {
        return Err(Error::ShapeMismatch(format!(
            "speech has {} layers, text has {}",
            speech.layer_count(),
            text.layer_count()
        )));
    }
    Ok(())
}

/// `metric(mean_pool(speech_l), mean_pool(text_l))` for `l = 1..=L`.
pub fn layer_profile(speech: &LayerStack, text: &LayerStack, metric: Metric) -> Result<SimilarityProfile> {
    check_pair(speech, text)?;
    let values = speech
        .block_layers()
        .zip(text.block_layers())
        .map(|((l, s), (_, t))| {
            let ps = mean_pool(s)?;
            let pt = mean_pool(t)?;
            metric.eval(&ps, &pt).map_err(|e| e.at(format!("layer {l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityProfile {
        metric,
        values,
        sample_count: 1,
    })
}

/// Layer-wise mean of per-sample profiles, reduced in sample-id order.
pub fn mean_profile(profiles: &[SampleProfile]) -> Result<SimilarityProfile> {
    let mut sorted: Vec<&SampleProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let first = sorted.first().ok_or(Error::EmptySet)?;
    let metric = first.profile.metric;
    let layers = first.profile.layer_count();
    for p in &sorted {
        if p.profile.metric != metric || p.profile.layer_count() != layers {
            return Err(Error::ShapeMismatch(format!(
                "profile of '{}' ({} over {} layers) cannot be averaged with {metric} over {layers} layers",
                p.sample_id,
                p.profile.metric,
                p.profile.layer_count()
            )));
        }
    }
    let values = (0..layers)
        .map(|l| {
            let column: Vec<f64> = sorted.iter().map(|p| p.profile.values[l]).collect();
            numeric::mean(&column).expect("nonempty")
        })
        .collect();
    Ok(SimilarityProfile {
        metric,
        values,
        sample_count: sorted.len(),
    })
}

pub fn aggregate_profiles(set: &ActivationSet, metric: Metric) -> Result<CoarseAnalysis> {
    let ids = set.sorted_ids();
    if ids.is_empty() {
        return Err(Error::EmptySet);
    }
    let per_sample = ids
        .par_iter()
        .map(|&id| {
            let (speech, text) = set.read_pair(id)?;
            layer_profile(&speech, &text, metric)
                .map(|profile| SampleProfile {
                    sample_id: id.to_string(),
                    profile,
                })
                .map_err(|e| e.in_sample(id))
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = mean_profile(&per_sample)?;
    Ok(CoarseAnalysis {
        metric,
        per_sample,
        aggregate,
    })
}

/// Mean of a profile over its layers.
///
/// # Panics
///
/// Panics on an empty profile.
pub fn layer_averaged_scalar(profile: &SimilarityProfile) -> f64 {
    numeric::mean(&profile.values).expect("profile must cover at least one layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::store::Modality;

    fn stack(modality: Modality, layers: Vec<Vec<Vec<f64>>>) -> LayerStack {
        LayerStack::new(
            modality,
            layers.iter().map(|rows| Matrix::from_rows(rows).unwrap()).collect(),
        )
        .unwrap()
    }

    fn profile(values: Vec<f64>) -> SimilarityProfile {
        SimilarityProfile {
            metric: Metric::Cos,
            values,
            sample_count: 1,
        }
    }

    #[test]
    fn identical_modalities() {
        let layers = vec![
            vec![vec![1.0, 2.0], vec![0.5, -1.0]],
            vec![vec![3.0, 1.0], vec![-2.0, 4.0]],
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
        ];
        let s = stack(Modality::Speech, layers.clone());
        let t = stack(Modality::Text, layers);
        let cos = layer_profile(&s, &t, Metric::Cos).unwrap();
        assert_eq!(cos.values.len(), 2);
        assert!(cos.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let dist = layer_profile(&s, &t, Metric::Dist).unwrap();
        assert_eq!(dist.values, vec![0.0, 0.0]);
    }

    #[test]
    fn orthogonal_single_layer() {
        let s = stack(Modality::Speech, vec![vec![vec![9.0, 9.0]], vec![vec![2.0, 0.0]]]);
        let t = stack(Modality::Text, vec![vec![vec![9.0, 9.0]], vec![vec![0.0, 2.0]]]);
        assert_eq!(layer_profile(&s, &t, Metric::Cos).unwrap().values, vec![0.0]);
        let d = layer_profile(&s, &t, Metric::Dist).unwrap().values[0];
        assert!((d - 2.828_427_124_746_190_1).abs() < 1e-15);
    }

    #[test]
    fn different_dims_rejected() {
        let s = stack(Modality::Speech, vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]]);
        let t = stack(Modality::Text, vec![vec![vec![1.0]], vec![vec![1.0]]]);
        assert!(matches!(
            layer_profile(&s, &t, Metric::Cos),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_pooled_vector_reports_layer() {
        let s = stack(
            Modality::Speech,
            vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            ],
        );
        let t = stack(Modality::Text, vec![vec![vec![1.0, 1.0]], vec![vec![1.0, 1.0]]]);
        match layer_profile(&s, &t, Metric::Cos) {
            Err(Error::ZeroVector { site }) => assert!(site.contains("layer 1"), "{site}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mean_of_two_profiles() {
        let ps = vec![
            SampleProfile {
                sample_id: "b".into(),
                profile: profile(vec![0.4]),
            },
            SampleProfile {
                sample_id: "a".into(),
                profile: profile(vec![0.2]),
            },
        ];
        let m = mean_profile(&ps).unwrap();
        assert!((m.values[0] - 0.3).abs() < 1e-15);
        assert_eq!(m.sample_count, 2);
        assert!(matches!(mean_profile(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn single_profile_is_identity() {
        let p = SampleProfile {
            sample_id: "x".into(),
            profile: profile(vec![0.1, -0.7, 0.33]),
        };
        assert_eq!(mean_profile(std::slice::from_ref(&p)).unwrap().values, p.profile.values);
    }

    #[test]
    fn layer_average() {
        assert_eq!(layer_averaged_scalar(&profile(vec![1.0, 1.0, 1.0])), 1.0);
        assert_eq!(layer_averaged_scalar(&profile(vec![0.0, 0.5, 1.0])), 0.5);
        assert_eq!(layer_averaged_scalar(&profile(vec![0.3])), 0.3);
    }
}
