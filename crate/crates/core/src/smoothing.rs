//! Neutral smoothing of low-intensity samples.
//!
//! A sample whose intensity `E_i` (sum of its scores) falls below the mean
//! intensity `Ē` of its source dataset is pulled towards the uniform
//! distribution:
//!
//! ```text
//! α    = min(|Ē − E_i| / Ē, 0.45)        (0 when E_i ≥ Ē)
//! e′_j = e_j (1 − α) + (1 − e_j) α / M
//! ```
//!
//! The primary (argmax) class must survive the update.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::emotion::{argmax, CanonicalEmotion, EmotionDistribution, N_EMOTIONS};
use crate::error::{Error, Result};

pub const ALPHA_CAP: f64 = 0.45;

/// Gap left below the primary class when the retention guard clamps neutral.
pub const RETENTION_EPSILON: f64 = 1e-9;

/// Leaves per task below which pairwise summation stays on one thread.
const PAR_CUTOFF: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingContext {
    pub mean_intensity: f64,
    pub n_classes: usize,
    pub alpha_cap: f64,
}

impl SmoothingContext {
    pub fn new(mean_intensity: f64) -> Result<Self> {
        Self::with_cap(mean_intensity, ALPHA_CAP)
    }

    pub fn with_cap(mean_intensity: f64, alpha_cap: f64) -> Result<Self> {
        if !(alpha_cap > 0.0 && alpha_cap < 1.0) {
            return Err(Error::OutOfRange(format!("alpha cap {alpha_cap} not in (0, 1)")));
        }
        if !(mean_intensity >= 0.0 && mean_intensity.is_finite()) {
            return Err(Error::OutOfRange(format!("mean intensity {mean_intensity}")));
        }
        Ok(SmoothingContext {
            mean_intensity,
            n_classes: N_EMOTIONS,
            alpha_cap,
        })
    }
}

pub fn sample_intensity(e: &EmotionDistribution) -> f64 {
    e.total()
}

/// Sum with a fixed binary reduction tree, so the result is bit-identical
/// whether the halves run sequentially or on separate threads.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (l, r) = values.split_at(n / 2);
            if n > PAR_CUTOFF {
                let (a, b) = rayon::join(|| pairwise_sum(l), || pairwise_sum(r));
                a + b
            } else {
                pairwise_sum(l) + pairwise_sum(r)
            }
        }
    }
}

pub fn mean_intensity(samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("mean intensity of an empty sample list"));
    }
    let e: Vec<f64> = samples.iter().map(|s| sample_intensity(&s.emotion)).collect();
    Ok(pairwise_sum(&e) / e.len() as f64)
}

/// Mean intensity per source dataset.
pub fn dataset_intensities(samples: &[Sample]) -> Result<BTreeMap<String, f64>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in samples {
        groups
            .entry(s.dataset.as_str())
            .or_default()
            .push(sample_intensity(&s.emotion));
    }
    if groups.is_empty() {
        return Err(Error::Empty("mean intensity of an empty sample list"));
    }
    Ok(groups
        .into_iter()
        .map(|(k, v)| (k.to_string(), pairwise_sum(&v) / v.len() as f64))
        .collect())
}

pub fn smoothing_factor(intensity: f64, ctx: &SmoothingContext) -> Result<f64> {
    let mean = ctx.mean_intensity;
    if mean <= 0.0 {
        return Err(Error::DegenerateDataset);
    }
    if intensity >= mean {
        return Ok(0.0);
    }
    Ok(((mean - intensity).abs() / mean).min(ctx.alpha_cap))
}

pub fn smooth(e: &EmotionDistribution, ctx: &SmoothingContext) -> Result<EmotionDistribution> {
    let alpha = smoothing_factor(sample_intensity(e), ctx)?;
    if alpha == 0.0 {
        return Ok(*e);
    }
    let m = ctx.n_classes as f64;
    let smoothed = e.scores().map(|v| v * (1.0 - alpha) + (1.0 - v) * alpha / m);
    let kept = retain_primary(e.scores(), smoothed)?;
    EmotionDistribution::new(kept)
}

/// Restore the original argmax if smoothing displaced it, by lowering the
/// neutral score just below the original primary class.
pub fn retain_primary(
    original: &[f64; N_EMOTIONS],
    mut smoothed: [f64; N_EMOTIONS],
) -> Result<[f64; N_EMOTIONS]> {
    let primary = argmax(original);
    if argmax(&smoothed) == primary {
        return Ok(smoothed);
    }
    let neutral = CanonicalEmotion::Neutral.index();
    smoothed[neutral] = (smoothed[primary] - RETENTION_EPSILON).max(0.0);
    if argmax(&smoothed) != primary {
        return Err(Error::Invariant(format!(
            "primary class {} lost after smoothing",
            CanonicalEmotion::ALL[primary]
        )));
    }
    Ok(smoothed)
}

/// Smooth every sample against the mean intensity of its own dataset.
/// Returns the smoothed samples and the per-dataset means used.
pub fn smooth_corpus(samples: &[Sample]) -> Result<(Vec<Sample>, BTreeMap<String, f64>)> {
    let means = dataset_intensities(samples)?;
    let contexts = means
        .iter()
        .map(|(k, &m)| Ok((k.as_str(), SmoothingContext::new(m)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let out = samples
        .iter()
        .map(|s| {
            let ctx = &contexts[s.dataset.as_str()];
            let emotion = smooth(&s.emotion, ctx).map_err(|e| e.at_stage("smooth", &s.id))?;
            Ok(Sample {
                emotion,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, means))
}
