//! Loss and logit mathematics.
//!
//! The training objective combines the emotion cross-entropy with a
//! *negated*, down-weighted domain cross-entropy:
//!
//! ```text
//! L_total = CE_emo − w_d · CE_dom
//! ```
//!
//! so that descending `L_total` ascends the domain loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::emotion::{argmax, CanonicalEmotion, N_EMOTIONS};
use crate::error::{Error, Result};

/// Added to the logits of classes that an evaluation corpus does not use.
pub const BAN_LOGIT: f64 = -1e27;

/// Default weight of the domain term.
pub const DEFAULT_DOMAIN_WEIGHT: f64 = 0.01;

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::Empty("logit vector"));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::OutOfRange(format!("non-finite logit at index {i}")));
    }
    Ok(())
}

/// `log softmax(z)` via the max-shift trick.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

fn normalize_target(q: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = q.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidDistribution(format!("target entry {v}")));
    }
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroDistribution);
    }
    Ok(q.iter().map(|v| v / total).collect())
}

/// Cross-entropy of `softmax(z)` against the normalized soft target `q`.
pub fn soft_cross_entropy(z: &[f64], q: &[f64]) -> Result<f64> {
    check_dims(z.len(), q.len())?;
    check_finite(z)?;
    let q = normalize_target(q)?;
    Ok(-log_softmax(z)
        .iter()
        .zip(&q)
        .filter(|(_, &qj)| qj > 0.0)
        .map(|(l, qj)| qj * l)
        .sum::<f64>())
}

/// `∂CE/∂z = softmax(z) − q̂`.
pub fn soft_cross_entropy_grad(z: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_dims(z.len(), q.len())?;
    check_finite(z)?;
    let q = normalize_target(q)?;
    Ok(softmax(z).iter().zip(&q).map(|(p, t)| p - t).collect())
}

fn one_hot(n: usize, i: usize) -> Result<Vec<f64>> {
    if i >= n {
        return Err(Error::OutOfRange(format!("class {i} with only {n} classes")));
    }
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce_emo: f64,
    pub ce_dom: f64,
    pub total: f64,
    pub grad_emo: Vec<f64>,
    pub grad_dom: Vec<f64>,
}

pub fn combined_loss(
    z_emo: &[f64],
    q_emo: &[f64],
    z_dom: &[f64],
    dom_id: usize,
    w_d: f64,
) -> Result<LossReport> {
    if !(w_d >= 0.0 && w_d.is_finite()) {
        return Err(Error::OutOfRange(format!("w_d {w_d}")));
    }
    let target_dom = one_hot(z_dom.len(), dom_id)?;
    let ce_emo = soft_cross_entropy(z_emo, q_emo)?;
    let ce_dom = soft_cross_entropy(z_dom, &target_dom)?;
    let grad_emo = soft_cross_entropy_grad(z_emo, q_emo)?;
    let grad_dom = soft_cross_entropy_grad(z_dom, &target_dom)?
        .into_iter()
        .map(|g| -w_d * g)
        .collect();
    Ok(LossReport {
        ce_emo,
        ce_dom,
        total: ce_emo - w_d * ce_dom,
        grad_emo,
        grad_dom,
    })
}

/// Add [`BAN_LOGIT`] to every disallowed class.
pub fn ban_labels(z: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    check_dims(z.len(), allowed.len())?;
    if !allowed.iter().any(|&a| a) {
        return Err(Error::OutOfRange("every class is banned".into()));
    }
    Ok(z
        .iter()
        .zip(allowed)
        .map(|(&v, &ok)| if ok { v } else { v + BAN_LOGIT })
        .collect())
}

/// Post-hoc logit adjustment: `z_j − τ · ln(prior_j)`.
pub fn adjust_logits(z: &[f64], priors: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_dims(z.len(), priors.len())?;
    if let Some(p) = priors.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::OutOfRange(format!("non-positive prior {p}")));
    }
    Ok(z.iter().zip(priors).map(|(v, p)| v - tau * p.ln()).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over classes of `(σ(z_j) − t_j)²`.
pub fn sigmoid_mse(z: &[f64], targets: &[f64]) -> Result<f64> {
    check_dims(z.len(), targets.len())?;
    if z.is_empty() {
        return Err(Error::Empty("logit vector"));
    }
    Ok(z.iter()
        .zip(targets)
        .map(|(&v, &t)| (sigmoid(v) - t).powi(2))
        .sum::<f64>()
        / z.len() as f64)
}

pub fn sigmoid_mse_grad(z: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    check_dims(z.len(), targets.len())?;
    let n = z.len() as f64;
    Ok(z.iter()
        .zip(targets)
        .map(|(&v, &t)| {
            let s = sigmoid(v);
            2.0 * (s - t) * s * (1.0 - s) / n
        })
        .collect())
}

/// Mean soft cross-entropy over the frames whose mask is set.
pub fn masked_sequence_loss(
    frame_logits: &[Vec<f64>],
    frame_targets: &[[f32; N_EMOTIONS]],
    mask: &[bool],
) -> Result<f64> {
    check_dims(frame_logits.len(), frame_targets.len())?;
    check_dims(frame_logits.len(), mask.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((z, t), &m) in frame_logits.iter().zip(frame_targets).zip(mask) {
        if m {
            let q: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
            total += soft_cross_entropy(z, &q)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no unmasked frames"));
    }
    Ok(total / count as f64)
}

/// Loss and evaluation settings, serialized with class names as keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_d: f64,
    pub tau: f64,
    /// Class priors for logit adjustment; empty means "no adjustment".
    pub priors: BTreeMap<CanonicalEmotion, f64>,
    /// Evaluation corpus → classes it is allowed to predict.
    pub allowed: BTreeMap<String, Vec<CanonicalEmotion>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_d: DEFAULT_DOMAIN_WEIGHT,
            tau: 1.0,
            priors: BTreeMap::new(),
            allowed: BTreeMap::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_d >= 0.0 && self.w_d.is_finite()) {
            return Err(Error::Config(format!("w_d {} must be ≥ 0", self.w_d)));
        }
        if !self.tau.is_finite() {
            return Err(Error::Config(format!("tau {}", self.tau)));
        }
        if !self.priors.is_empty() {
            self.prior_vector()?;
        }
        for (k, v) in &self.allowed {
            if v.is_empty() {
                return Err(Error::Config(format!("corpus `{k}` allows no classes")));
            }
        }
        Ok(())
    }

    /// Priors in canonical order; must cover all classes, be positive and sum to 1.
    pub fn prior_vector(&self) -> Result<[f64; N_EMOTIONS]> {
        let mut out = [0.0; N_EMOTIONS];
        for e in CanonicalEmotion::ALL {
            let p = *self
                .priors
                .get(&e)
                .ok_or_else(|| Error::Config(format!("prior for `{e}` missing")))?;
            if !(p > 0.0) {
                return Err(Error::Config(format!("prior for `{e}` is {p}, must be > 0")));
            }
            out[e.index()] = p;
        }
        let sum: f64 = out.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("priors sum to {sum}, not 1")));
        }
        Ok(out)
    }

    /// Allowed-class mask for a corpus; corpora not listed allow everything.
    pub fn allowed_mask(&self, corpus: &str) -> [bool; N_EMOTIONS] {
        match self.allowed.get(corpus) {
            None => [true; N_EMOTIONS],
            Some(list) => {
                let mut m = [false; N_EMOTIONS];
                for e in list {
                    m[e.index()] = true;
                }
                m
            }
        }
    }
}

/// Training-set priors: normalized total canonical label mass per class.
pub fn label_priors<'a>(
    distributions: impl IntoIterator<Item = &'a [f64; N_EMOTIONS]>,
) -> Result<[f64; N_EMOTIONS]> {
    let mut mass = [0.0; N_EMOTIONS];
    for d in distributions {
        for (m, v) in mass.iter_mut().zip(d) {
            *m += v;
        }
    }
    if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
        return Err(Error::OutOfRange(format!(
            "class `{}` has no training mass; its prior would be zero",
            CanonicalEmotion::ALL[i]
        )));
    }
    let total: f64 = mass.iter().sum();
    Ok(mass.map(|m| m / total))
}

/// Evaluation decision rule: ban, then adjust, then argmax.
pub fn predict(z: &[f64], allowed: &[bool], priors: Option<&[f64]>, tau: f64) -> Result<usize> {
    let banned = ban_labels(z, allowed)?;
    let adjusted = match priors {
        Some(p) => adjust_logits(&banned, p, tau)?,
        None => banned,
    };
    Ok(argmax(&adjusted))
}
