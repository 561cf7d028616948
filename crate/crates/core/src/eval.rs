//! Classification and correlation metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::emotion::{argmax, CanonicalEmotion, N_EMOTIONS};
use crate::error::{Error, Result};
use crate::losses::predict;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    predictions: Vec<usize>,
    references: Vec<usize>,
    n_classes: usize,
}

impl PredictionSet {
    pub fn new(predictions: Vec<usize>, references: Vec<usize>, n_classes: usize) -> Result<Self> {
        if predictions.len() != references.len() {
            return Err(Error::Dimension {
                expected: references.len(),
                got: predictions.len(),
            });
        }
        if let Some(&c) = predictions.iter().chain(&references).find(|&&c| c >= n_classes) {
            return Err(Error::OutOfRange(format!("class {c} ≥ n_classes {n_classes}")));
        }
        Ok(PredictionSet {
            predictions,
            references,
            n_classes,
        })
    }

    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    pub fn references(&self) -> &[usize] {
        &self.references
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.require_non_empty()?;
        let hits = self.pairs().filter(|(p, r)| p == r).count();
        Ok(hits as f64 / self.len() as f64)
    }

    /// `(tp, fp, fn)` per class.
    pub fn counts(&self) -> Vec<(u64, u64, u64)> {
        let mut c = vec![(0, 0, 0); self.n_classes];
        for (p, r) in self.pairs() {
            if p == r {
                c[p].0 += 1;
            } else {
                c[p].1 += 1;
                c[r].2 += 1;
            }
        }
        c
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.predictions.iter().copied().zip(self.references.iter().copied())
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("prediction set"));
        }
        Ok(())
    }
}

/// Micro-averaged F1 from pooled counts.
pub fn micro_f1(p: &PredictionSet) -> Result<f64> {
    p.require_non_empty()?;
    let (tp, fp, fn_) = p
        .counts()
        .into_iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    let acc = p.accuracy()?;
    if (f1 - acc).abs() > 1e-12 {
        return Err(Error::Invariant(format!("micro F1 {f1} != accuracy {acc}")));
    }
    Ok(f1)
}

/// F1 per class; `None` where the class never occurs in either list.
pub fn per_class_f1(p: &PredictionSet) -> Vec<Option<f64>> {
    p.counts()
        .into_iter()
        .map(|(tp, fp, fn_)| {
            let denom = 2 * tp + fp + fn_;
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64], column: usize) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if syy <= 0.0 || sxx <= 0.0 {
        return Err(Error::ZeroVariance(column));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Pearson r per column, averaged over columns. Rows are samples.
pub fn mean_pearson(scores: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: scores.len(),
        });
    }
    if scores.len() < 2 {
        return Err(Error::Empty("need at least two samples"));
    }
    let k = targets[0].len();
    if k == 0 {
        return Err(Error::Empty("no columns"));
    }
    for row in scores.iter().chain(targets) {
        if row.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: row.len(),
            });
        }
    }
    let mut total = 0.0;
    for j in 0..k {
        let x: Vec<f64> = scores.iter().map(|r| r[j]).collect();
        let y: Vec<f64> = targets.iter().map(|r| r[j]).collect();
        total += pearson(&x, &y, j)?;
    }
    Ok(total / k as f64)
}

/// Score logits against soft references: ban, adjust, argmax.
pub fn evaluate_logits(
    logits: &[[f64; N_EMOTIONS]],
    soft_refs: &[[f64; N_EMOTIONS]],
    allowed: &[bool; N_EMOTIONS],
    priors: Option<&[f64; N_EMOTIONS]>,
    tau: f64,
) -> Result<PredictionSet> {
    let predictions = logits
        .iter()
        .map(|z| predict(z, allowed, priors.map(|p| &p[..]), tau))
        .collect::<Result<Vec<_>>>()?;
    let references = soft_refs.iter().map(|q| argmax(q)).collect();
    PredictionSet::new(predictions, references, N_EMOTIONS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub micro_f1: f64,
    pub per_class: BTreeMap<String, Option<f64>>,
    pub n: usize,
}

impl MetricReport {
    /// Requires an 8-class set so columns can be named.
    pub fn from_predictions(p: &PredictionSet) -> Result<Self> {
        if p.n_classes() != N_EMOTIONS {
            return Err(Error::Dimension {
                expected: N_EMOTIONS,
                got: p.n_classes(),
            });
        }
        let per_class = CanonicalEmotion::ALL
            .iter()
            .zip(per_class_f1(p))
            .map(|(e, f)| (e.name().to_string(), f))
            .collect();
        Ok(MetricReport {
            micro_f1: micro_f1(p)?,
            per_class,
            n: p.len(),
        })
    }
}
