//! Linear demonstration of domain-adversarial training.
//!
//! A linear trunk feeds an emotion head and a domain head. Both heads
//! descend their own cross-entropy; the trunk descends
//! `CE_emo − w_d · CE_dom`, so its domain gradient is reversed and scaled.
//!
//! Synthetic features are laid out as
//!
//! ```text
//! [ emotion (K) | domain (D) | nuisance (D) ]
//! ```
//!
//! The trunk starts as a block map: emotion dims pass through, and each
//! trunk domain row sees `gain · domain + nuisance`. Attenuating `gain`
//! buries the domain signal under the nuisance noise.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::emotion::argmax;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, log_softmax, soft_cross_entropy_grad};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self · x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(classes: usize, features: usize) -> Self {
        LinearHead {
            weights: Matrix::zeros(classes, features),
            bias: vec![0.0; classes],
        }
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.weights.apply(h);
        for (v, b) in z.iter_mut().zip(&self.bias) {
            *v += b;
        }
        z
    }

    /// `Wᵀ g`: gradient reaching the head's input.
    fn backprop(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.cols];
        for (r, gr) in g.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.weights.row(r)) {
                *o += gr * w;
            }
        }
        out
    }

    fn accumulate(grad: &mut LinearHead, g: &[f64], h: &[f64]) {
        for (r, gr) in g.iter().enumerate() {
            grad.bias[r] += gr;
            let row = &mut grad.weights.data[r * h.len()..(r + 1) * h.len()];
            for (w, x) in row.iter_mut().zip(h) {
                *w += gr * x;
            }
        }
    }

    fn step(&mut self, grad: &LinearHead, lr: f64) {
        for (w, g) in self.weights.data.iter_mut().zip(&grad.weights.data) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_emotions: usize,
    pub n_domains: usize,
    pub emotion_noise_std: f64,
    pub domain_scale: f64,
    pub nuisance_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_emotions: 4,
            n_domains: 4,
            emotion_noise_std: 0.3,
            domain_scale: 10.0,
            nuisance_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    /// One row per sample.
    pub features: Matrix,
    pub emotion: Vec<usize>,
    pub domain: Vec<usize>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.emotion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emotion.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols
    }
}

pub fn make_synthetic_dataset(n: usize, seed: u64) -> Result<SyntheticDataset> {
    make_synthetic_dataset_with(n, seed, &SyntheticConfig::default())
}

pub fn make_synthetic_dataset_with(
    n: usize,
    seed: u64,
    cfg: &SyntheticConfig,
) -> Result<SyntheticDataset> {
    if n < 100 {
        return Err(Error::OutOfRange(format!("synthetic dataset needs n ≥ 100, got {n}")));
    }
    if cfg.n_emotions < 2 || cfg.n_domains < 2 {
        return Err(Error::Config("need at least two emotions and two domains".into()));
    }
    let (k, d) = (cfg.n_emotions, cfg.n_domains);
    let mut rng = StreamKey::new(seed).with_str("toy-dataset").rng();
    let e_noise = Normal::new(0.0, cfg.emotion_noise_std)
        .map_err(|e| Error::Config(format!("emotion_noise_std: {e}")))?;
    let n_noise = Normal::new(0.0, cfg.nuisance_std)
        .map_err(|e| Error::Config(format!("nuisance_std: {e}")))?;
    let cols = k + 2 * d;
    let mut features = Matrix::zeros(n, cols);
    let mut emotion = Vec::with_capacity(n);
    let mut domain = Vec::with_capacity(n);
    for i in 0..n {
        let e = rng.random_range(0..k);
        let g = rng.random_range(0..d);
        let row = &mut features.data[i * cols..(i + 1) * cols];
        for (j, v) in row[..k].iter_mut().enumerate() {
            *v = f64::from(u8::from(j == e)) + e_noise.sample(&mut rng);
        }
        row[k + g] = cfg.domain_scale;
        for v in &mut row[k + d..] {
            *v = n_noise.sample(&mut rng);
        }
        emotion.push(e);
        domain.push(g);
    }
    Ok(SyntheticDataset {
        config: cfg.clone(),
        features,
        emotion,
        domain,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub w_d: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Zero means `n_emotions + n_domains`.
    pub shared_dim: usize,
    /// Initial trunk weight on the domain block.
    pub init_domain_gain: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            w_d: crate::losses::DEFAULT_DOMAIN_WEIGHT,
            lr: 0.1,
            epochs: 500,
            shared_dim: 0,
            init_domain_gain: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub emo_acc: f64,
    pub dom_acc: f64,
    pub ce_emo: f64,
    pub ce_dom: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,emo_acc,dom_acc,ce_emo,ce_dom,total\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch, e.emo_acc, e.dom_acc, e.ce_emo, e.ce_dom, e.total
            );
        }
        s
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub trunk: Matrix,
    pub emotion_head: LinearHead,
    pub domain_head: LinearHead,
}

impl ToyModel {
    /// Block-structured trunk for a [`SyntheticConfig`] layout.
    pub fn init(data: &SyntheticConfig, cfg: &ToyTrainConfig) -> Result<Self> {
        let (k, d) = (data.n_emotions, data.n_domains);
        let shared = if cfg.shared_dim == 0 { k + d } else { cfg.shared_dim };
        if shared < k + d {
            return Err(Error::Config(format!(
                "shared_dim {shared} is below n_emotions + n_domains = {}",
                k + d
            )));
        }
        let mut trunk = Matrix::zeros(shared, k + 2 * d);
        for j in 0..k {
            trunk.set(j, j, 1.0);
        }
        for j in 0..d {
            trunk.set(k + j, k + j, cfg.init_domain_gain);
            trunk.set(k + j, k + d + j, 1.0);
        }
        Ok(ToyModel {
            trunk,
            emotion_head: LinearHead::zeros(k, shared),
            domain_head: LinearHead::zeros(d, shared),
        })
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.trunk.apply(x)
    }

    pub fn embed_all(&self, features: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(features.rows, self.trunk.rows);
        for i in 0..features.rows {
            let h = self.embed(features.row(i));
            out.data[i * self.trunk.rows..(i + 1) * self.trunk.rows].copy_from_slice(&h);
        }
        out
    }

    pub fn emotion_accuracy(&self, data: &SyntheticDataset) -> f64 {
        let hits = (0..data.len())
            .filter(|&i| {
                argmax(&self.emotion_head.logits(&self.embed(data.features.row(i))))
                    == data.emotion[i]
            })
            .count();
        hits as f64 / data.len() as f64
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Per-sample trunk gradient contributions `(from emotion, from domain)` as
/// gradients with respect to the embedding `h`.
pub fn embedding_gradients(
    model: &ToyModel,
    x: &[f64],
    emo: usize,
    dom: usize,
    w_d: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = model.embed(x);
    let ze = model.emotion_head.logits(&h);
    let zd = model.domain_head.logits(&h);
    let r = combined_loss(&ze, &one_hot(ze.len(), emo), &zd, dom, w_d)?;
    Ok((
        model.emotion_head.backprop(&r.grad_emo),
        model.domain_head.backprop(&r.grad_dom),
    ))
}

/// Full-batch gradient descent.
pub fn train_adversarial(
    data: &SyntheticDataset,
    cfg: &ToyTrainConfig,
) -> Result<(ToyModel, TrainTrace)> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("lr {} must be positive", cfg.lr)));
    }
    let mut model = ToyModel::init(&data.config, cfg)?;
    let (k, d) = (data.config.n_emotions, data.config.n_domains);
    let n = data.len();
    let inv_n = 1.0 / n as f64;
    let shared = model.trunk.rows;
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        let mut g_trunk = Matrix::zeros(shared, data.n_features());
        let mut g_emo = LinearHead::zeros(k, shared);
        let mut g_dom = LinearHead::zeros(d, shared);
        let (mut ce_emo, mut ce_dom, mut total) = (0.0, 0.0, 0.0);
        let (mut emo_hits, mut dom_hits) = (0usize, 0usize);

        for i in 0..n {
            let x = data.features.row(i);
            let h = model.embed(x);
            let ze = model.emotion_head.logits(&h);
            let zd = model.domain_head.logits(&h);
            if !ze.iter().chain(&zd).all(|v| v.is_finite()) {
                return Err(Error::Diverged(epoch));
            }
            let q = one_hot(k, data.emotion[i]);
            let r = combined_loss(&ze, &q, &zd, data.domain[i], cfg.w_d)?;
            ce_emo += r.ce_emo;
            ce_dom += r.ce_dom;
            total += r.total;
            emo_hits += usize::from(argmax(&ze) == data.emotion[i]);
            dom_hits += usize::from(argmax(&zd) == data.domain[i]);

            let head_dom = soft_cross_entropy_grad(&zd, &one_hot(d, data.domain[i]))?;
            LinearHead::accumulate(&mut g_emo, &r.grad_emo, &h);
            LinearHead::accumulate(&mut g_dom, &head_dom, &h);

            let ge = model.emotion_head.backprop(&r.grad_emo);
            let gd = model.domain_head.backprop(&r.grad_dom);
            for (row, (a, b)) in ge.iter().zip(&gd).enumerate() {
                let gh = a + b;
                let dst = &mut g_trunk.data[row * x.len()..(row + 1) * x.len()];
                for (g, xv) in dst.iter_mut().zip(x) {
                    *g += gh * xv;
                }
            }
        }

        let stats = EpochStats {
            epoch,
            emo_acc: emo_hits as f64 * inv_n,
            dom_acc: dom_hits as f64 * inv_n,
            ce_emo: ce_emo * inv_n,
            ce_dom: ce_dom * inv_n,
            total: total * inv_n,
        };
        if !stats.total.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        trace.epochs.push(stats);

        for (w, g) in model.trunk.data.iter_mut().zip(&g_trunk.data) {
            *w -= cfg.lr * g * inv_n;
        }
        model.emotion_head.step(&g_emo, cfg.lr * inv_n);
        model.domain_head.step(&g_dom, cfg.lr * inv_n);
        if !(model.trunk.is_finite() && model.emotion_head.is_finite() && model.domain_head.is_finite())
        {
            return Err(Error::Diverged(epoch));
        }
    }
    Ok((model, trace))
}

/// Mean domain CE of the trained domain head through the trunk.
pub fn domain_loss(model: &ToyModel, data: &SyntheticDataset) -> f64 {
    (0..data.len())
        .map(|i| {
            let z = model.domain_head.logits(&model.embed(data.features.row(i)));
            -log_softmax(&z)[data.domain[i]]
        })
        .sum::<f64>()
        / data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 500, lr: 0.5 }
    }
}

/// Fit a fresh softmax-regression probe on standardized `train` embeddings
/// and return its accuracy on `test`.
pub fn linear_probe(
    train: &Matrix,
    train_labels: &[usize],
    test: &Matrix,
    test_labels: &[usize],
    n_classes: usize,
    cfg: ProbeConfig,
) -> Result<f64> {
    if train.rows != train_labels.len() || test.rows != test_labels.len() {
        return Err(Error::Dimension {
            expected: train.rows,
            got: train_labels.len(),
        });
    }
    if train.rows == 0 || test.rows == 0 {
        return Err(Error::Empty("probe data"));
    }
    let cols = train.cols;
    let n = train.rows as f64;
    let mut mean = vec![0.0; cols];
    for i in 0..train.rows {
        for (m, v) in mean.iter_mut().zip(train.row(i)) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; cols];
    for i in 0..train.rows {
        for ((s, v), m) in std.iter_mut().zip(train.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale: Vec<f64> = std.iter().map(|s| 1.0 / (s.sqrt() + 1e-12)).collect();
    let standardize = |m: &Matrix| {
        let mut out = m.clone();
        for i in 0..m.rows {
            for ((v, mu), s) in out.data[i * cols..(i + 1) * cols].iter_mut().zip(&mean).zip(&scale)
            {
                *v = (*v - mu) * s;
            }
        }
        out
    };
    let tr = standardize(train);
    let te = standardize(test);
    let mut head = LinearHead::zeros(n_classes, cols);
    for _ in 0..cfg.epochs {
        let mut g = LinearHead::zeros(n_classes, cols);
        for (i, &y) in train_labels.iter().enumerate() {
            let h = tr.row(i);
            let gz = soft_cross_entropy_grad(&head.logits(h), &one_hot(n_classes, y))?;
            LinearHead::accumulate(&mut g, &gz, h);
        }
        head.step(&g, cfg.lr / n);
    }
    let hits = test_labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(&head.logits(te.row(*i))) == y)
        .count();
    Ok(hits as f64 / test.rows as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOutcome {
    pub seed: u64,
    pub w_d: f64,
    pub emotion_accuracy: f64,
    pub domain_probe_accuracy: f64,
    pub domain_chance: f64,
    pub final_ce_dom: f64,
}

/// Train on one synthetic draw, then evaluate emotion accuracy and a fresh
/// domain probe on an independent draw.
pub fn run_toy(n: usize, seed: u64, cfg: &ToyTrainConfig) -> Result<(ToyOutcome, TrainTrace)> {
    let train = make_synthetic_dataset(n, seed)?;
    let test = make_synthetic_dataset(n, seed ^ 0x5eed_7e57)?;
    let (model, trace) = train_adversarial(&train, cfg)?;
    let probe = linear_probe(
        &model.embed_all(&train.features),
        &train.domain,
        &model.embed_all(&test.features),
        &test.domain,
        train.config.n_domains,
        ProbeConfig::default(),
    )?;
    Ok((
        ToyOutcome {
            seed,
            w_d: cfg.w_d,
            emotion_accuracy: model.emotion_accuracy(&test),
            domain_probe_accuracy: probe,
            domain_chance: 1.0 / train.config.n_domains as f64,
            final_ce_dom: domain_loss(&model, &train),
        },
        trace,
    ))
}

/// One-sided exact binomial sign-test p-value for `wins` of `n` under p = ½.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut c = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            c = c * (n + 1 - k) as f64 / k as f64;
        }
        if k >= wins {
            p += c;
        }
    }
    p / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_seeded_and_valid() {
        let a = make_synthetic_dataset(200, 3).unwrap();
        assert_eq!(a, make_synthetic_dataset(200, 3).unwrap());
        assert_ne!(a, make_synthetic_dataset(200, 4).unwrap());
        assert_eq!(a.n_features(), 12);
        assert!(make_synthetic_dataset(99, 0).is_err());
    }

    #[test]
    fn emotion_subspace_is_separable() {
        let a = make_synthetic_dataset(400, 1).unwrap();
        let hits = (0..a.len())
            .filter(|&i| argmax(&a.features.row(i)[..4]) == a.emotion[i])
            .count();
        assert!(hits as f64 / a.len() as f64 > 0.9);
        // the raw domain block alone identifies the domain exactly
        let dom_hits = (0..a.len())
            .filter(|&i| argmax(&a.features.row(i)[4..8]) == a.domain[i])
            .count();
        assert_eq!(dom_hits, a.len());
    }

    #[test]
    fn domain_embedding_gradient_is_reversed_and_scaled() {
        let data = make_synthetic_dataset(100, 2).unwrap();
        let cfg = ToyTrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (model, _) = train_adversarial(&data, &cfg).unwrap();
        let x = data.features.row(7);
        let (emo, dom) = (data.emotion[7], data.domain[7]);
        let (_, gd) = embedding_gradients(&model, x, emo, dom, 0.01).unwrap();
        let h = model.embed(x);
        let ce = |h: &[f64]| -log_softmax(&model.domain_head.logits(h))[dom];
        let step = 1e-6;
        for j in 0..h.len() {
            let (mut p, mut m) = (h.clone(), h.clone());
            p[j] += step;
            m[j] -= step;
            let fd = (ce(&p) - ce(&m)) / (2.0 * step);
            assert!((gd[j] - (-0.01 * fd)).abs() < 1e-9, "{j}: {} vs {}", gd[j], -0.01 * fd);
        }
    }

    #[test]
    fn trace_csv_shape() {
        let data = make_synthetic_dataset(100, 0).unwrap();
        let cfg = ToyTrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let (_, trace) = train_adversarial(&data, &cfg).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,emo_acc,dom_acc,ce_emo,ce_dom,total");
        assert_eq!(lines.len(), 4);
        assert!((trace.epochs[0].ce_emo - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = make_synthetic_dataset(100, 0).unwrap();
        let cfg = ToyTrainConfig {
            lr: 1e6,
            epochs: 50,
            ..Default::default()
        };
        assert!(matches!(train_adversarial(&data, &cfg), Err(Error::Diverged(_))));
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(10, 10), 1.0 / 1024.0);
        assert!((sign_test_p(9, 10) - 11.0 / 1024.0).abs() < 1e-15);
        assert_eq!(sign_test_p(0, 10), 1.0);
    }
}
