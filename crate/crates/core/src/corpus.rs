//! Manifest ingestion, label harmonization and domain assignment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::emotion::{CanonicalEmotion, EmotionDistribution, N_EMOTIONS};
use crate::error::{Error, Result};
use crate::rng;

/// One manifest line before harmonization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSample {
    pub id: String,
    pub audio_path: String,
    pub dataset: String,
    pub speaker: String,
    pub language: String,
    pub duration_s: f64,
    #[serde(rename = "labels")]
    pub raw_labels: BTreeMap<String, f64>,
}

/// A raw sample with its harmonized emotion scores but no domain yet.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub raw: RawSample,
    pub emotion: EmotionDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub audio_path: String,
    pub dataset: String,
    pub speaker: String,
    pub language: String,
    pub duration_s: f64,
    #[serde(rename = "labels")]
    pub raw_labels: BTreeMap<String, f64>,
    pub emotion: EmotionDistribution,
    pub domain_id: usize,
}

impl Sample {
    pub fn domain_key(&self) -> DomainKey {
        DomainKey {
            dataset: self.dataset.clone(),
            speaker: self.speaker.clone(),
            language: self.language.clone(),
        }
    }
}

impl From<Sample> for LabeledSample {
    fn from(s: Sample) -> Self {
        LabeledSample {
            raw: RawSample {
                id: s.id,
                audio_path: s.audio_path,
                dataset: s.dataset,
                speaker: s.speaker,
                language: s.language,
                duration_s: s.duration_s,
                raw_labels: s.raw_labels,
            },
            emotion: s.emotion,
        }
    }
}

/// Composite domain identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainKey {
    pub dataset: String,
    pub speaker: String,
    pub language: String,
}

/// Bijection between domain triples and ids `0..len()`, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainTable {
    keys: Vec<DomainKey>,
    lookup: HashMap<DomainKey, usize>,
}

impl DomainTable {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &DomainKey) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn key(&self, id: usize) -> Option<&DomainKey> {
        self.keys.get(id)
    }

    pub fn keys(&self) -> &[DomainKey] {
        &self.keys
    }

    fn intern(&mut self, key: DomainKey) -> usize {
        if let Some(&id) = self.lookup.get(&key) {
            return id;
        }
        let id = self.keys.len();
        self.lookup.insert(key.clone(), id);
        self.keys.push(key);
        id
    }
}

/// Raw label → weighted canonical targets.
///
/// Keys are matched case-insensitively. Canonical names not present in the
/// table map to themselves with weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMapping {
    entries: BTreeMap<String, Vec<(CanonicalEmotion, f64)>>,
}

impl Default for LabelMapping {
    fn default() -> Self {
        let mut entries: BTreeMap<_, _> = CanonicalEmotion::ALL
            .iter()
            .map(|e| (e.name().to_string(), vec![(*e, 1.0)]))
            .collect();
        entries.insert(
            "contempt".to_string(),
            vec![(CanonicalEmotion::Disgust, 0.5)],
        );
        LabelMapping { entries }
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().to_lowercase()
}

impl LabelMapping {
    pub fn new(entries: BTreeMap<String, Vec<(CanonicalEmotion, f64)>>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (raw, targets) in entries {
            if targets.is_empty() {
                return Err(Error::Mapping(format!("`{raw}` maps to no canonical class")));
            }
            for (e, w) in &targets {
                if !(*w > 0.0 && *w <= 1.0) {
                    return Err(Error::Mapping(format!(
                        "`{raw}` -> {e}: weight {w} outside (0, 1]"
                    )));
                }
            }
            out.insert(normalize_key(&raw), targets);
        }
        Ok(LabelMapping { entries: out })
    }

    /// Parse the JSON table: `{ "raw": [["canonical", weight], ...], ... }`.
    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: BTreeMap<String, Vec<(String, f64)>> = serde_json::from_str(text)
            .map_err(|e| Error::Mapping(format!("malformed mapping: {e}")))?;
        let mut entries = BTreeMap::new();
        for (raw, targets) in parsed {
            let targets = targets
                .into_iter()
                .map(|(name, w)| Ok((name.parse::<CanonicalEmotion>()?, w)))
                .collect::<Result<Vec<_>>>()?;
            entries.insert(raw, targets);
        }
        LabelMapping::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelMapping::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let table: BTreeMap<&str, Vec<(&str, f64)>> = self
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.iter().map(|(e, w)| (e.name(), *w)).collect()))
            .collect();
        serde_json::to_string_pretty(&table).expect("mapping serializes")
    }

    pub fn targets(&self, raw_label: &str) -> Option<Vec<(CanonicalEmotion, f64)>> {
        let key = normalize_key(raw_label);
        if let Some(t) = self.entries.get(&key) {
            return Some(t.clone());
        }
        key.parse::<CanonicalEmotion>().ok().map(|e| vec![(e, 1.0)])
    }
}

/// Read a JSONL manifest. Blank lines are skipped; line numbers are 1-based.
pub fn load_manifest(path: &Path) -> Result<Vec<RawSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file), path)
}

pub fn parse_manifest<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawSample>> {
    let err = |line: usize, message: String| Error::Manifest {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: RawSample =
            serde_json::from_str(&line).map_err(|e| err(lineno, format!("parse error: {e}")))?;
        if !(sample.duration_s > 0.0 && sample.duration_s.is_finite()) {
            return Err(err(
                lineno,
                format!("non-positive duration {} for `{}`", sample.duration_s, sample.id),
            ));
        }
        if let Some((k, v)) = sample.raw_labels.iter().find(|(_, v)| !(**v >= 0.0)) {
            return Err(err(lineno, format!("negative score {v} for label `{k}`")));
        }
        if !seen.insert(sample.id.clone()) {
            return Err(err(lineno, format!("duplicate id `{}`", sample.id)));
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Project raw label scores onto the canonical classes:
/// `c_j = Σ_r score(r) · weight(r → j)`.
pub fn harmonize(
    raw_labels: &BTreeMap<String, f64>,
    mapping: &LabelMapping,
) -> Result<EmotionDistribution> {
    let mut scores = [0.0; N_EMOTIONS];
    let mut unknown = Vec::new();
    for (label, &score) in raw_labels {
        match mapping.targets(label) {
            Some(targets) => {
                for (e, w) in targets {
                    scores[e.index()] += score * w;
                }
            }
            None => unknown.push(label.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownLabel(unknown));
    }
    let dist = EmotionDistribution::new(scores)?;
    if dist.is_zero() {
        return Err(Error::ZeroDistribution);
    }
    Ok(dist)
}

/// Harmonize a whole manifest, tagging failures with the sample id.
pub fn harmonize_all(raw: Vec<RawSample>, mapping: &LabelMapping) -> Result<Vec<LabeledSample>> {
    raw.into_iter()
        .map(|r| {
            let emotion =
                harmonize(&r.raw_labels, mapping).map_err(|e| e.at_stage("harmonize", &r.id))?;
            Ok(LabeledSample { raw: r, emotion })
        })
        .collect()
}

/// Give every distinct (dataset, speaker, language) triple an id in
/// first-appearance order.
pub fn assign_domains(samples: Vec<LabeledSample>) -> (Vec<Sample>, DomainTable) {
    let mut table = DomainTable::default();
    let out = samples
        .into_iter()
        .map(|LabeledSample { raw, emotion }| {
            let domain_id = table.intern(DomainKey {
                dataset: raw.dataset.clone(),
                speaker: raw.speaker.clone(),
                language: raw.language.clone(),
            });
            Sample {
                id: raw.id,
                audio_path: raw.audio_path,
                dataset: raw.dataset,
                speaker: raw.speaker,
                language: raw.language,
                duration_s: raw.duration_s,
                raw_labels: raw.raw_labels,
                emotion,
                domain_id,
            }
        })
        .collect();
    (out, table)
}

/// Seeded partition into `round(train_fraction · N)` training items and the
/// rest. Both halves keep the input order.
pub fn split_train_val<T: Clone>(
    samples: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if samples.is_empty() {
        return Err(Error::Empty("cannot split an empty sample list"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n = samples.len();
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (s, t) in samples.iter().zip(in_train) {
        if t {
            train.push(s.clone());
        } else {
            val.push(s.clone());
        }
    }
    Ok((train, val))
}

/// Rule removing a held-out test set before the train/validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub dataset: String,
    #[serde(default)]
    pub speaker_prefix: Option<String>,
}

impl Holdout {
    pub fn matches(&self, s: &Sample) -> bool {
        s.dataset == self.dataset
            && self
                .speaker_prefix
                .as_deref()
                .is_none_or(|p| s.speaker.starts_with(p))
    }
}
