//! Pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::corpus::Holdout;
use crate::error::{Error, Result};
use crate::features::SpecAugmentConfig;
use crate::losses::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackingConfig {
    pub fill_ratio: f64,
    pub refresh_threshold: usize,
    /// Sequences per split; zero packs a single pass over the pool.
    pub n_sequences: usize,
}

impl Default for PackingConfig {
    fn default() -> Self {
        PackingConfig {
            fill_ratio: crate::packer::DEFAULT_FILL_RATIO,
            refresh_threshold: 1,
            n_sequences: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifests: Vec<PathBuf>,
    /// `None` uses the built-in identity + contempt table.
    pub mapping: Option<PathBuf>,
    pub smoothing: bool,
    pub holdout: Vec<Holdout>,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub context_s: f64,
    pub packing: PackingConfig,
    pub augment: AugmentConfig,
    pub spec_augment: SpecAugmentConfig,
    pub loss: LossConfig,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifests: Vec::new(),
            mapping: None,
            smoothing: true,
            holdout: Vec::new(),
            train_fraction: 0.95,
            split_seed: 0,
            context_s: 30.0,
            packing: PackingConfig::default(),
            augment: AugmentConfig::default(),
            spec_augment: SpecAugmentConfig::default(),
            loss: LossConfig::default(),
            out_dir: PathBuf::from("out"),
            jobs: 1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a JSON file, apply `key=value` overrides, and validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut v: Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                if let Some(base) = p.parent() {
                    resolve_paths(&mut v, base);
                }
                v
            }
            None => serde_json::to_value(PipelineConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        PipelineConfig::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must be in (0, 1)",
                self.train_fraction
            )));
        }
        if !(self.context_s > 0.0 && self.context_s.is_finite()) {
            return Err(Error::Config(format!("context_s {}", self.context_s)));
        }
        let f = self.packing.fill_ratio;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("packing.fill_ratio {f} must be in (0, 1]")));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        for p in self.manifests.iter().chain(&self.mapping) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        self.augment.validate()?;
        self.spec_augment.validate()?;
        self.loss.validate()
    }
}

/// Make relative `manifests`, `mapping` and `out_dir` entries relative to `base`.
fn resolve_paths(v: &mut Value, base: &Path) {
    let fix = |s: &mut Value| {
        if let Value::String(p) = s {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
    };
    if let Some(obj) = v.as_object_mut() {
        if let Some(Value::Array(list)) = obj.get_mut("manifests") {
            list.iter_mut().for_each(fix);
        }
        for k in ["mapping", "out_dir"] {
            if let Some(s) = obj.get_mut(k) {
                fix(s);
            }
        }
    }
}

/// Apply one `dotted.key=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(v: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}
