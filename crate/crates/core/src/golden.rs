//! Featurizer parity against checked-in golden fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::features::{MelExtractor, MelSpectrogram};
use crate::format::FeatureFile;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub name: String,
    pub recipe: serde_json::Value,
    pub input: String,
    pub golden: String,
    pub shape: [usize; 2],
    pub input_sha256: String,
    pub golden_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureIndex {
    pub extractor: String,
    pub sample_rate_hz: u32,
    pub tolerance: f64,
    pub fixtures: Vec<FixtureEntry>,
}

impl FixtureIndex {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read_checked(path: &Path, want: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let got = sha256_hex(&bytes);
    if got != want {
        return Err(Error::Format(format!(
            "{}: checksum {got} does not match index {want}",
            path.display()
        )));
    }
    Ok(bytes)
}

/// Largest elementwise absolute difference; shapes must agree.
pub fn max_abs_diff(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if (a.n_mels(), a.n_frames()) != (b.n_mels(), b.n_frames()) {
        return Err(Error::Dimension {
            expected: a.n_mels() * a.n_frames(),
            got: b.n_mels() * b.n_frames(),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureResult {
    pub name: String,
    pub shape: [usize; 2],
    pub max_abs_diff: f64,
    pub min: f32,
    pub max: f32,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GoldenReport {
    pub tolerance: f64,
    pub results: Vec<FixtureResult>,
}

impl GoldenReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn worst(&self) -> f64 {
        self.results.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max)
    }
}

/// Featurize every fixture input and compare with its golden.
pub fn check_goldens(index_path: &Path, tolerance: f64) -> Result<GoldenReport> {
    let index = FixtureIndex::load(index_path)?;
    let dir: PathBuf = index_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let extractor = MelExtractor::shared();
    let mut results = Vec::with_capacity(index.fixtures.len());
    for f in &index.fixtures {
        let input = dir.join(&f.input);
        read_checked(&input, &f.input_sha256)?;
        let golden = FeatureFile::decode(&read_checked(&dir.join(&f.golden), &f.golden_sha256)?)?;
        let wave = read_wav(&input)?;
        let mel = extractor.log_mel_spectrogram(&wave)?;
        if [mel.n_mels(), mel.n_frames()] != f.shape {
            return Err(Error::Format(format!(
                "{}: computed shape {}x{}, index says {:?}",
                f.name,
                mel.n_mels(),
                mel.n_frames(),
                f.shape
            )));
        }
        let diff = max_abs_diff(&mel, &golden.mel)?;
        let (min, max) = mel.min_max();
        results.push(FixtureResult {
            name: f.name.clone(),
            shape: f.shape,
            max_abs_diff: diff,
            min,
            max,
            pass: diff <= tolerance,
        });
    }
    Ok(GoldenReport { tolerance, results })
}
