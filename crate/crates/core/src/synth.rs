//! Small procedurally generated corpora for demos and tests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::audio::{write_wav, Waveform};
use crate::corpus::RawSample;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

const RAW_LABELS: [&str; 9] = [
    "happiness", "sadness", "anger", "fear", "neutral", "surprise", "disgust", "contempt", "other",
];

/// Write `n` WAV files plus `manifest.jsonl` into `dir` and return the
/// manifest path. Clips last 1 to 6 s, so packing never gets stuck. Samples alternate between two datasets, and every third
/// file is stored at 22.05 kHz.
pub fn write_synthetic_corpus(dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("audio")).map_err(|e| Error::io(dir, e))?;
    let mut rng = StreamKey::new(seed).with_str("synth-corpus").rng();
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let rate = if i % 3 == 2 { 22_050 } else { 16_000 };
        let duration_s = f64::from(rng.random_range(10u32..=60)) / 10.0;
        let len = (duration_s * f64::from(rate)).round() as usize;
        let f0 = rng.random_range(110.0..330.0);
        let amp = rng.random_range(0.05..0.5);
        let samples = (0..len)
            .map(|t| {
                let x = t as f64 / f64::from(rate);
                let env = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * 3.0 * x).cos());
                let voice = (2.0 * std::f64::consts::PI * f0 * x).sin()
                    + 0.3 * (2.0 * std::f64::consts::PI * 2.0 * f0 * x).sin();
                (amp * env * voice + 0.01 * rng.random_range(-1.0..1.0)) as f32
            })
            .collect();
        let rel = format!("audio/utt_{i:04}.wav");
        write_wav(&dir.join(&rel), &Waveform::new(samples, rate)?)?;

        let mut labels = BTreeMap::new();
        let n_labels = rng.random_range(1..=3);
        for _ in 0..n_labels {
            let name = RAW_LABELS[rng.random_range(0..RAW_LABELS.len())];
            *labels.entry(name.to_string()).or_insert(0.0) += f64::from(rng.random_range(1u32..=5)) / 5.0;
        }
        let dataset = if i % 2 == 0 { "alpha" } else { "beta" };
        lines.push(RawSample {
            id: format!("{dataset}_{i:04}"),
            audio_path: rel,
            dataset: dataset.to_string(),
            speaker: format!("spk{}", i % 4),
            language: if i % 2 == 0 { "EN" } else { "DE" }.to_string(),
            duration_s: len as f64 / f64::from(rate),
            raw_labels: labels,
        });
    }
    let path = dir.join("manifest.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for l in &lines {
        serde_json::to_writer(&mut f, l)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(path)
}
