//! End-to-end driver: manifests in, packed feature files out.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Waveform};
use crate::augment::{augment_waveform, resample_to, AugmentLog, Effect};
use crate::config::PipelineConfig;
use crate::corpus::{
    assign_domains, harmonize_all, load_manifest, split_train_val, LabelMapping, RawSample,
    Sample,
};
use crate::emotion::{CanonicalEmotion, N_EMOTIONS};
use crate::error::{Error, Result};
use crate::features::{pad_or_trim, roll_waveform, spec_augment, MelExtractor, SAMPLE_RATE};
use crate::format::{FeatureFile, MemberRecord};
use crate::losses::label_priors;
use crate::packer::{prepare_pool, retrieve_sequence, PackedSequence, PackerConfig};
use crate::rng::StreamKey;
use crate::smoothing::smooth_corpus;

/// Which half of the split a sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Load and concatenate manifests, resolving relative audio paths against
/// each manifest's directory.
pub fn load_manifests(paths: &[PathBuf]) -> Result<Vec<RawSample>> {
    if paths.is_empty() {
        return Err(Error::Config("no input: the manifest list is empty".into()));
    }
    let mut all = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for p in paths {
        let base = p.parent().unwrap_or(Path::new("."));
        for mut s in load_manifest(p)? {
            if !seen.insert(s.id.clone()) {
                return Err(Error::Manifest {
                    path: p.clone(),
                    line: 0,
                    message: format!("sample id `{}` already used by another manifest", s.id),
                });
            }
            if Path::new(&s.audio_path).is_relative() {
                s.audio_path = base.join(&s.audio_path).to_string_lossy().into_owned();
            }
            all.push(s);
        }
    }
    Ok(all)
}

/// Corpus state after harmonize → domains → holdout → smooth → split.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub holdout: Vec<Sample>,
    pub n_domains: usize,
    pub dataset_intensity: BTreeMap<String, f64>,
}

pub fn prepare_corpus(cfg: &PipelineConfig) -> Result<PreparedCorpus> {
    let raw = load_manifests(&cfg.manifests)?;
    let mapping = match &cfg.mapping {
        Some(p) => LabelMapping::load(p)?,
        None => LabelMapping::default(),
    };
    let labeled = harmonize_all(raw, &mapping)?;
    let (samples, domains) = assign_domains(labeled);
    let (holdout, kept): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .partition(|s| cfg.holdout.iter().any(|h| h.matches(s)));
    if kept.is_empty() {
        return Err(Error::Empty("every sample is held out"));
    }
    let (kept, dataset_intensity) = if cfg.smoothing {
        smooth_corpus(&kept)?
    } else {
        (kept, BTreeMap::new())
    };
    let (train, val) = split_train_val(&kept, cfg.train_fraction, cfg.split_seed)?;
    Ok(PreparedCorpus {
        train,
        val,
        holdout,
        n_domains: domains.len(),
        dataset_intensity,
    })
}

/// Pack one split. Zero `n_sequences` stops before the first refresh.
pub fn pack_split(
    samples: &[Sample],
    cfg: &PipelineConfig,
    split: Split,
) -> Result<(Vec<PackedSequence>, usize)> {
    if samples.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let packer = PackerConfig {
        target_length_s: cfg.context_s,
        fill_ratio: cfg.packing.fill_ratio,
        refresh_threshold: cfg.packing.refresh_threshold,
    };
    let mut pool = prepare_pool(samples, 0, samples.len())?;
    let mut rng = StreamKey::new(cfg.seed).with_str("pack").with_str(split.name()).rng();
    let mut out = Vec::new();
    loop {
        if cfg.packing.n_sequences > 0 && out.len() == cfg.packing.n_sequences {
            break;
        }
        let seq = retrieve_sequence(&mut pool, &packer, &mut rng)?;
        if cfg.packing.n_sequences == 0 && seq.refreshed {
            break;
        }
        out.push(seq);
    }
    Ok((out, pool.refreshes()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub trials: usize,
    pub fired: BTreeMap<String, usize>,
    pub noise_skipped: usize,
    pub rolled: usize,
    pub freq_masked: usize,
    pub time_masked: usize,
    pub spec_noise: usize,
}

impl AugmentStats {
    fn record(&mut self, log: &AugmentLog) {
        self.trials += 1;
        for e in Effect::ORDER {
            *self.fired.entry(e.name().to_string()).or_default() += usize::from(log.fired(e));
        }
        self.noise_skipped += usize::from(log.noise_skipped);
    }
}

struct BuiltSequence {
    file: FeatureFile,
    logs: Vec<AugmentLog>,
    rolled: usize,
    spec: crate::features::SpecAugmentLog,
}

fn load_member(s: &Sample) -> Result<Waveform> {
    let w = read_wav(Path::new(&s.audio_path))?;
    resample_to(&w, SAMPLE_RATE)
}

fn build_sequence(
    seq: &PackedSequence,
    index: usize,
    samples: &[Sample],
    split: Split,
    cfg: &PipelineConfig,
    extractor: &MelExtractor,
) -> Result<BuiltSequence> {
    let seq_key = StreamKey::new(cfg.seed)
        .with_str(split.name())
        .with_index(index as u64);
    let augmenting = split == Split::Train;
    let mut audio: Vec<f32> = Vec::new();
    let mut members = Vec::with_capacity(seq.source_indices.len());
    let mut logs = Vec::new();
    let mut rolled = 0;
    for &si in &seq.source_indices {
        let s = &samples[si];
        let wrap = |e: Error| e.at_stage("load", &s.id);
        let mut w = load_member(s).map_err(wrap)?;
        if augmenting {
            let key = seq_key.with_str(&s.id);
            let (aug, log) = augment_waveform(&w, &cfg.augment, key.with_str("augment"))
                .map_err(|e| e.at_stage("augment", &s.id))?;
            logs.push(log);
            w = aug;
            let mut rng = key.with_str("roll").rng();
            if rng.random::<f64>() < cfg.spec_augment.roll_prob && !w.is_empty() {
                let shift = rng.random_range(0..w.len()) as i64;
                w = roll_waveform(&w, shift).map_err(|e| e.at_stage("roll", &s.id))?;
                rolled += 1;
            }
        }
        let rate = f64::from(SAMPLE_RATE);
        members.push(MemberRecord {
            id: s.id.clone(),
            start_s: (audio.len() as f64 / rate) as f32,
            dur_s: (w.len() as f64 / rate) as f32,
            emotion: (*s.emotion.scores()).map(|v| v as f32),
            domain_id: s.domain_id as u32,
        });
        audio.extend_from_slice(&w.samples);
    }
    let first = seq.sample_ids.first().map(String::as_str).unwrap_or("");
    let joined = Waveform::new(audio, SAMPLE_RATE).map_err(|e| e.at_stage("concatenate", first))?;
    let padded = pad_or_trim(&joined, cfg.context_s);
    let mel = extractor
        .log_mel_spectrogram(&padded.waveform)
        .map_err(|e| e.at_stage("featurize", first))?;
    let (mel, spec) = if augmenting {
        let mut rng = seq_key.with_str("spec_augment").rng();
        spec_augment(&mel, &cfg.spec_augment, &mut rng)
    } else {
        (mel, Default::default())
    };
    Ok(BuiltSequence {
        file: FeatureFile {
            mel,
            total_duration_s: seq.total_duration_s as f32,
            members,
        },
        logs,
        rolled,
        spec,
    })
}

/// Relative output path of sequence `index` within a split directory.
pub fn sequence_path(split: Split, index: usize) -> PathBuf {
    PathBuf::from(split.name())
        .join(format!("{:04}", index / 1000))
        .join(format!("seq_{index:06}.epk"))
}

#[derive(Debug, Clone, Serialize)]
struct SidecarLine<'a> {
    index: usize,
    file: String,
    total_duration_s: f64,
    members: &'a [MemberRecord],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub samples: usize,
    pub sequences: usize,
    pub pool_refreshes: usize,
    pub packed_duration_s: f64,
    pub min_sequence_s: Option<f64>,
    pub max_sequence_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub input_samples: usize,
    pub holdout_samples: usize,
    pub domains: usize,
    pub dataset_intensity: BTreeMap<String, f64>,
    pub splits: BTreeMap<Split, SplitReport>,
    pub total_packed_duration_s: f64,
    pub augmentation: AugmentStats,
    pub priors: Option<BTreeMap<CanonicalEmotion, f64>>,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    if cfg.manifests.is_empty() {
        return Err(Error::Config("no input: the manifest list is empty".into()));
    }
    cfg.validate()?;
    let corpus = prepare_corpus(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let extractor = MelExtractor::shared();
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut report = PipelineReport {
        input_samples: corpus.train.len() + corpus.val.len() + corpus.holdout.len(),
        holdout_samples: corpus.holdout.len(),
        domains: corpus.n_domains,
        dataset_intensity: corpus.dataset_intensity.clone(),
        ..Default::default()
    };
    report.priors = label_priors(corpus.train.iter().map(|s| s.emotion.scores()))
        .ok()
        .map(|p| CanonicalEmotion::ALL.iter().map(|&e| (e, p[e.index()])).collect());

    for (split, samples) in [(Split::Train, &corpus.train), (Split::Val, &corpus.val)] {
        let (seqs, refreshes) = pack_split(samples, cfg, split)?;
        let built: Vec<BuiltSequence> = pool.install(|| {
            seqs.par_iter()
                .enumerate()
                .map(|(i, seq)| {
                    let b = build_sequence(seq, i, samples, split, cfg, extractor)?;
                    let path = out.join(sequence_path(split, i));
                    if let Some(dir) = path.parent() {
                        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    b.file.write(&path)?;
                    Ok(b)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let lines: Vec<SidecarLine> = built
            .iter()
            .enumerate()
            .map(|(i, b)| SidecarLine {
                index: i,
                file: sequence_path(split, i).to_string_lossy().into_owned(),
                total_duration_s: seqs[i].total_duration_s,
                members: &b.file.members,
            })
            .collect();
        write_jsonl(&out.join(format!("{}.jsonl", split.name())), &lines)?;

        for b in &built {
            for log in &b.logs {
                report.augmentation.record(log);
            }
            report.augmentation.rolled += b.rolled;
            report.augmentation.freq_masked += usize::from(!b.spec.freq_masks.is_empty());
            report.augmentation.time_masked += usize::from(!b.spec.time_masks.is_empty());
            report.augmentation.spec_noise += usize::from(b.spec.noise);
        }
        let totals: Vec<f64> = seqs.iter().map(|s| s.total_duration_s).collect();
        let sum: f64 = totals.iter().sum();
        report.total_packed_duration_s += sum;
        report.splits.insert(
            split,
            SplitReport {
                samples: samples.len(),
                sequences: seqs.len(),
                pool_refreshes: refreshes,
                packed_duration_s: sum,
                min_sequence_s: totals.iter().copied().reduce(f64::min),
                max_sequence_s: totals.iter().copied().reduce(f64::max),
            },
        );
    }
    if !corpus.holdout.is_empty() {
        write_jsonl(&out.join("holdout.jsonl"), &corpus.holdout)?;
    }
    let text = serde_json::to_string_pretty(&report)?;
    let path = out.join("report.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Frame-level targets for a decoded feature file.
pub fn file_frame_targets(f: &FeatureFile) -> crate::packer::FrameTargets {
    let spans: Vec<(f64, f64, [f32; N_EMOTIONS])> = f
        .members
        .iter()
        .map(|m| (f64::from(m.start_s), f64::from(m.dur_s), m.emotion))
        .collect();
    crate::packer::frame_targets(&spans, f.mel.n_frames(), crate::features::FRAME_HOP_S)
}
