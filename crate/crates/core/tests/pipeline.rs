use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use emoprep::format::FeatureFile;
use emoprep::pipeline::{run_pipeline, Split};
use emoprep::synth::write_synthetic_corpus;
use emoprep::{ErrorKind, PipelineConfig};

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn config(manifest: PathBuf, out: PathBuf, jobs: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.manifests = vec![manifest];
    c.out_dir = out;
    c.jobs = jobs;
    c.seed = 42;
    c.packing.n_sequences = 4;
    c.train_fraction = 0.8;
    c
}

#[test]
fn runs_are_byte_identical_across_reruns_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_corpus(&tmp.path().join("corpus"), 10, 7).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    let report = run_pipeline(&config(manifest.clone(), a.clone(), 1)).unwrap();
    run_pipeline(&config(manifest.clone(), b.clone(), 1)).unwrap();
    run_pipeline(&config(manifest, c.clone(), 4)).unwrap();
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(ta.len() > 3);
    assert_eq!(ta, tb);
    assert_eq!(ta, tc);

    let train = &report.splits[&Split::Train];
    assert_eq!(train.sequences, 4);
    assert_eq!(report.input_samples, 10);
    assert_eq!(report.dataset_intensity.len(), 2);
    let lo = train.min_sequence_s.unwrap();
    let hi = train.max_sequence_s.unwrap();
    assert!(lo >= 24.0 - 1e-9 && hi <= 30.0 + 1e-9, "{lo} {hi}");
    let sum: f64 = report.splits.values().map(|s| s.packed_duration_s).sum();
    assert!((report.total_packed_duration_s - sum).abs() < 1e-9);

    let f = FeatureFile::read(&a.join("train/0000/seq_000000.epk")).unwrap();
    assert_eq!((f.mel.n_mels(), f.mel.n_frames()), (80, 3000));
    assert!(!f.members.is_empty());
    let sidecar = fs::read_to_string(a.join("train.jsonl")).unwrap();
    assert_eq!(sidecar.lines().count(), 4);
}

#[test]
fn empty_manifest_list_is_no_input() {
    let e = run_pipeline(&PipelineConfig::default()).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Config);
    assert!(e.to_string().contains("no input"));
}

#[test]
fn missing_audio_reports_stage_and_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_corpus(&tmp.path().join("corpus"), 10, 1).unwrap();
    fs::remove_file(tmp.path().join("corpus/audio/utt_0000.wav")).unwrap();
    let mut cfg = config(manifest, tmp.path().join("out"), 2);
    cfg.packing.n_sequences = 6;
    let e = run_pipeline(&cfg).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("load") && msg.contains("alpha_0000"), "{msg}");
    assert_eq!(e.kind(), ErrorKind::Data);
}

#[test]
fn shipped_configs_match_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mapping = emoprep::corpus::LabelMapping::load(&root.join("label_mapping.json")).unwrap();
    assert_eq!(mapping, emoprep::corpus::LabelMapping::default());
    let text = fs::read_to_string(root.join("pipeline.json")).unwrap();
    let cfg: PipelineConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg.train_fraction, 0.95);
    assert_eq!(cfg.packing.fill_ratio, 0.8);
    assert_eq!(cfg.loss.w_d, 0.01);
}
