use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use emoprep::audio::{read_wav, write_wav};
use emoprep::augment::{augment_waveform, resample_to};
use emoprep::corpus::{assign_domains, harmonize_all, LabelMapping, Sample};
use emoprep::eval::{evaluate_logits, MetricReport};
use emoprep::features::{pad_or_trim, MelExtractor, SAMPLE_RATE};
use emoprep::format::FeatureFile;
use emoprep::golden::{check_goldens, DEFAULT_TOLERANCE};
use emoprep::pipeline::{load_manifests, pack_split, run_pipeline, Split};
use emoprep::rng::StreamKey;
use emoprep::smoothing::smooth_corpus;
use emoprep::toyhead::{run_toy, ToyTrainConfig};
use emoprep::{Error, ErrorKind, PipelineConfig, Result, N_EMOTIONS};

#[derive(Parser)]
#[command(name = "emoprep", version, about = "Speech emotion corpus preparation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config field, e.g. `--set packing.fill_ratio=0.75`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Map raw labels to canonical scores and assign domain ids.
    Harmonize,
    /// Apply neutral smoothing to harmonized samples.
    Smooth {
        #[arg(long)]
        input: PathBuf,
    },
    /// Pack samples into context-length sequences.
    Pack {
        #[arg(long)]
        input: PathBuf,
    },
    /// Augment one WAV file.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Log-mel features of one WAV file.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Pad or trim to the configured context first.
        #[arg(long)]
        pad: bool,
    },
    /// Full pipeline.
    Run,
    /// Score logits (JSONL of `{"logits": [..], "target": [..]}`).
    Eval {
        #[arg(long)]
        input: PathBuf,
        /// Corpus name used to look up allowed classes.
        #[arg(long)]
        corpus: Option<String>,
        /// Apply logit adjustment with the configured priors.
        #[arg(long)]
        adjust: bool,
    },
    /// Train the linear adversarial demonstration.
    ToyTrain {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        w_d: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Compare the featurizer with golden fixtures.
    GoldenCheck {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

impl Global {
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut overrides = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(j) = self.jobs {
            overrides.push(format!("jobs={j}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("out_dir={}", Value::String(o.to_string_lossy().into_owned())));
        }
        overrides.extend(self.overrides.iter().cloned());
        let cfg = PipelineConfig::load(self.config.as_deref(), &overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<Value> {
    let cfg = cli.global.pipeline_config()?;
    let out = &cfg.out_dir;
    match cli.command {
        Command::Harmonize => {
            let raw = load_manifests(&cfg.manifests)?;
            let mapping = match &cfg.mapping {
                Some(p) => LabelMapping::load(p)?,
                None => LabelMapping::default(),
            };
            let (samples, domains) = assign_domains(harmonize_all(raw, &mapping)?);
            write_jsonl(&out.join("harmonized.jsonl"), &samples)?;
            write_json(&out.join("domains.json"), &serde_json::to_value(domains.keys())?)?;
            Ok(json!({"samples": samples.len(), "domains": domains.len()}))
        }
        Command::Smooth { input } => {
            let (samples, means) = smooth_corpus(&read_samples(&input)?)?;
            write_jsonl(&out.join("smoothed.jsonl"), &samples)?;
            Ok(json!({"samples": samples.len(), "dataset_intensity": means}))
        }
        Command::Pack { input } => {
            let samples = read_samples(&input)?;
            let (seqs, refreshes) = pack_split(&samples, &cfg, Split::Train)?;
            write_jsonl(&out.join("sequences.jsonl"), &seqs)?;
            Ok(json!({"sequences": seqs.len(), "pool_refreshes": refreshes}))
        }
        Command::Augment { input, output } => {
            let w = read_wav(&input)?;
            let name = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let key = StreamKey::new(cfg.seed).with_str("cli-augment").with_str(&name);
            let (aug, log) = augment_waveform(&w, &cfg.augment, key)?;
            write_wav(&output, &aug)?;
            Ok(json!({"log": log, "samples": aug.len(), "sample_rate_hz": aug.sample_rate_hz}))
        }
        Command::Featurize { input, output, pad } => {
            let mut w = resample_to(&read_wav(&input)?, SAMPLE_RATE)?;
            if pad {
                w = pad_or_trim(&w, cfg.context_s).waveform;
            }
            let mel = MelExtractor::shared().log_mel_spectrogram(&w)?;
            let shape = [mel.n_mels(), mel.n_frames()];
            FeatureFile {
                mel,
                total_duration_s: w.duration_s() as f32,
                members: Vec::new(),
            }
            .write(&output)?;
            Ok(json!({"shape": shape}))
        }
        Command::Run => Ok(serde_json::to_value(run_pipeline(&cfg)?)?),
        Command::Eval { input, corpus, adjust } => {
            let f = fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
            let (mut logits, mut targets) = (Vec::new(), Vec::new());
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&input, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: EvalRow = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                    path: input.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                logits.push(row.logits);
                targets.push(row.target);
            }
            let allowed = match &corpus {
                Some(c) => cfg.loss.allowed_mask(c),
                None => [true; N_EMOTIONS],
            };
            let priors = if adjust { Some(cfg.loss.prior_vector()?) } else { None };
            let set = evaluate_logits(&logits, &targets, &allowed, priors.as_ref(), cfg.loss.tau)?;
            let report = serde_json::to_value(MetricReport::from_predictions(&set)?)?;
            if cli.global.out.is_some() {
                write_json(&out.join("metrics.json"), &report)?;
            }
            Ok(report)
        }
        Command::ToyTrain { n, w_d, epochs, lr } => {
            let defaults = ToyTrainConfig::default();
            let toy = ToyTrainConfig {
                w_d: w_d.unwrap_or(cfg.loss.w_d),
                epochs: epochs.unwrap_or(defaults.epochs),
                lr: lr.unwrap_or(defaults.lr),
                ..defaults
            };
            let (outcome, trace) = run_toy(n, cfg.seed, &toy)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let path = out.join("toy_trace.csv");
            fs::write(&path, trace.to_csv()).map_err(|e| Error::io(&path, e))?;
            Ok(serde_json::to_value(outcome)?)
        }
        Command::GoldenCheck { index, tolerance } => {
            let report = check_goldens(&index, tolerance)?;
            if !report.all_pass() {
                return Err(Error::Format(format!(
                    "featurizer differs from goldens by up to {:.3e} (tolerance {tolerance:e})",
                    report.worst()
                )));
            }
            Ok(serde_json::to_value(report)?)
        }
    }
}

#[derive(serde::Deserialize)]
struct EvalRow {
    logits: [f64; N_EMOTIONS],
    target: [f64; N_EMOTIONS],
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).unwrap_or_default();
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Internal => 4,
            })
        }
    }
}
