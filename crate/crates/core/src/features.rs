//! Log-mel featurization compatible with the Whisper front end, plus the
//! spectrogram-side augmentations.
//!
//! Front end: 400-point periodic Hann window, 160-sample hop, reflect
//! padding of 200 samples at both ends, power spectrum, 80-band Slaney mel
//! filterbank over 0 to 8 kHz, `log10(max(x, 1e-10))`, floor at `max − 8`,
//! then `(x + 4) / 4`. The last STFT frame is dropped, so a signal of `n`
//! samples yields `n / 160` frames. All arithmetic runs in `f64`.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_MELS: usize = 80;
pub const CHUNK_LENGTH_S: usize = 30;
pub const N_SAMPLES: usize = CHUNK_LENGTH_S * SAMPLE_RATE as usize;
pub const N_FRAMES: usize = N_SAMPLES / HOP_LENGTH;
pub const FRAME_HOP_S: f64 = HOP_LENGTH as f64 / SAMPLE_RATE as f64;

const LOG_FLOOR: f64 = 1e-10;
const DYNAMIC_RANGE: f64 = 8.0;

/// Row-major `n_mels × n_frames` matrix (mel-bin major).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    n_mels: usize,
    n_frames: usize,
    values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn from_values(n_mels: usize, n_frames: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::Dimension {
                expected: n_mels * n_frames,
                got: values.len(),
            });
        }
        Ok(MelSpectrogram {
            n_mels,
            n_frames,
            values,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.values[mel * self.n_frames..(mel + 1) * self.n_frames]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len().max(1) as f64
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = 15.0;
    let logstep = 27.0 / 6.4f64.ln();
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() * logstep
    } else {
        3.0 * hz / 200.0
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = 15.0;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (logstep * (mel - MIN_LOG_MEL)).exp()
    } else {
        200.0 * mel / 3.0
    }
}

/// numpy-style `linspace` (last point pinned to `stop`).
fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    let step = (stop - start) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * step + start).collect();
    v[n - 1] = stop;
    v
}

/// One triangular filter: weights for FFT bins `first..first + weights.len()`.
#[derive(Debug, Clone)]
struct MelBand {
    first: usize,
    weights: Vec<f64>,
}

/// Slaney-scale, Slaney-normalized triangular filterbank.
fn mel_filterbank(n_fft: usize, n_mels: usize, sample_rate: f64) -> Vec<MelBand> {
    let n_bins = n_fft / 2 + 1;
    let fft_freqs = linspace(0.0, (sample_rate / 2.0).floor(), n_bins);
    let mel_pts = linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2);
    let hz_pts: Vec<f64> = mel_pts.iter().map(|&m| mel_to_hz(m)).collect();
    (0..n_mels)
        .map(|m| {
            let enorm = 2.0 / (hz_pts[m + 2] - hz_pts[m]);
            let lower = hz_pts[m + 1] - hz_pts[m];
            let upper = hz_pts[m + 2] - hz_pts[m + 1];
            let dense: Vec<f64> = fft_freqs
                .iter()
                .map(|&f| {
                    let down = -(hz_pts[m] - f) / lower;
                    let up = (hz_pts[m + 2] - f) / upper;
                    down.min(up).max(0.0) * enorm
                })
                .collect();
            let first = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = dense.iter().rposition(|&w| w > 0.0).map_or(first, |i| i + 1);
            MelBand {
                first,
                weights: dense[first..last].to_vec(),
            }
        })
        .collect()
}

/// Index into a signal of length `n` extended by mirror reflection about its
/// end samples (edge sample not repeated).
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Reusable log-mel front end. Cheap to share across threads.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bands: Vec<MelBand>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("n_mels", &self.bands.len()).finish()
    }
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        MelExtractor {
            fft,
            window,
            bands: mel_filterbank(N_FFT, N_MELS, f64::from(SAMPLE_RATE)),
        }
    }

    /// Process-wide shared instance.
    pub fn shared() -> &'static MelExtractor {
        static SHARED: OnceLock<MelExtractor> = OnceLock::new();
        SHARED.get_or_init(MelExtractor::new)
    }

    /// Filterbank as a dense `n_mels × (n_fft/2 + 1)` matrix.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        self.bands
            .iter()
            .map(|b| {
                let mut row = vec![0.0; N_FFT / 2 + 1];
                row[b.first..b.first + b.weights.len()].copy_from_slice(&b.weights);
                row
            })
            .collect()
    }

    pub fn log_mel_spectrogram(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate_hz != SAMPLE_RATE {
            return Err(Error::OutOfRange(format!(
                "featurizer expects {SAMPLE_RATE} Hz audio, got {} Hz",
                w.sample_rate_hz
            )));
        }
        let n = w.len();
        let n_frames = n / HOP_LENGTH;
        if n_frames == 0 {
            return Err(Error::OutOfRange(format!(
                "{n} samples is shorter than one {HOP_LENGTH}-sample hop"
            )));
        }
        let x = &w.samples;
        let pad = (N_FFT / 2) as i64;
        let mut log_mel = vec![0.0f64; N_MELS * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; N_FFT / 2 + 1];
        for t in 0..n_frames {
            let origin = (t * HOP_LENGTH) as i64 - pad;
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = origin + k as i64;
                let v = if idx >= 0 && (idx as usize) < n {
                    x[idx as usize]
                } else {
                    x[reflect_index(idx, n)]
                };
                *slot = Complex::new(f64::from(v) * self.window[k], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, band) in self.bands.iter().enumerate() {
                let e: f64 = band
                    .weights
                    .iter()
                    .zip(&power[band.first..])
                    .map(|(w, p)| w * p)
                    .sum();
                log_mel[m * n_frames + t] = e.max(LOG_FLOOR).log10();
            }
        }
        let peak = log_mel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = peak - DYNAMIC_RANGE;
        let values = log_mel
            .into_iter()
            .map(|v| ((v.max(floor) + 4.0) / 4.0) as f32)
            .collect();
        MelSpectrogram::from_values(N_MELS, n_frames, values)
    }
}

pub fn log_mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    MelExtractor::shared().log_mel_spectrogram(w)
}

/// A waveform padded or trimmed to the model context, with the count of
/// samples and frames that carry real audio.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedWaveform {
    pub waveform: Waveform,
    pub valid_samples: usize,
    pub valid_frames: usize,
}

/// Zero-pad at the tail, or truncate, to exactly `context_s` seconds.
pub fn pad_or_trim(w: &Waveform, context_s: f64) -> PaddedWaveform {
    let target = (context_s * f64::from(w.sample_rate_hz)).round() as usize;
    let hop = (HOP_LENGTH as u64 * u64::from(w.sample_rate_hz) / u64::from(SAMPLE_RATE)).max(1) as usize;
    let valid_samples = w.len().min(target);
    let mut samples = w.samples[..valid_samples].to_vec();
    samples.resize(target, 0.0);
    PaddedWaveform {
        waveform: w.with_samples(samples),
        valid_samples,
        valid_frames: valid_samples.div_ceil(hop).min(target / hop),
    }
}

/// Circular shift to the right by `shift` samples (negative shifts left).
pub fn roll_waveform(w: &Waveform, shift: i64) -> Result<Waveform> {
    let n = w.len() as i64;
    if shift.abs() > n {
        return Err(Error::OutOfRange(format!("shift {shift} exceeds length {n}")));
    }
    let mut samples = w.samples.clone();
    samples.rotate_right(shift.rem_euclid(n.max(1)) as usize);
    Ok(w.with_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFill {
    Mean,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecAugmentConfig {
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    pub max_time_width: usize,
    pub noise_std: f64,
    pub freq_mask_prob: f64,
    pub time_mask_prob: f64,
    pub noise_prob: f64,
    /// Probability of rolling each member waveform before concatenation.
    pub roll_prob: f64,
    pub fill: MaskFill,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            n_freq_masks: 2,
            max_freq_width: 27,
            n_time_masks: 2,
            max_time_width: 100,
            noise_std: 0.05,
            freq_mask_prob: 0.2,
            time_mask_prob: 0.2,
            noise_prob: 0.2,
            roll_prob: 0.2,
            fill: MaskFill::Mean,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        SpecAugmentConfig {
            freq_mask_prob: 0.0,
            time_mask_prob: 0.0,
            noise_prob: 0.0,
            roll_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("freq_mask_prob", self.freq_mask_prob),
            ("time_mask_prob", self.time_mask_prob),
            ("noise_prob", self.noise_prob),
            ("roll_prob", self.roll_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} not in [0, 1]")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {}", self.noise_std)));
        }
        if self.max_freq_width > N_MELS {
            return Err(Error::Config(format!(
                "max_freq_width {} exceeds {N_MELS} mel bins",
                self.max_freq_width
            )));
        }
        Ok(())
    }
}

/// Masks and noise actually applied by one [`spec_augment`] call, as
/// `(start, width)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecAugmentLog {
    pub freq_masks: Vec<(usize, usize)>,
    pub time_masks: Vec<(usize, usize)>,
    pub noise: bool,
}

fn draw_band<R: Rng + ?Sized>(rng: &mut R, max_width: usize, axis: usize) -> (usize, usize) {
    let width = rng.random_range(0..=max_width.min(axis));
    let start = rng.random_range(0..=axis - width);
    (start, width)
}

pub fn spec_augment<R: Rng + ?Sized>(
    m: &MelSpectrogram,
    cfg: &SpecAugmentConfig,
    rng: &mut R,
) -> (MelSpectrogram, SpecAugmentLog) {
    let mut out = m.clone();
    let mut log = SpecAugmentLog::default();
    let fill = match cfg.fill {
        MaskFill::Mean => m.mean() as f32,
        MaskFill::Zero => 0.0,
    };
    let (n_mels, n_frames) = (m.n_mels, m.n_frames);

    if rng.random::<f64>() < cfg.freq_mask_prob {
        for _ in 0..cfg.n_freq_masks {
            let (start, width) = draw_band(rng, cfg.max_freq_width, n_mels);
            out.values[start * n_frames..(start + width) * n_frames].fill(fill);
            log.freq_masks.push((start, width));
        }
    }
    if rng.random::<f64>() < cfg.time_mask_prob {
        for _ in 0..cfg.n_time_masks {
            let (start, width) = draw_band(rng, cfg.max_time_width, n_frames);
            for row in out.values.chunks_mut(n_frames) {
                row[start..start + width].fill(fill);
            }
            log.time_masks.push((start, width));
        }
    }
    if rng.random::<f64>() < cfg.noise_prob && cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for v in &mut out.values {
            *v = (f64::from(*v) + normal.sample(rng)) as f32;
        }
        log.noise = true;
    }
    (out, log)
}
