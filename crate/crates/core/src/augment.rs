//! Waveform-domain augmentation.
//!
//! Seven effects, evaluated in a fixed order. Each fires independently with
//! its own probability and draws its parameters from its own random stream,
//! keyed by `(stream key, effect index)`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Kaiser window shape for the resampling kernel.
pub const KAISER_BETA: f64 = 8.6;
/// Kernel length at unit rate.
pub const RESAMPLE_TAPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    PolarityInversion,
    Gain,
    Reversal,
    Noise,
    Resample,
    Equalization,
    Echo,
}

impl Effect {
    /// Application order.
    pub const ORDER: [Effect; 7] = [
        Effect::PolarityInversion,
        Effect::Gain,
        Effect::Reversal,
        Effect::Noise,
        Effect::Resample,
        Effect::Equalization,
        Effect::Echo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Effect::PolarityInversion => "polarity_inversion",
            Effect::Gain => "gain",
            Effect::Reversal => "reversal",
            Effect::Noise => "noise",
            Effect::Resample => "resample",
            Effect::Equalization => "equalization",
            Effect::Echo => "echo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Config(format!(
                "{what}: range [{}, {}] is degenerate",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.min + (self.max - self.min) * rng.random::<f64>()
    }

    fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.min.ln() + (self.max.ln() - self.min.ln()) * rng.random::<f64>()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectProbabilities {
    pub polarity_inversion: f64,
    pub gain: f64,
    pub reversal: f64,
    pub noise: f64,
    pub resample: f64,
    pub equalization: f64,
    pub echo: f64,
}

impl EffectProbabilities {
    pub fn uniform(p: f64) -> Self {
        EffectProbabilities {
            polarity_inversion: p,
            gain: p,
            reversal: p,
            noise: p,
            resample: p,
            equalization: p,
            echo: p,
        }
    }

    pub fn get(&self, e: Effect) -> f64 {
        match e {
            Effect::PolarityInversion => self.polarity_inversion,
            Effect::Gain => self.gain,
            Effect::Reversal => self.reversal,
            Effect::Noise => self.noise,
            Effect::Resample => self.resample,
            Effect::Equalization => self.equalization,
            Effect::Echo => self.echo,
        }
    }
}

impl Default for EffectProbabilities {
    fn default() -> Self {
        EffectProbabilities::uniform(0.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub probabilities: EffectProbabilities,
    pub gain_db: Range,
    pub noise_snr_db: Range,
    pub resample_factor: Range,
    pub eq_center_hz: Range,
    pub eq_gain_db: Range,
    pub eq_q: Range,
    pub echo_delay_ms: Range,
    pub echo_decay: Range,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probabilities: EffectProbabilities::default(),
            gain_db: Range::new(-6.0, 6.0),
            noise_snr_db: Range::new(5.0, 40.0),
            resample_factor: Range::new(0.9, 1.1),
            eq_center_hz: Range::new(100.0, 6000.0),
            eq_gain_db: Range::new(-12.0, 12.0),
            eq_q: Range::new(0.5, 2.0),
            echo_delay_ms: Range::new(50.0, 400.0),
            echo_decay: Range::new(0.1, 0.5),
        }
    }
}

impl AugmentConfig {
    /// Every effect disabled.
    pub fn disabled() -> Self {
        AugmentConfig {
            probabilities: EffectProbabilities::uniform(0.0),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in Effect::ORDER {
            let p = self.probabilities.get(e);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{} probability {p} not in [0, 1]", e.name())));
            }
        }
        self.gain_db.validate("gain_db")?;
        self.noise_snr_db.validate("noise_snr_db")?;
        self.resample_factor.validate("resample_factor")?;
        self.eq_center_hz.validate("eq_center_hz")?;
        self.eq_gain_db.validate("eq_gain_db")?;
        self.eq_q.validate("eq_q")?;
        self.echo_delay_ms.validate("echo_delay_ms")?;
        self.echo_decay.validate("echo_decay")?;
        if self.resample_factor.min < 0.5 || self.resample_factor.max > 2.0 {
            return Err(Error::Config("resample_factor must stay within [0.5, 2]".into()));
        }
        if self.eq_center_hz.min <= 0.0 || self.eq_q.min <= 0.0 {
            return Err(Error::Config("eq center and Q must be positive".into()));
        }
        if self.echo_delay_ms.min <= 0.0 || self.echo_decay.min < 0.0 || self.echo_decay.max >= 1.0 {
            return Err(Error::Config("echo delay must be > 0 and decay in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn polarity_invert(w: &Waveform) -> Waveform {
    w.with_samples(w.samples.iter().map(|&v| -v).collect())
}

pub fn apply_gain_db(w: &Waveform, gain_db: f64) -> Result<Waveform> {
    if !gain_db.is_finite() {
        return Err(Error::OutOfRange(format!("gain {gain_db} dB")));
    }
    let g = 10f64.powf(gain_db / 20.0);
    Ok(w.with_samples(
        w.samples.iter().map(|&v| (f64::from(v) * g) as f32).collect(),
    ))
}

pub fn reverse_audio(w: &Waveform) -> Waveform {
    w.with_samples(w.samples.iter().rev().copied().collect())
}

/// Add white Gaussian noise scaled so the realized SNR equals `snr_db`.
/// `snr_db = +∞` leaves the signal untouched.
pub fn add_noise<R: Rng + ?Sized>(w: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::OutOfRange(format!("snr {snr_db} dB")));
    }
    let signal_power = w.power();
    if signal_power <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let noise: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
    let raw_power = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target_power = signal_power / 10f64.powf(snr_db / 10.0);
    let scale = if raw_power > 0.0 {
        (target_power / raw_power).sqrt()
    } else {
        0.0
    };
    Ok(w.with_samples(
        w.samples
            .iter()
            .zip(&noise)
            .map(|(&s, &n)| (f64::from(s) + scale * n) as f32)
            .collect(),
    ))
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

const WINDOW_TABLE_LEN: usize = 8192;

/// Kaiser window sampled on `r ∈ [0, 1]`, read back with linear interpolation.
fn kaiser_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let i0_beta = bessel_i0(KAISER_BETA);
        (0..=WINDOW_TABLE_LEN)
            .map(|i| {
                let r = i as f64 / WINDOW_TABLE_LEN as f64;
                bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta
            })
            .collect()
    })
}

fn kaiser(r: f64) -> f64 {
    let pos = r.abs().min(1.0) * WINDOW_TABLE_LEN as f64;
    let i = (pos as usize).min(WINDOW_TABLE_LEN - 1);
    let frac = pos - i as f64;
    let t = kaiser_table();
    t[i] + frac * (t[i + 1] - t[i])
}

/// Kaiser-windowed sinc interpolation. Output sample `m` reads the input at
/// position `m · step`; when `step > 1` the kernel is widened and its cutoff
/// lowered to `1/step` to suppress aliasing.
fn sinc_interpolate(input: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    let cutoff = (1.0 / step).min(1.0);
    let half = (RESAMPLE_TAPS / 2) as f64 / cutoff;
    let n = input.len() as i64;
    (0..out_len)
        .map(|m| {
            let t = m as f64 * step;
            let lo = ((t - half).ceil() as i64).max(0);
            let hi = ((t + half).floor() as i64).min(n - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let x = t - k as f64;
                acc += f64::from(input[k as usize]) * cutoff * sinc(cutoff * x) * kaiser(x / half);
            }
            acc as f32
        })
        .collect()
}

/// Pitch/tempo perturbation: time-scale the signal by `factor` while keeping
/// the declared sample rate. Output length is `round(len / factor)`.
pub fn resample(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::OutOfRange(format!("resample factor {factor} not in [0.5, 2]")));
    }
    let out_len = ((w.len() as f64 / factor).round() as usize).max(1);
    Ok(w.with_samples(sinc_interpolate(&w.samples, factor, out_len)))
}

/// True sample-rate conversion (used when loading audio that is not at the
/// featurizer's rate).
pub fn resample_to(w: &Waveform, target_rate_hz: u32) -> Result<Waveform> {
    if target_rate_hz == 0 {
        return Err(Error::OutOfRange("target sample rate must be positive".into()));
    }
    if target_rate_hz == w.sample_rate_hz {
        return Ok(w.clone());
    }
    let step = f64::from(w.sample_rate_hz) / f64::from(target_rate_hz);
    let out_len = ((w.len() as f64 / step).round() as usize).max(1);
    Ok(Waveform {
        samples: sinc_interpolate(&w.samples, step, out_len),
        sample_rate_hz: target_rate_hz,
    })
}

/// Normalized biquad coefficients (a0 = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Peaking EQ from the Audio EQ Cookbook.
    pub fn peaking(sample_rate_hz: f64, f0: f64, gain_db: f64, q: f64) -> Self {
        let omega = 2.0 * std::f64::consts::PI * f0 / sample_rate_hz;
        let (sn, cs) = omega.sin_cos();
        let amp = 10f64.powf(gain_db / 40.0);
        let alpha = sn / (2.0 * q);
        let a0 = 1.0 + alpha / amp;
        Biquad {
            b0: (1.0 + alpha * amp) / a0,
            b1: (-2.0 * cs) / a0,
            b2: (1.0 - alpha * amp) / a0,
            a1: (-2.0 * cs) / a0,
            a2: (1.0 - alpha / amp) / a0,
        }
    }

    /// Direct form I, zero initial state.
    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let x = f64::from(x);
                let y = self.b0 * x + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y as f32
            })
            .collect()
    }
}

pub fn equalize(w: &Waveform, f0: f64, gain_db: f64, q: f64) -> Result<Waveform> {
    let nyquist = f64::from(w.sample_rate_hz) / 2.0;
    if !(f0 > 0.0 && f0 < nyquist) {
        return Err(Error::OutOfRange(format!("eq center {f0} Hz outside (0, {nyquist})")));
    }
    if !(q > 0.0 && q.is_finite()) || !gain_db.is_finite() {
        return Err(Error::OutOfRange(format!("eq q={q} gain={gain_db}")));
    }
    let bq = Biquad::peaking(f64::from(w.sample_rate_hz), f0, gain_db, q);
    Ok(w.with_samples(bq.process(&w.samples)))
}

/// `y[n] = x[n] + decay · x[n − d]` with `d = round(delay_ms · rate / 1000)`;
/// the output is `d` samples longer than the input.
pub fn add_echo(w: &Waveform, delay_ms: f64, decay: f64) -> Result<Waveform> {
    if !(delay_ms > 0.0 && delay_ms.is_finite()) {
        return Err(Error::OutOfRange(format!("echo delay {delay_ms} ms")));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::OutOfRange(format!("echo decay {decay} not in [0, 1)")));
    }
    let d = (delay_ms * f64::from(w.sample_rate_hz) / 1000.0).round() as usize;
    let mut out: Vec<f32> = w.samples.clone();
    out.resize(w.len() + d, 0.0);
    for (i, &x) in w.samples.iter().enumerate() {
        out[i + d] = (f64::from(out[i + d]) + decay * f64::from(x)) as f32;
    }
    Ok(w.with_samples(out))
}

/// Which effects fired on one waveform.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentLog {
    pub fired: [bool; 7],
    /// Noise fired but was skipped because the input was silent.
    pub noise_skipped: bool,
}

impl AugmentLog {
    pub fn fired(&self, e: Effect) -> bool {
        self.fired[e.index()]
    }
}

/// Apply the augmentation chain. Randomness for effect `i` comes only from
/// `key.with_index(i)`.
pub fn augment_waveform(
    w: &Waveform,
    cfg: &AugmentConfig,
    key: StreamKey,
) -> Result<(Waveform, AugmentLog)> {
    let mut out = w.clone();
    let mut log = AugmentLog::default();
    let rate = f64::from(w.sample_rate_hz);
    for effect in Effect::ORDER {
        let mut rng = key.with_index(effect.index() as u64).rng();
        if rng.random::<f64>() >= cfg.probabilities.get(effect) {
            continue;
        }
        log.fired[effect.index()] = true;
        out = match effect {
            Effect::PolarityInversion => polarity_invert(&out),
            Effect::Gain => apply_gain_db(&out, cfg.gain_db.sample(&mut rng))?,
            Effect::Reversal => reverse_audio(&out),
            Effect::Noise => {
                let snr = cfg.noise_snr_db.sample(&mut rng);
                match add_noise(&out, snr, &mut rng) {
                    Err(Error::ZeroEnergy) => {
                        log.noise_skipped = true;
                        out
                    }
                    other => other?,
                }
            }
            Effect::Resample => resample(&out, cfg.resample_factor.sample(&mut rng))?,
            Effect::Equalization => {
                let f0 = cfg.eq_center_hz.sample_log(&mut rng).min(0.45 * rate);
                let gain = cfg.eq_gain_db.sample(&mut rng);
                let q = cfg.eq_q.sample(&mut rng);
                equalize(&out, f0, gain, q)?
            }
            Effect::Echo => {
                let delay = cfg.echo_delay_ms.sample(&mut rng);
                let decay = cfg.echo_decay.sample(&mut rng);
                add_echo(&out, delay, decay)?
            }
        };
    }
    Ok((out, log))
}
