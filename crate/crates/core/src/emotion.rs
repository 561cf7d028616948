//! The canonical emotion label space.

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of canonical emotion classes.
pub const N_EMOTIONS: usize = 8;

/// The eight canonical classes, in the fixed order used for every vector
/// index, file layout and report in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonicalEmotion {
    Happiness,
    Sadness,
    Disgust,
    Fear,
    Surprise,
    Anger,
    Other,
    Neutral,
}

impl CanonicalEmotion {
    pub const ALL: [CanonicalEmotion; N_EMOTIONS] = [
        CanonicalEmotion::Happiness,
        CanonicalEmotion::Sadness,
        CanonicalEmotion::Disgust,
        CanonicalEmotion::Fear,
        CanonicalEmotion::Surprise,
        CanonicalEmotion::Anger,
        CanonicalEmotion::Other,
        CanonicalEmotion::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CanonicalEmotion::Happiness => "happiness",
            CanonicalEmotion::Sadness => "sadness",
            CanonicalEmotion::Disgust => "disgust",
            CanonicalEmotion::Fear => "fear",
            CanonicalEmotion::Surprise => "surprise",
            CanonicalEmotion::Anger => "anger",
            CanonicalEmotion::Other => "other",
            CanonicalEmotion::Neutral => "neutral",
        }
    }
}

impl fmt::Display for CanonicalEmotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CanonicalEmotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Mapping(format!("`{s}` is not a canonical emotion")))
    }
}

/// Non-negative scores over the canonical classes for one sample.
///
/// Scores are vote-like mass and are not normalized; the sum is the
/// sample's emotional intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; N_EMOTIONS]", into = "[f64; N_EMOTIONS]")]
pub struct EmotionDistribution([f64; N_EMOTIONS]);

impl EmotionDistribution {
    pub fn new(scores: [f64; N_EMOTIONS]) -> Result<Self> {
        if let Some((i, v)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "{} score {v} is negative or non-finite",
                CanonicalEmotion::ALL[i]
            )));
        }
        Ok(EmotionDistribution(scores))
    }

    pub fn one_hot(class: CanonicalEmotion) -> Self {
        let mut s = [0.0; N_EMOTIONS];
        s[class.index()] = 1.0;
        EmotionDistribution(s)
    }

    pub fn scores(&self) -> &[f64; N_EMOTIONS] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn primary(&self) -> CanonicalEmotion {
        CanonicalEmotion::ALL[self.argmax()]
    }

    pub fn normalized(&self) -> Result<[f64; N_EMOTIONS]> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::ZeroDistribution);
        }
        Ok(self.0.map(|v| v / total))
    }
}

impl Index<CanonicalEmotion> for EmotionDistribution {
    type Output = f64;

    fn index(&self, e: CanonicalEmotion) -> &f64 {
        &self.0[e.index()]
    }
}

impl TryFrom<[f64; N_EMOTIONS]> for EmotionDistribution {
    type Error = Error;

    fn try_from(scores: [f64; N_EMOTIONS]) -> Result<Self> {
        EmotionDistribution::new(scores)
    }
}

impl From<EmotionDistribution> for [f64; N_EMOTIONS] {
    fn from(d: EmotionDistribution) -> Self {
        d.0
    }
}

/// First index of the maximum; NaN entries never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
