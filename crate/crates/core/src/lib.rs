//! Corpus-to-tensor preparation for speech emotion recognition.

pub mod audio;
pub mod augment;
pub mod config;
pub mod corpus;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod features;
pub mod format;
pub mod golden;
pub mod losses;
pub mod packer;
pub mod pipeline;
pub mod rng;
pub mod smoothing;
pub mod synth;
pub mod toyhead;

pub use config::PipelineConfig;
pub use emotion::{CanonicalEmotion, EmotionDistribution, N_EMOTIONS};
pub use error::{Error, ErrorKind, Result};
pub use pipeline::{run_pipeline, PipelineReport};
