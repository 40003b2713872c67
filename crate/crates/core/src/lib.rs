//! Context-aware text-to-speech by masked acoustic reconstruction.
//!
//! The current sentence's mel frames are masked out and concatenated with the
//! mel frames of its neighbours; the network reconstructs them from the
//! concatenated phonemes of the neighbouring sentences, sentence-pair
//! embeddings of the wider paragraph, and the unmasked acoustic context.
//!
//! Modules follow the pipeline: [`corpus`] → [`context`] → [`semantic`] /
//! [`model`] → [`train`] → [`synth`] → [`eval`].

pub mod config;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod semantic;
pub mod synth;
pub mod train;

#[cfg(test)]
mod testutil;

pub use context::{ContextWindow, MaskPolicy, Segment, SentencePair, TrainingExample};
pub use corpus::{AudioConfig, CorpusStore, Lexicon, PhonemeInventory, Utterance};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{MaskedSpeech, ModelConfig, ModelOutputs, Mode};
pub use config::{ResolvedConfig, RunConfig};
pub use synth::{SynthMode, Synthesizer};
pub use train::TrainConfig;
