//! Symbolic piano music generation tuned against an audio-domain aesthetic
//! reward.
//!
//! The pipeline:
//!
//! 1. [`midi`] ingests Standard MIDI Files, keeps the piano parts and gates
//!    the corpus on density and sparsity.
//! 2. [`tokenizer`] turns scores into bar/position/pitch/velocity/duration
//!    token streams.
//! 3. [`model`] is a small causal transformer with hand-written reverse-mode
//!    gradients, pretrained with next-token cross-entropy.
//! 4. [`render`] synthesizes completions to audio, [`scorer`] rates the
//!    audio, and [`grpo`] updates the policy with group-relative advantages
//!    and a KL anchor to the frozen pretrained model.
//! 5. [`features`] measures what changed: note counts, polyphony, empty
//!    beats, pitch and velocity statistics, scale consistency and output
//!    diversity.

pub mod corpus;
pub mod features;
pub mod grpo;
pub mod midi;
pub mod model;
pub mod render;
pub mod scorer;
pub mod tokenizer;
pub mod util;

pub use features::{extract_features, FeatureReport};
pub use midi::{Note, Score};
pub use model::{ModelConfig, ModelParams};
pub use render::{AudioClip, RendererChoice};
pub use scorer::{AestheticScores, Axis, RewardSpec};
pub use tokenizer::{TokenSequence, Vocab};
