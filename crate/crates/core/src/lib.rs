//! Speaker classification and universal targeted audio perturbations.
//!
//! The crate trains a small X-vector style classifier (MFCC front end, dilated
//! temporal convolutions, statistics pooling, embedding, probabilistic scoring
//! head), simulates shoebox-room impulse responses, and optimizes a short
//! perturbation that, tiled to any utterance length and clipped to `±ε`, pushes
//! the classifier towards a chosen speaker, optionally through simulated
//! over-the-air channels.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod audio;
pub mod error;
pub mod eval;
pub mod features;
pub mod netcore;
pub mod room;
pub mod xvector;

pub use attack::{AttackConfig, UniversalPerturbation};
pub use audio::{SpeakerLabel, Utterance, Waveform};
pub use error::{Error, Result};
pub use eval::{AttackReport, Condition};
pub use features::{FeatureMatrix, MfccConfig};
pub use room::{Rir, RoomSpec};
pub use xvector::{SpeakerModel, TrainConfig};
