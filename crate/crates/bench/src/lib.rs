//! Shared fixtures for the benchmarks.

use spkadv::attack::{PerturbationMeta, UpdateRule};
use spkadv::audio::{synth_utterance, SynthConfig};
use spkadv::xvector::Architecture;
use spkadv::{MfccConfig, SpeakerLabel, SpeakerModel, UniversalPerturbation, Waveform};

pub const SAMPLE_RATE: u32 = 16_000;

/// A synthetic utterance of `seconds` length.
pub fn utterance(seconds: f64) -> Waveform {
    synth_utterance(&SynthConfig::default(), 3, 0, seconds)
}

/// An untrained model of the default size; timings do not depend on the weights.
pub fn model() -> SpeakerModel {
    SpeakerModel::new(Architecture::default(), MfccConfig::default(), 0)
        .expect("default architecture is valid")
}

/// A one-second perturbation with a deterministic pattern at `epsilon`.
pub fn perturbation(epsilon: f64) -> UniversalPerturbation {
    let n = SAMPLE_RATE as usize;
    UniversalPerturbation {
        unit: (0..n)
            .map(|i| epsilon * ((i * 7919 % 2001) as f64 / 1000.0 - 1.0))
            .collect(),
        sample_rate: SAMPLE_RATE,
        epsilon,
        target: SpeakerLabel(0),
        meta: PerturbationMeta {
            kappa: 0.0,
            seed: 0,
            epochs_run: 0,
            train_success_rate: 0.0,
            n_train_rirs: 0,
            update: UpdateRule::Adam,
        },
    }
}
