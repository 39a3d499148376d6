//! Waveforms, WAV I/O and the corpus layer.

mod corpus;
mod wav;

pub use corpus::{
    spectral_centroid, synth_corpus, synth_utterance, CorpusManifest, ManifestEntry, Split,
    SynthConfig,
};
pub use wav::{
    decode_wav, encode_wav_f64, encode_wav_pcm16, read_wav, read_wav_at, read_wav_f64, write_wav,
    write_wav_f64,
};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio. Amplitudes are nominally in [-1, 1] but are not clamped in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute amplitude, 0 for an empty waveform.
    pub fn peak(&self) -> f64 {
        peak_abs(&self.samples)
    }
}

pub(crate) fn peak_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Dense speaker index in `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeakerLabel(pub usize);

impl SpeakerLabel {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for SpeakerLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub waveform: Waveform,
    pub speaker: SpeakerLabel,
    pub utterance_id: String,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.waveform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waveform.is_empty()
    }
}
