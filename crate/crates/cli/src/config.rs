//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Every key is optional except `format_version` and the `[seeds]` table,
//! whose entries must all be given. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;
use spkadv::attack::UpdateRule;
use spkadv::audio::SynthConfig;
use spkadv::features::WindowKind;
use spkadv::room::RirSetConfig;
use spkadv::xvector::{Architecture, TdnnSpec};
use spkadv::{AttackConfig, MfccConfig, RoomSpec, SpeakerLabel, TrainConfig};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seeds: Seeds,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub mfcc: MfccSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub room: RoomSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub model_init: u64,
    pub training: u64,
    pub rirs: u64,
    pub attack: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub sample_rate: u32,
    pub test_fraction: f64,
    pub peak: f64,
    pub noise_floor: f64,
    pub speaker_spread: f64,
    pub session_variability: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_speakers: d.n_speakers,
            utterances_per_speaker: d.utterances_per_speaker,
            min_duration_s: d.min_duration_s,
            max_duration_s: d.max_duration_s,
            sample_rate: d.sample_rate,
            test_fraction: d.test_fraction,
            peak: d.peak,
            noise_floor: d.noise_floor,
            speaker_spread: d.speaker_spread,
            session_variability: d.session_variability,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccSection {
    pub n_coeffs: usize,
    pub n_mels: usize,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub window: String,
    pub log_floor: f64,
}

impl Default for MfccSection {
    fn default() -> Self {
        let d = MfccConfig::default();
        Self {
            n_coeffs: d.n_coeffs,
            n_mels: d.n_mels,
            frame_len_ms: d.frame_len_ms,
            frame_shift_ms: d.frame_shift_ms,
            fft_size: d.fft_size,
            preemphasis: d.preemphasis,
            window: d.window.as_str().to_string(),
            log_floor: d.log_floor,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `[context, dilation, channels]` per TDNN layer.
    pub tdnn: Vec<[usize; 3]>,
    pub embedding_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = Architecture::default();
        Self {
            tdnn: d
                .tdnn
                .iter()
                .map(|l| [l.context, l.dilation, l.channels])
                .collect(),
            embedding_dim: d.embedding_dim,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSection {
    pub dimensions: [f64; 3],
    pub absorption: f64,
    pub max_order: usize,
    pub speed_of_sound: f64,
    pub n_locations: usize,
    pub n_train: usize,
    pub margin: f64,
    pub min_distance: f64,
    pub normalize: bool,
}

impl Default for RoomSection {
    fn default() -> Self {
        let d = RirSetConfig::default();
        Self {
            dimensions: d.template.dimensions,
            absorption: d.template.absorption,
            max_order: d.template.max_order,
            speed_of_sound: d.template.speed_of_sound,
            n_locations: d.n_locations,
            n_train: d.n_train,
            margin: d.margin,
            min_distance: d.min_distance,
            normalize: d.normalize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RirMode {
    /// Train on the clean signal.
    None,
    /// Train through the training split of the generated RIR set.
    Set,
}

impl RirMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RirMode::None => "none",
            RirMode::Set => "rir",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub epsilon: f64,
    pub kappa: f64,
    pub delta_len_s: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub success_threshold: f64,
    pub skip_successful: bool,
    pub update: String,
    /// Targets to attack; empty means every speaker.
    pub targets: Vec<usize>,
    pub rir_mode: RirMode,
    /// Use at most this many training RIRs (0 = all of them).
    pub max_train_rirs: usize,
    pub individual_max_iters: usize,
    /// Number of test utterances attacked by `attack-individual`.
    pub individual_count: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        let d = AttackConfig::default();
        Self {
            epsilon: d.epsilon,
            kappa: d.kappa,
            delta_len_s: d.delta_len_s,
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            success_threshold: d.success_threshold,
            skip_successful: d.skip_successful,
            update: d.update.as_str().to_string(),
            targets: Vec::new(),
            rir_mode: RirMode::None,
            max_train_rirs: 0,
            individual_max_iters: d.individual_max_iters,
            individual_count: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub utterance_s: f64,
    pub n_utterances: usize,
    pub repeats: usize,
    pub target: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            utterance_s: 5.0,
            n_utterances: 5,
            repeats: 20,
            target: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        // Surface range errors before any stage starts writing.
        cfg.synth()?;
        cfg.mfcc()?.validate()?;
        cfg.architecture()?.validate()?;
        cfg.rir_set()?;
        cfg.attack(SpeakerLabel(0))?.validate()?;
        if cfg.bench.utterance_s.is_nan()
            || cfg.bench.utterance_s <= 0.0
            || cfg.bench.n_utterances == 0
        {
            return Err(CliError::Config(
                "bench.utterance_s and bench.n_utterances must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let c = &self.corpus;
        let cfg = SynthConfig {
            n_speakers: c.n_speakers,
            utterances_per_speaker: c.utterances_per_speaker,
            min_duration_s: c.min_duration_s,
            max_duration_s: c.max_duration_s,
            sample_rate: c.sample_rate,
            test_fraction: c.test_fraction,
            peak: c.peak,
            noise_floor: c.noise_floor,
            speaker_spread: c.speaker_spread,
            session_variability: c.session_variability,
            seed: self.seeds.corpus,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mfcc(&self) -> Result<MfccConfig, CliError> {
        let m = &self.mfcc;
        let window: WindowKind = m
            .window
            .parse()
            .map_err(|e| CliError::Config(format!("mfcc.window: {e}")))?;
        Ok(MfccConfig {
            sample_rate: self.corpus.sample_rate,
            n_coeffs: m.n_coeffs,
            frame_len_ms: m.frame_len_ms,
            frame_shift_ms: m.frame_shift_ms,
            n_mels: m.n_mels,
            fft_size: m.fft_size,
            preemphasis: m.preemphasis,
            window,
            log_floor: m.log_floor,
        })
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        Ok(Architecture {
            tdnn: self
                .model
                .tdnn
                .iter()
                .map(|&[context, dilation, channels]| TdnnSpec {
                    context,
                    dilation,
                    channels,
                })
                .collect(),
            embedding_dim: self.model.embedding_dim,
            n_speakers: self.corpus.n_speakers,
        })
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            learning_rate: self.training.learning_rate,
            seed: self.seeds.training,
            fit_normalization: true,
        }
    }

    pub fn rir_set(&self) -> Result<RirSetConfig, CliError> {
        let r = &self.room;
        let template = RoomSpec {
            dimensions: r.dimensions,
            absorption: r.absorption,
            max_order: r.max_order,
            speed_of_sound: r.speed_of_sound,
            sample_rate: self.corpus.sample_rate,
            ..RoomSpec::default()
        };
        if r.n_train == 0 || r.n_train >= r.n_locations {
            return Err(CliError::Config(format!(
                "room.n_train must lie in 1..{} (got {})",
                r.n_locations, r.n_train
            )));
        }
        Ok(RirSetConfig {
            template,
            n_locations: r.n_locations,
            n_train: r.n_train,
            margin: r.margin,
            min_distance: r.min_distance,
            normalize: r.normalize,
            seed: self.seeds.rirs,
        })
    }

    /// Attack settings for one target; the seed is the base attack seed.
    pub fn attack(&self, target: SpeakerLabel) -> Result<AttackConfig, CliError> {
        let a = &self.attack;
        let update: UpdateRule = a
            .update
            .parse()
            .map_err(|e| CliError::Config(format!("attack.update: {e}")))?;
        Ok(AttackConfig {
            epsilon: a.epsilon,
            kappa: a.kappa,
            delta_len_s: a.delta_len_s,
            target,
            learning_rate: a.learning_rate,
            max_epochs: a.max_epochs,
            success_threshold: a.success_threshold,
            skip_successful: a.skip_successful,
            update,
            individual_max_iters: a.individual_max_iters,
            seed: self.seeds.attack,
        })
    }

    pub fn targets(&self) -> Result<Vec<SpeakerLabel>, CliError> {
        let k = self.corpus.n_speakers;
        if self.attack.targets.is_empty() {
            return Ok((0..k).map(SpeakerLabel).collect());
        }
        self.attack
            .targets
            .iter()
            .map(|&t| {
                if t < k {
                    Ok(SpeakerLabel(t))
                } else {
                    Err(CliError::Config(format!(
                        "attack.targets: {t} is not a speaker (n_speakers = {k})"
                    )))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEEDS: &str = "format_version = 1\n[seeds]\ncorpus = 1\nmodel_init = 2\ntraining = 3\nrirs = 4\nattack = 5\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(SEEDS).unwrap();
        assert_eq!(cfg.seeds.rirs, 4);
        assert_eq!(cfg.architecture().unwrap(), Architecture::default());
        assert_eq!(cfg.mfcc().unwrap(), MfccConfig::default());
        assert_eq!(cfg.targets().unwrap().len(), 10);
        assert_eq!(cfg.synth().unwrap().seed, 1);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::parse(&format!("{SEEDS}[attack]\nepsilonn = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("epsilonn"), "{err}");
        let err = RunConfig::parse(&format!("{SEEDS}[extra]\nx = 1\n")).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn seeds_are_mandatory() {
        let err = RunConfig::parse("format_version = 1\n").unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
        let partial =
            "format_version = 1\n[seeds]\ncorpus = 1\nmodel_init = 2\ntraining = 3\nrirs = 4\n";
        let err = RunConfig::parse(partial).unwrap_err();
        assert!(err.to_string().contains("attack"), "{err}");
    }

    #[test]
    fn shipped_example_parses() {
        let text = include_str!("../../../configs/example.toml");
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.architecture().unwrap(), Architecture::default());
        assert_eq!(cfg.attack.rir_mode, RirMode::None);
    }

    #[test]
    fn version_and_ranges_are_checked() {
        let text = SEEDS.replace("format_version = 1", "format_version = 2");
        assert!(RunConfig::parse(&text).is_err());
        assert!(RunConfig::parse(&format!("{SEEDS}[attack]\nepsilon = -1.0\n")).is_err());
        assert!(RunConfig::parse(&format!("{SEEDS}[attack]\nupdate = \"momentum\"\n")).is_err());
        assert!(
            RunConfig::parse(&format!("{SEEDS}[attack]\ntargets = [12]\n"))
                .unwrap()
                .targets()
                .is_err()
        );
        assert!(RunConfig::parse(&format!("{SEEDS}[room]\nn_train = 500\n")).is_err());
    }
}
