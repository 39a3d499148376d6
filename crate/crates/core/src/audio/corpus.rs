//! Corpus manifests and a deterministic synthetic multi-speaker corpus.
//!
//! Each synthetic speaker is a harmonic source (speaker-specific fundamental and
//! spectral tilt) shaped by a speaker-specific formant envelope. Utterances are
//! sequences of syllables with their own pitch contour and small formant
//! variation, separated by short pauses over a low noise floor.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{read_wav_at, write_wav, SpeakerLabel, Utterance, Waveform};
use crate::error::{Error, Result};

/// Default speaker spread of [`SynthConfig`].
pub const SPREAD_DEFAULT: f64 = 0.4;
/// Default session variability of [`SynthConfig`].
pub const SESSION_DEFAULT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub speaker: SpeakerLabel,
    pub split: Split,
}

/// List of utterance files with speaker labels and split tags.
///
/// On disk: a header line `#sample_rate<TAB><hz>` followed by one
/// `path<TAB>speaker<TAB>split` record per line.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub sample_rate: u32,
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn n_speakers(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.speaker.0 + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries_in(split).count()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    /// Checks that labels are dense and every speaker appears in both splits.
    pub fn validate(&self) -> Result<()> {
        let k = self.n_speakers();
        for s in 0..k {
            for split in [Split::Train, Split::Test] {
                if !self.entries_in(split).any(|e| e.speaker == SpeakerLabel(s)) {
                    return Err(Error::Manifest {
                        line: 0,
                        detail: format!("speaker {s} has no {split} utterances"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load_utterances(&self, split: Split) -> Result<Vec<Utterance>> {
        self.entries_in(split)
            .map(|e| {
                let waveform = read_wav_at(self.resolve(e), self.sample_rate)?;
                Ok(Utterance {
                    waveform,
                    speaker: e.speaker,
                    utterance_id: e.path.to_string_lossy().into_owned(),
                })
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#sample_rate\t{}\n", self.sample_rate);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.path.display(),
                e.speaker.0,
                e.split
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or(Error::Manifest {
            line: 1,
            detail: "empty manifest".into(),
        })?;
        let sample_rate = head
            .strip_prefix("#sample_rate\t")
            .and_then(|v| v.trim().parse::<u32>().ok())
            .filter(|&r| r > 0)
            .ok_or(Error::Manifest {
                line: 1,
                detail: format!("expected '#sample_rate<TAB><hz>' header, got '{head}'"),
            })?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |detail: String| Error::Manifest {
                line: i + 1,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let speaker = fields[1]
                .parse::<usize>()
                .map_err(|e| err(format!("speaker '{}': {e}", fields[1])))?;
            let split = fields[2].parse::<Split>().map_err(err)?;
            entries.push(ManifestEntry {
                path: PathBuf::from(fields[0]),
                speaker: SpeakerLabel(speaker),
                split,
            });
        }
        Ok(Self {
            entries,
            sample_rate,
            root: root.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub sample_rate: u32,
    /// Fraction of each speaker's utterances held out for test (0.2 gives 4:1).
    pub test_fraction: f64,
    /// Peak amplitude every utterance is normalized to before the noise floor.
    pub peak: f64,
    /// Standard deviation of the additive white noise floor.
    pub noise_floor: f64,
    /// How far apart speakers are, in (0, 1]: at 1 fundamentals span 85–255 Hz
    /// and vocal-tract scales 0.75–1.4; smaller values shrink both log-ranges
    /// around their geometric centres, making speakers more confusable.
    pub speaker_spread: f64,
    /// Scale of per-utterance (session) variation: at 1, each utterance
    /// shifts its fundamental by up to ±6 %, its vocal-tract scale by ±4 %,
    /// its spectral tilt by ±0.2 and its noise floor by up to 3×.
    pub session_variability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utterances_per_speaker: 40,
            min_duration_s: 1.0,
            max_duration_s: 1.5,
            sample_rate: super::DEFAULT_SAMPLE_RATE,
            test_fraction: 0.2,
            peak: 0.5,
            noise_floor: 0.002,
            speaker_spread: SPREAD_DEFAULT,
            session_variability: SESSION_DEFAULT,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!(
                "n_speakers must be at least 2, got {}",
                self.n_speakers
            )));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::Config(
                "utterances_per_speaker must be at least 2".into(),
            ));
        }
        if !(self.min_duration_s > 0.0 && self.max_duration_s >= self.min_duration_s) {
            return Err(Error::Config(
                "duration range must satisfy 0 < min <= max".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) || self.noise_floor < 0.0 {
            return Err(Error::Config(
                "peak must lie in (0, 1], noise_floor >= 0".into(),
            ));
        }
        if !(self.speaker_spread > 0.0 && self.speaker_spread <= 1.0) {
            return Err(Error::Config("speaker_spread must lie in (0, 1]".into()));
        }
        if !(0.0..=3.0).contains(&self.session_variability) {
            return Err(Error::Config(
                "session_variability must lie in [0, 3]".into(),
            ));
        }
        if self.sample_rate < 8_000 {
            return Err(Error::Config("sample_rate must be at least 8000 Hz".into()));
        }
        Ok(())
    }

    /// Test utterances per speaker, rounded to nearest and kept within 1..n-1.
    pub fn n_test_per_speaker(&self) -> usize {
        let n = self.utterances_per_speaker;
        ((n as f64 * self.test_fraction).round() as usize).clamp(1, n - 1)
    }
}

/// Timbre template of one synthetic speaker.
#[derive(Debug, Clone)]
struct Voice {
    f0: f64,
    tilt: f64,
    formants: [(f64, f64, f64); 4], // (centre Hz, bandwidth Hz, gain)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn voice(cfg: &SynthConfig, speaker: usize) -> Voice {
    let mut rng = rng_for(cfg.seed, 1 + speaker as u64);
    let k = cfg.n_speakers as f64;
    // Position in [-1/2, 1/2], scaled by the spread.
    let slot = cfg.speaker_spread * (speaker as f64 / (k - 1.0).max(1.0) - 0.5);
    // Fundamentals are geometric in the label.
    let f0 = (85.0 * 255.0_f64).sqrt() * 3.0_f64.powf(slot) * rng.random_range(0.97..1.03);
    // Vocal-tract scale also grows with the label, so the spectral centroid
    // orders speakers by construction.
    let scale = (0.75_f64 * 1.4).sqrt() * (1.4_f64 / 0.75).powf(slot);
    let mut jitter = |lo: f64, hi: f64| scale * rng.random_range(lo..hi);
    let formants = [
        (jitter(480.0, 560.0), jitter(70.0, 110.0), 1.0),
        (jitter(1350.0, 1650.0), jitter(90.0, 150.0), 0.7),
        (jitter(2400.0, 2700.0), jitter(130.0, 200.0), 0.4),
        (jitter(3400.0, 3800.0), jitter(200.0, 300.0), 0.15),
    ];
    Voice {
        f0,
        tilt: rng.random_range(0.9..1.1),
        formants,
    }
}

fn envelope(formants: &[(f64, f64, f64); 4], tilt: f64, f: f64) -> f64 {
    let resonances: f64 = formants
        .iter()
        .map(|&(c, b, g)| {
            let z = (f - c) / b;
            g / (1.0 + z * z)
        })
        .sum();
    (resonances + 0.01) * (100.0 / f.max(50.0)).powf(tilt)
}

/// Synthesize one utterance of the given speaker, a pure function of
/// `(cfg.seed, speaker, index, duration_s)`.
pub fn synth_utterance(
    cfg: &SynthConfig,
    speaker: usize,
    index: usize,
    duration_s: f64,
) -> Waveform {
    let fs = cfg.sample_rate as f64;
    let mut v = voice(cfg, speaker);
    let mut rng = rng_for(
        cfg.seed,
        0x1_0000 + (speaker as u64) * 0x1_0000 + index as u64,
    );
    let sv = cfg.session_variability;
    v.f0 *= 1.0 + sv * rng.random_range(-0.06..0.06);
    let tract = 1.0 + sv * rng.random_range(-0.04..0.04);
    for f in v.formants.iter_mut() {
        f.0 *= tract;
        f.1 *= tract;
    }
    v.tilt += sv * rng.random_range(-0.2..0.2);
    let noise_floor = cfg.noise_floor * (sv * rng.random_range(0.0..3.0_f64.ln())).exp();
    let n = ((duration_s * fs).round() as usize).max(1);
    let mut out = vec![0.0; n];
    let nyquist_guard = 0.475 * fs;
    let mut pos = (rng.random_range(0.02..0.08) * fs) as usize;
    let declination = rng.random_range(-0.15..0.05);
    while pos < n {
        let syl_len = ((rng.random_range(0.14..0.30) * fs) as usize).min(n - pos);
        let mut formants = v.formants;
        for f in formants.iter_mut() {
            f.0 *= 1.0 + rng.random_range(-0.08..0.08);
        }
        let base =
            v.f0 * (1.0 + declination * pos as f64 / n as f64) * rng.random_range(0.92..1.08);
        let slope = rng.random_range(-0.12..0.12);
        // Syllable stress spans about 20 dB, giving a speech-like crest factor.
        let stress = rng.random_range(0.1_f64.ln()..0.0).exp();
        let vibrato_hz = rng.random_range(3.0..6.0);
        let mut phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut amps: Vec<f64> = Vec::new();
        for i in 0..syl_len {
            let t = i as f64 / syl_len as f64;
            let f0 = base
                * (1.0
                    + slope * (t - 0.5)
                    + 0.01 * (std::f64::consts::TAU * vibrato_hz * i as f64 / fs).sin());
            phase = (phase + std::f64::consts::TAU * f0 / fs) % std::f64::consts::TAU;
            let n_harm = (nyquist_guard / f0) as usize;
            if i % 32 == 0 || amps.len() != n_harm {
                amps = (1..=n_harm)
                    .map(|h| envelope(&formants, v.tilt, h as f64 * f0))
                    .collect();
            }
            // sin(h·phase) by the Chebyshev recurrence.
            let (s1, c1) = phase.sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = 0.0;
            for a in &amps {
                acc += a * cur;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
            }
            let gate = (std::f64::consts::PI * t).sin().powf(0.6);
            out[pos + i] = stress * acc * gate;
        }
        pos += syl_len + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    let peak = out.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let gain = if peak > 0.0 { cfg.peak / peak } else { 0.0 };
    let noise = Normal::new(0.0, noise_floor.max(f64::MIN_POSITIVE)).expect("finite std");
    for x in out.iter_mut() {
        *x = *x * gain
            + if noise_floor > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
    }
    Waveform {
        samples: out,
        sample_rate: cfg.sample_rate,
    }
}

/// Duration of utterance `index` of `speaker`, uniform in the configured range.
fn duration_of(cfg: &SynthConfig, speaker: usize, index: usize) -> f64 {
    let mut rng = rng_for(cfg.seed ^ 0xD0D0, (speaker * 100_003 + index) as u64);
    if cfg.max_duration_s > cfg.min_duration_s {
        rng.random_range(cfg.min_duration_s..cfg.max_duration_s)
    } else {
        cfg.min_duration_s
    }
}

/// Generate the corpus into `out_dir` (WAVs under `wav/` plus `manifest.tsv`).
pub fn synth_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let n_test = cfg.n_test_per_speaker();
    let n_train = cfg.utterances_per_speaker - n_test;
    let mut entries = Vec::with_capacity(cfg.n_speakers * cfg.utterances_per_speaker);
    for speaker in 0..cfg.n_speakers {
        for index in 0..cfg.utterances_per_speaker {
            let w = synth_utterance(cfg, speaker, index, duration_of(cfg, speaker, index));
            let rel = PathBuf::from("wav").join(format!("spk{speaker:02}_u{index:03}.wav"));
            write_wav(out_dir.join(&rel), &w)?;
            entries.push(ManifestEntry {
                path: rel,
                speaker: SpeakerLabel(speaker),
                split: if index < n_train {
                    Split::Train
                } else {
                    Split::Test
                },
            });
        }
    }
    let manifest = CorpusManifest {
        entries,
        sample_rate: cfg.sample_rate,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Power-weighted mean frequency (Hz) of the whole waveform.
pub fn spectral_centroid(w: &Waveform) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = w.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = w
        .samples
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().take(n / 2 + 1).enumerate() {
        let p = c.norm_sqr();
        num += p * k as f64 * w.sample_rate as f64 / n as f64;
        den += p;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_speakers: 3,
            utterances_per_speaker: 5,
            min_duration_s: 0.3,
            max_duration_s: 0.5,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rejects_single_speaker() {
        let cfg = SynthConfig {
            n_speakers: 1,
            ..small()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            synth_corpus(&cfg, dir.path()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_split_counts() {
        let cfg = SynthConfig::default();
        let per = cfg.n_test_per_speaker();
        assert_eq!(per, 8);
        assert_eq!(cfg.n_speakers * (cfg.utterances_per_speaker - per), 320);
        assert_eq!(cfg.n_speakers * per, 80);
    }

    #[test]
    fn corpus_is_deterministic_and_reloads() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&small(), a.path()).unwrap();
        synth_corpus(&small(), b.path()).unwrap();
        for e in &ma.entries {
            assert_eq!(
                fs::read(a.path().join(&e.path)).unwrap(),
                fs::read(b.path().join(&e.path)).unwrap()
            );
        }
        assert_eq!(
            fs::read(a.path().join("manifest.tsv")).unwrap(),
            fs::read(b.path().join("manifest.tsv")).unwrap()
        );
        let loaded = CorpusManifest::load(a.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded.entries, ma.entries);
        assert_eq!(loaded.count(Split::Train), 12);
        assert_eq!(loaded.count(Split::Test), 3);
        loaded.validate().unwrap();
        let utts = loaded.load_utterances(Split::Test).unwrap();
        assert!(utts
            .iter()
            .all(|u| u.waveform.peak() > 0.4 && u.waveform.peak() <= 0.52));
    }

    #[test]
    fn manifest_parse_errors_carry_line() {
        let text = "#sample_rate\t16000\na.wav\t0\ttrain\nb.wav\tx\ttest\n";
        match CorpusManifest::parse(text, ".") {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(CorpusManifest::parse("a\t0\ttrain\n", ".").is_err());
        assert!(CorpusManifest::parse("#sample_rate\t16000\na\t0\tdev\n", ".").is_err());
    }

    #[test]
    fn speakers_differ_in_spectral_centroid() {
        let cfg = SynthConfig {
            n_speakers: 4,
            seed: 5,
            noise_floor: 0.0,
            speaker_spread: 1.0,
            ..SynthConfig::default()
        };
        let centroids = |s: usize| -> Vec<f64> {
            (0..24)
                .map(|i| spectral_centroid(&synth_utterance(&cfg, s, i, 0.6)))
                .collect()
        };
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let all: Vec<(f64, f64)> = (0..4).map(|s| stats(&centroids(s))).collect();
        // Welch t statistic between every pair of speakers.
        for i in 0..4 {
            for j in i + 1..4 {
                let t = (all[i].0 - all[j].0).abs() / (all[i].1 + all[j].1).sqrt();
                assert!(t > 4.0, "speakers {i},{j}: t = {t:.2}, stats {all:?}");
            }
        }
    }
}
