//! Universal targeted perturbations and the per-utterance baseline.
//!
//! A universal perturbation is a short base signal `Δδ` of `L` samples. For an
//! utterance of `n` samples it is tiled, cropped to `n` and clipped to
//! `[−ε, ε]` before being added. Training minimizes the margin loss
//! `max(max_{i≠t} P_i − P_t, −κ)` over victims of every other speaker,
//! optionally after convolving the perturbed signal with a randomly chosen
//! room impulse response.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav_f64, write_wav_f64, SpeakerLabel, Utterance, Waveform};
use crate::error::{Error, Result};
use crate::netcore::{AdamConfig, AdamState};
use crate::room::{convolve_samples, convolve_samples_backward, Rir};
use crate::xvector::{argmax, SpeakerModel};

pub const PERTURBATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// Adam on the base signal.
    Adam,
    /// Fixed-size signed gradient steps.
    Sign,
}

impl UpdateRule {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateRule::Adam => "adam",
            UpdateRule::Sign => "sign",
        }
    }
}

impl FromStr for UpdateRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adam" => Ok(UpdateRule::Adam),
            "sign" => Ok(UpdateRule::Sign),
            _ => Err(format!("unknown update rule '{s}' (expected adam|sign)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L∞ bound on the applied perturbation.
    pub epsilon: f64,
    /// Confidence margin: the loss bottoms out at `−κ`.
    pub kappa: f64,
    /// Length of the base signal in seconds.
    pub delta_len_s: f64,
    pub target: SpeakerLabel,
    /// Adam learning rate, or step size for sign updates, in units of ε.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once this fraction of an epoch's victims were already fooled.
    pub success_threshold: f64,
    /// Skip the update entirely for victims whose loss is already at its
    /// floor. When off, such victims still advance the optimizer with a zero
    /// gradient (which moves Adam through its momentum).
    pub skip_successful: bool,
    pub update: UpdateRule,
    /// Iteration budget for [`train_individual`].
    pub individual_max_iters: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            kappa: 0.0,
            delta_len_s: 1.0,
            target: SpeakerLabel(0),
            learning_rate: 0.02,
            max_epochs: 50,
            success_threshold: 0.95,
            skip_successful: true,
            update: UpdateRule::Adam,
            individual_max_iters: 500,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if !(self.delta_len_s > 0.0) {
            return bad(format!(
                "delta_len_s must be positive, got {}",
                self.delta_len_s
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return bad(format!(
                "success_threshold must lie in [0, 1], got {}",
                self.success_threshold
            ));
        }
        Ok(())
    }

    pub fn delta_len(&self, sample_rate: u32) -> usize {
        ((self.delta_len_s * sample_rate as f64).round() as usize).max(1)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate * self.epsilon,
            ..AdamConfig::default()
        }
    }
}

/// Tile `unit` periodically and crop to `n` samples.
pub fn build_delta(unit: &[f64], n: usize) -> Result<Vec<f64>> {
    if unit.is_empty() {
        return Err(Error::Empty("perturbation base signal"));
    }
    Ok(unit.iter().copied().cycle().take(n).collect())
}

/// Adjoint of [`build_delta`]: sum each period back onto the base signal.
pub fn fold_delta_gradient(grad: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in grad.chunks(len) {
        crate::netcore::axpy(1.0, chunk, &mut out[..chunk.len()]);
    }
    out
}

pub fn clip_eps(v: &[f64], epsilon: f64) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-epsilon, epsilon)).collect()
}

/// `x + clip(tile(unit))` in a single pass.
pub fn apply_delta(x: &[f64], unit: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if unit.is_empty() {
        return Err(Error::Empty("perturbation base signal"));
    }
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks(unit.len()) {
        out.extend(
            chunk
                .iter()
                .zip(unit)
                .map(|(a, d)| a + d.clamp(-epsilon, epsilon)),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwLoss {
    pub value: f64,
    /// Gradient with respect to the probabilities.
    pub grad: Vec<f64>,
    /// Most probable non-target class.
    pub runner_up: usize,
}

impl CwLoss {
    /// The loss has reached its floor `−κ`, so the gradient vanishes.
    pub fn at_floor(&self) -> bool {
        self.grad.iter().all(|&g| g == 0.0)
    }
}

/// `max(max_{i≠t} P_i − P_t, −κ)` and its gradient w.r.t. `P`.
pub fn cw_loss(probs: &[f64], target: SpeakerLabel, kappa: f64) -> Result<CwLoss> {
    let t = target.index();
    if probs.len() < 2 || t >= probs.len() {
        return Err(Error::Config(format!(
            "target {t} is not one of {} enrolled speakers",
            probs.len()
        )));
    }
    let runner_up = (0..probs.len())
        .filter(|&i| i != t)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if probs[b] >= probs[i] => Some(b),
            _ => Some(i),
        })
        .expect("at least two classes");
    let margin = probs[runner_up] - probs[t];
    let mut grad = vec![0.0; probs.len()];
    if margin > -kappa {
        grad[runner_up] = 1.0;
        grad[t] = -1.0;
    }
    Ok(CwLoss {
        value: margin.max(-kappa),
        grad,
        runner_up,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMeta {
    pub kappa: f64,
    pub seed: u64,
    pub epochs_run: usize,
    /// Fraction of victims already fooled during the last epoch.
    pub train_success_rate: f64,
    /// Number of impulse responses sampled during training (0 = direct).
    pub n_train_rirs: usize,
    pub update: UpdateRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniversalPerturbation {
    /// The base signal `Δδ`, already within `[−ε, ε]`.
    pub unit: Vec<f64>,
    pub sample_rate: u32,
    pub epsilon: f64,
    pub target: SpeakerLabel,
    pub meta: PerturbationMeta,
}

impl UniversalPerturbation {
    /// The clipped perturbation for an `n`-sample utterance.
    pub fn delta_for(&self, n: usize) -> Result<Vec<f64>> {
        Ok(clip_eps(&build_delta(&self.unit, n)?, self.epsilon))
    }

    /// Paths of the signal and metadata files for an output stem.
    pub fn paths(stem: impl AsRef<Path>) -> (PathBuf, PathBuf) {
        let stem = stem.as_ref();
        (stem.with_extension("wav"), stem.with_extension("meta.txt"))
    }

    /// Write `<stem>.wav` (64-bit float, bit exact) and `<stem>.meta.txt`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let (wav, meta) = Self::paths(stem);
        if let Some(dir) = wav.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_wav_f64(&wav, &Waveform::new(self.unit.clone(), self.sample_rate)?)?;
        let m = &self.meta;
        let text = format!(
            "format_version = {PERTURBATION_FORMAT_VERSION}\nepsilon = {:?}\ntarget = {}\nkappa = {:?}\nseed = {}\nepochs_run = {}\ntrain_success_rate = {:?}\nn_train_rirs = {}\nupdate = {}\n",
            self.epsilon,
            self.target,
            m.kappa,
            m.seed,
            m.epochs_run,
            m.train_success_rate,
            m.n_train_rirs,
            m.update.as_str()
        );
        fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let (wav, meta_path) = Self::paths(stem);
        let w = read_wav_f64(&wav)?;
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut fields = std::collections::HashMap::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let (k, v) = line.split_once('=').ok_or(Error::Manifest {
                line: i + 1,
                detail: format!("expected key = value in {}", meta_path.display()),
            })?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: FromStr>(f: &std::collections::HashMap<String, String>, k: &str) -> Result<T> {
            f.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| {
                Error::Config(format!("perturbation metadata: missing or invalid '{k}'"))
            })
        }
        let version: u32 = get(&fields, "format_version")?;
        if version != PERTURBATION_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: PERTURBATION_FORMAT_VERSION,
            });
        }
        let epsilon: f64 = get(&fields, "epsilon")?;
        if w.samples.iter().any(|d| d.abs() > epsilon) {
            return Err(Error::Config(
                "stored perturbation exceeds its epsilon".into(),
            ));
        }
        Ok(Self {
            unit: w.samples,
            sample_rate: w.sample_rate,
            epsilon,
            target: SpeakerLabel(get(&fields, "target")?),
            meta: PerturbationMeta {
                kappa: get(&fields, "kappa")?,
                seed: get(&fields, "seed")?,
                epochs_run: get(&fields, "epochs_run")?,
                train_success_rate: get(&fields, "train_success_rate")?,
                n_train_rirs: get(&fields, "n_train_rirs")?,
                update: get::<String>(&fields, "update")?
                    .parse()
                    .map_err(Error::Config)?,
            },
        })
    }
}

/// Add a universal perturbation to a waveform.
pub fn apply_perturbation(x: &Waveform, p: &UniversalPerturbation) -> Result<Waveform> {
    if x.sample_rate != p.sample_rate {
        return Err(Error::SampleRate {
            left: x.sample_rate,
            right: p.sample_rate,
        });
    }
    Ok(Waveform {
        samples: apply_delta(&x.samples, &p.unit, p.epsilon)?,
        sample_rate: x.sample_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    /// Fraction of victims already fooled when visited this epoch.
    pub success_rate: f64,
    pub mean_loss: f64,
    pub updates: usize,
}

/// Outcome of one forward/backward pass on a perturbed utterance.
struct StepResult {
    fooled: bool,
    loss: CwLoss,
    /// Gradient of the loss w.r.t. the perturbed (pre-channel) signal, or
    /// `None` when the loss is at its floor.
    grad: Option<Vec<f64>>,
}

fn attack_step(
    model: &SpeakerModel,
    perturbed: Vec<f64>,
    rir: Option<&Rir>,
    target: SpeakerLabel,
    kappa: f64,
) -> Result<StepResult> {
    let received = match rir {
        Some(r) => convolve_samples(&perturbed, &r.taps),
        None => perturbed,
    };
    let trace = model.forward(&received)?;
    let fooled = argmax(&trace.probs) == target.index();
    let loss = cw_loss(&trace.probs, target, kappa)?;
    if !loss.value.is_finite() {
        return Err(Error::Numeric(format!("attack loss is {}", loss.value)));
    }
    let grad = if loss.at_floor() {
        None
    } else {
        let g = model.input_gradient(&trace, &loss.grad)?;
        Some(match rir {
            Some(r) => convolve_samples_backward(&g, &r.taps),
            None => g,
        })
    };
    Ok(StepResult { fooled, loss, grad })
}

fn check_inputs(model: &SpeakerModel, cfg: &AttackConfig, rirs: &[Rir]) -> Result<u32> {
    cfg.validate()?;
    let rate = model.mfcc_config.sample_rate;
    if cfg.target.index() >= model.n_speakers() {
        return Err(Error::Config(format!(
            "target {} is not one of {} enrolled speakers",
            cfg.target,
            model.n_speakers()
        )));
    }
    if let Some(r) = rirs
        .iter()
        .find(|r| r.sample_rate != rate || r.taps.is_empty())
    {
        return Err(Error::SampleRate {
            left: rate,
            right: r.sample_rate,
        });
    }
    Ok(rate)
}

struct DeltaOptimizer {
    rule: UpdateRule,
    adam: AdamState,
    step: f64,
    epsilon: f64,
}

impl DeltaOptimizer {
    fn new(cfg: &AttackConfig) -> Self {
        Self {
            rule: cfg.update,
            adam: AdamState::new(cfg.adam()),
            step: cfg.learning_rate * cfg.epsilon,
            epsilon: cfg.epsilon,
        }
    }

    /// One descent step followed by projection onto `[−ε, ε]`.
    fn step(&mut self, delta: &mut [f64], grad: &[f64]) {
        match self.rule {
            UpdateRule::Adam => self.adam.step_slice(delta, grad),
            UpdateRule::Sign => {
                for (d, g) in delta.iter_mut().zip(grad) {
                    if *g != 0.0 {
                        *d -= self.step * g.signum();
                    }
                }
            }
        }
        for d in delta.iter_mut() {
            *d = d.clamp(-self.epsilon, self.epsilon);
        }
    }
}

/// Train a universal perturbation that steers every victim towards
/// `cfg.target`. Victims of the target speaker are ignored. When `rirs` is
/// non-empty each update passes through one of them, drawn at random.
pub fn train_universal(
    model: &SpeakerModel,
    victims: &[Utterance],
    rirs: &[Rir],
    cfg: &AttackConfig,
) -> Result<(UniversalPerturbation, Vec<EpochStat>)> {
    let rate = check_inputs(model, cfg, rirs)?;
    let victims: Vec<&Utterance> = victims.iter().filter(|u| u.speaker != cfg.target).collect();
    if victims.is_empty() {
        return Err(Error::Empty(
            "no victim utterances outside the target speaker",
        ));
    }
    if let Some(u) = victims.iter().find(|u| u.waveform.sample_rate != rate) {
        return Err(Error::SampleRate {
            left: u.waveform.sample_rate,
            right: rate,
        });
    }
    let len = cfg.delta_len(rate);
    let eps = cfg.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Channel draws use their own stream so that the shuffle order does not
    // depend on whether impulse responses are supplied.
    let mut channel_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    channel_rng.set_stream(1);
    let mut delta: Vec<f64> = (0..len)
        .map(|_| rng.random_range(-eps / 10.0..=eps / 10.0))
        .collect();
    let mut opt = DeltaOptimizer::new(cfg);
    let mut order: Vec<usize> = (0..victims.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut fooled, mut loss_sum, mut updates) = (0usize, 0.0, 0usize);
        for &i in &order {
            let x = &victims[i].waveform.samples;
            let rir = (!rirs.is_empty()).then(|| &rirs[channel_rng.random_range(0..rirs.len())]);
            let raw = build_delta(&delta, x.len())?;
            let perturbed: Vec<f64> = x
                .iter()
                .zip(&raw)
                .map(|(a, d)| a + d.clamp(-eps, eps))
                .collect();
            let step = attack_step(model, perturbed, rir, cfg.target, cfg.kappa)?;
            fooled += step.fooled as usize;
            loss_sum += step.loss.value;
            let mut g = match step.grad {
                Some(g) => g,
                None if cfg.skip_successful => continue,
                None => vec![0.0; x.len()],
            };
            // Clip mask: the clamp passes gradient only where |δ| <= ε.
            for (gi, d) in g.iter_mut().zip(&raw) {
                if d.abs() > eps {
                    *gi = 0.0;
                }
            }
            opt.step(&mut delta, &fold_delta_gradient(&g, len));
            updates += 1;
        }
        let stat = EpochStat {
            epoch,
            success_rate: fooled as f64 / victims.len() as f64,
            mean_loss: loss_sum / victims.len() as f64,
            updates,
        };
        history.push(stat);
        if stat.success_rate >= cfg.success_threshold {
            break;
        }
    }
    let last = history.last().copied();
    Ok((
        UniversalPerturbation {
            unit: clip_eps(&delta, eps),
            sample_rate: rate,
            epsilon: eps,
            target: cfg.target,
            meta: PerturbationMeta {
                kappa: cfg.kappa,
                seed: cfg.seed,
                epochs_run: last.map_or(0, |s| s.epoch),
                train_success_rate: last.map_or(0.0, |s| s.success_rate),
                n_train_rirs: rirs.len(),
                update: cfg.update,
            },
        },
        history,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualResult {
    /// Full-length perturbation within `[−ε, ε]`.
    pub delta: Vec<f64>,
    pub success: bool,
    pub iterations: usize,
    pub elapsed: Duration,
}

impl fmt::Display for IndividualResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "success={} iterations={} elapsed={:.3}s",
            self.success,
            self.iterations,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Optimize a perturbation for one utterance until it is classified as the
/// target (with margin `κ`) or the iteration budget runs out.
pub fn train_individual(
    model: &SpeakerModel,
    x: &Waveform,
    cfg: &AttackConfig,
) -> Result<IndividualResult> {
    let start = Instant::now();
    let rate = check_inputs(model, cfg, &[])?;
    if x.sample_rate != rate {
        return Err(Error::SampleRate {
            left: x.sample_rate,
            right: rate,
        });
    }
    let mut delta = vec![0.0; x.len()];
    let mut opt = DeltaOptimizer::new(cfg);
    for iteration in 0..=cfg.individual_max_iters {
        let perturbed: Vec<f64> = x.samples.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let step = attack_step(model, perturbed, None, cfg.target, cfg.kappa)?;
        let done = step.fooled && step.loss.at_floor();
        if done || iteration == cfg.individual_max_iters {
            return Ok(IndividualResult {
                delta,
                success: step.fooled,
                iterations: iteration,
                elapsed: start.elapsed(),
            });
        }
        if let Some(g) = step.grad {
            opt.step(&mut delta, &g);
        }
    }
    unreachable!("loop returns on its last iteration")
}
