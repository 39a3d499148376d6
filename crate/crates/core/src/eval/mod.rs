//! Attack success rates, noise levels, per-target sweeps and timing.

mod suites;

pub use suites::{gradient_suite, property_suite, CheckResult, SuiteReport};

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::attack::{
    apply_perturbation, train_individual, train_universal, AttackConfig, EpochStat,
    UniversalPerturbation,
};
use crate::audio::{peak_abs, SpeakerLabel, Utterance, Waveform};
use crate::error::{Error, Result};
use crate::room::{convolve, Rir};
use crate::xvector::SpeakerModel;

/// Which channel the attacked audio passes through before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Digital attack: the perturbed waveform is classified directly.
    NoRir,
    TrainRir,
    TestRir,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NoRir => "no-rir",
            Condition::TrainRir => "train-rir",
            Condition::TestRir => "test-rir",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "no-rir" => Ok(Condition::NoRir),
            "train-rir" => Ok(Condition::TrainRir),
            "test-rir" => Ok(Condition::TestRir),
            _ => Err(format!(
                "unknown condition '{s}' (expected no-rir|train-rir|test-rir)"
            )),
        }
    }
}

/// `20·log10(max|δ| / max|x|)`; `−∞` for an all-zero perturbation.
pub fn noise_level_db(delta: &[f64], x: &[f64]) -> Result<f64> {
    let px = peak_abs(x);
    if px == 0.0 {
        return Err(Error::Numeric(
            "noise level of a silent reference is undefined".into(),
        ));
    }
    Ok(20.0 * (peak_abs(delta) / px).log10())
}

/// Mean noise level of a universal perturbation over a set of utterances.
pub fn perturbation_noise_db(p: &UniversalPerturbation, utterances: &[Utterance]) -> Result<f64> {
    if utterances.is_empty() {
        return Err(Error::Empty("no utterances to measure the noise level on"));
    }
    let mut sum = 0.0;
    for u in utterances {
        sum += noise_level_db(&p.delta_for(u.len())?, &u.waveform.samples)?;
    }
    Ok(sum / utterances.len() as f64)
}

/// `(attempts, successes)` over every victim (not of the target speaker)
/// under every channel; no channels means the digital attack.
pub fn attack_outcomes(
    model: &SpeakerModel,
    p: &UniversalPerturbation,
    victims: &[Utterance],
    channels: &[Rir],
) -> Result<(usize, usize)> {
    let victims: Vec<&Utterance> = victims.iter().filter(|u| u.speaker != p.target).collect();
    if victims.is_empty() {
        return Err(Error::Empty(
            "no victim utterances outside the target speaker",
        ));
    }
    let successes = victims
        .par_iter()
        .map(|u| -> Result<usize> {
            let x = apply_perturbation(&u.waveform, p)?;
            if channels.is_empty() {
                return Ok((model.predict(&x)? == p.target) as usize);
            }
            let mut n = 0;
            for r in channels {
                n += (model.predict(&convolve(&x, r)?)? == p.target) as usize;
            }
            Ok(n)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok((victims.len() * channels.len().max(1), successes))
}

/// Fraction of victims classified as the target after the perturbation and
/// the optional channel.
pub fn attack_success_rate(
    model: &SpeakerModel,
    p: &UniversalPerturbation,
    victims: &[Utterance],
    channel: Option<&Rir>,
) -> Result<f64> {
    let (n, k) = attack_outcomes(
        model,
        p,
        victims,
        channel.map(std::slice::from_ref).unwrap_or(&[]),
    )?;
    Ok(k as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub target: SpeakerLabel,
    pub epsilon: f64,
    pub noise_db: f64,
    pub n_attempts: usize,
    pub n_success: usize,
}

impl TargetRow {
    pub fn success_rate(&self) -> f64 {
        self.n_success as f64 / self.n_attempts.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSummary {
    pub utterance_s: f64,
    pub n_utterances: usize,
    /// Median wall time of [`apply_perturbation`] per utterance.
    pub apply_median: Duration,
    /// Median wall time of [`train_individual`] per utterance.
    pub individual_median: Duration,
    pub individual_success_rate: f64,
}

impl TimingSummary {
    pub fn speedup(&self) -> f64 {
        self.individual_median.as_secs_f64() / self.apply_median.as_secs_f64().max(1e-12)
    }
}

impl fmt::Display for TimingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} utterances of {:.1} s: apply {:.3} ms, individual {:.1} ms (success {:.0}%), speedup {:.0}x",
            self.n_utterances,
            self.utterance_s,
            self.apply_median.as_secs_f64() * 1e3,
            self.individual_median.as_secs_f64() * 1e3,
            100.0 * self.individual_success_rate,
            self.speedup()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub condition: Condition,
    pub rows: Vec<TargetRow>,
    pub timing: Option<TimingSummary>,
}

pub const CSV_HEADER: &str = "condition,target,epsilon,noise_db,n_attempts,n_success,success_rate";

impl AttackReport {
    fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(TargetRow::success_rate)
    }

    pub fn min_success(&self) -> f64 {
        self.rates().fold(f64::NAN, f64::min)
    }

    pub fn max_success(&self) -> f64 {
        self.rates().fold(f64::NAN, f64::max)
    }

    /// Mean of the per-target success rates.
    pub fn avg_success(&self) -> f64 {
        self.rates().sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_noise_db(&self) -> f64 {
        self.rows.iter().map(|r| r.noise_db).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{},{},{:.6}",
                self.condition,
                r.target,
                r.epsilon,
                r.noise_db,
                r.n_attempts,
                r.n_success,
                r.success_rate()
            );
        }
        s
    }

    /// Parse rows written by [`Self::to_csv`] (all with one condition).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(Error::Manifest {
                    line: 1,
                    detail: format!("expected header '{CSV_HEADER}'"),
                })
            }
        }
        let mut condition = None;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let bad = |detail: String| Error::Manifest {
                line: i + 1,
                detail,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, found {}", f.len())));
            }
            let c: Condition = f[0].parse().map_err(bad)?;
            if condition.is_some_and(|prev| prev != c) {
                return Err(bad("mixed conditions in one report".into()));
            }
            condition = Some(c);
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|_| bad(format!("bad number '{}'", f[k])))
            };
            let int = |k: usize| {
                f[k].parse::<usize>()
                    .map_err(|_| bad(format!("bad count '{}'", f[k])))
            };
            rows.push(TargetRow {
                target: SpeakerLabel(int(1)?),
                epsilon: num(2)?,
                noise_db: num(3)?,
                n_attempts: int(4)?,
                n_success: int(5)?,
            });
        }
        Ok(Self {
            condition: condition.ok_or(Error::Empty("report has no rows"))?,
            rows,
            timing: None,
        })
    }

    /// One aligned summary line: strength, noise level, min, max, avg.
    pub fn summary_table(reports: &[&AttackReport]) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>12} {:>10} {:>10} {:>10}\n",
            "condition", "epsilon", "noise (dB)", "min", "max", "avg"
        );
        for r in reports {
            let eps = r.rows.first().map_or(f64::NAN, |row| row.epsilon);
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>12.2} {:>9.2}% {:>9.2}% {:>9.2}%",
                r.condition.as_str(),
                eps,
                r.mean_noise_db(),
                100.0 * r.min_success(),
                100.0 * r.max_success(),
                100.0 * r.avg_success()
            );
        }
        s
    }
}

impl fmt::Display for AttackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>12} {:>10} {:>10}",
            "target", "noise (dB)", "success", "rate"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>12.2} {:>4}/{:<5} {:>9.2}%",
                r.target,
                r.noise_db,
                r.n_success,
                r.n_attempts,
                100.0 * r.success_rate()
            )?;
        }
        f.write_str(&AttackReport::summary_table(&[self]))?;
        if let Some(t) = &self.timing {
            writeln!(f, "timing: {t}")?;
        }
        Ok(())
    }
}

/// Evaluate trained perturbations on held-out victims under `channels`.
pub fn evaluate_perturbations(
    model: &SpeakerModel,
    perturbations: &[UniversalPerturbation],
    victims: &[Utterance],
    channels: &[Rir],
    condition: Condition,
) -> Result<AttackReport> {
    let mut rows = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        let own: Vec<Utterance> = victims
            .iter()
            .filter(|u| u.speaker != p.target)
            .cloned()
            .collect();
        let (n_attempts, n_success) = attack_outcomes(model, p, &own, channels)?;
        rows.push(TargetRow {
            target: p.target,
            epsilon: p.epsilon,
            noise_db: perturbation_noise_db(p, &own)?,
            n_attempts,
            n_success,
        });
    }
    Ok(AttackReport {
        condition,
        rows,
        timing: None,
    })
}

/// Seed used for the perturbation of one target in a sweep.
pub fn target_seed(base: u64, target: SpeakerLabel) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add(target.index() as u64)
}

/// Train one perturbation per target (victims are the other speakers'
/// utterances in `train`), through `train_rirs` when non-empty.
pub fn train_targets(
    model: &SpeakerModel,
    train: &[Utterance],
    template: &AttackConfig,
    targets: &[SpeakerLabel],
    train_rirs: &[Rir],
) -> Result<Vec<(UniversalPerturbation, Vec<EpochStat>)>> {
    if targets.is_empty() {
        return Err(Error::Empty("no targets to attack"));
    }
    targets
        .par_iter()
        .map(|&t| {
            let cfg = AttackConfig {
                target: t,
                seed: target_seed(template.seed, t),
                ..template.clone()
            };
            train_universal(model, train, train_rirs, &cfg)
        })
        .collect()
}

/// Train one perturbation per target on `train` victims (through `train_rirs`
/// when non-empty) and evaluate each on `test` victims under `eval_channels`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_targets(
    model: &SpeakerModel,
    train: &[Utterance],
    test: &[Utterance],
    template: &AttackConfig,
    targets: &[SpeakerLabel],
    train_rirs: &[Rir],
    eval_channels: &[Rir],
    condition: Condition,
) -> Result<(AttackReport, Vec<UniversalPerturbation>)> {
    let perturbations: Vec<UniversalPerturbation> =
        train_targets(model, train, template, targets, train_rirs)?
            .into_iter()
            .map(|(p, _)| p)
            .collect();
    let report = evaluate_perturbations(model, &perturbations, test, eval_channels, condition)?;
    Ok((report, perturbations))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Median per-utterance launch time of the universal perturbation versus an
/// individual attack on the same utterances. `repeats` timings of the
/// application are taken per utterance.
pub fn timing_benchmark(
    model: &SpeakerModel,
    p: &UniversalPerturbation,
    utterances: &[Waveform],
    cfg: &AttackConfig,
    repeats: usize,
) -> Result<TimingSummary> {
    if utterances.is_empty() {
        return Err(Error::Empty("no utterances to time"));
    }
    let mut apply = Vec::new();
    for w in utterances {
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let y = apply_perturbation(w, p)?;
            apply.push(start.elapsed());
            std::hint::black_box(y);
        }
    }
    let individual_cfg = AttackConfig {
        target: p.target,
        epsilon: p.epsilon,
        ..cfg.clone()
    };
    let mut individual = Vec::new();
    let mut successes = 0;
    for w in utterances {
        let r = train_individual(model, w, &individual_cfg)?;
        successes += r.success as usize;
        individual.push(r.elapsed);
    }
    let utterance_s =
        utterances.iter().map(Waveform::duration_s).sum::<f64>() / utterances.len() as f64;
    Ok(TimingSummary {
        utterance_s,
        n_utterances: utterances.len(),
        apply_median: median(apply),
        individual_median: median(individual),
        individual_success_rate: successes as f64 / utterances.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{PerturbationMeta, UpdateRule};
    use crate::xvector::tests::tiny_model;

    fn perturbation(unit: Vec<f64>, eps: f64, target: usize) -> UniversalPerturbation {
        UniversalPerturbation {
            unit,
            sample_rate: 16_000,
            epsilon: eps,
            target: SpeakerLabel(target),
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

    #[test]
    fn noise_level_examples() {
        let x = [0.0, 0.4365, -0.2];
        let db = noise_level_db(&[0.05, -0.01], &x).unwrap();
        assert!((db + 18.82).abs() < 0.01, "{db}");
        assert!((noise_level_db(&[0.5], &[-0.5]).unwrap()).abs() < 1e-12);
        assert!((noise_level_db(&[0.05], &[0.5]).unwrap() + 20.0).abs() < 1e-12);
        assert_eq!(noise_level_db(&[0.0], &[0.5]).unwrap(), f64::NEG_INFINITY);
        assert!(noise_level_db(&[0.1], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn success_rate_counts_only_victims() {
        let model = tiny_model(5);
        let mk = |spk: usize, seed: u64| Utterance {
            waveform: Waveform::new(
                (0..3000)
                    .map(|i| ((i as f64) * 0.01 * (seed + 1) as f64).sin() * 0.3)
                    .collect(),
                16_000,
            )
            .unwrap(),
            speaker: SpeakerLabel(spk),
            utterance_id: String::new(),
        };
        let utts: Vec<Utterance> = (0..6).map(|i| mk(i % 3, i as u64)).collect();
        let p = perturbation(vec![0.0; 100], 0.01, 1);
        let (n, k) = attack_outcomes(&model, &p, &utts, &[]).unwrap();
        assert_eq!(n, 4);
        let expected = utts
            .iter()
            .filter(|u| u.speaker.0 != 1 && model.predict(&u.waveform).unwrap().0 == 1)
            .count();
        assert_eq!(k, expected);
        let rirs = vec![Rir::unit(16_000), Rir::unit(16_000)];
        assert_eq!(
            attack_outcomes(&model, &p, &utts, &rirs).unwrap(),
            (8, 2 * expected)
        );
        let rate = attack_success_rate(&model, &p, &utts, Some(&rirs[0])).unwrap();
        assert_eq!(rate, expected as f64 / 4.0);
    }

    fn victims(model_seed: u64) -> (SpeakerModel, Vec<Utterance>) {
        let model = tiny_model(model_seed);
        let utts = (0..9)
            .map(|i| Utterance {
                waveform: Waveform::new(
                    (0..2500)
                        .map(|n| ((n as f64) * 0.003 * (i + 2) as f64).sin() * 0.4)
                        .collect(),
                    16_000,
                )
                .unwrap(),
                speaker: SpeakerLabel(i % 3),
                utterance_id: format!("u{i}"),
            })
            .collect();
        (model, utts)
    }

    #[test]
    fn success_rate_ignores_victim_order() {
        let (model, mut utts) = victims(7);
        let unit: Vec<f64> = (0..160)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0 * 0.05)
            .collect();
        let p = perturbation(unit, 0.05, 2);
        let rirs = [Rir::unit(16_000)];
        let before = attack_outcomes(&model, &p, &utts, &rirs).unwrap();
        utts.reverse();
        utts.swap(0, 4);
        assert_eq!(attack_outcomes(&model, &p, &utts, &rirs).unwrap(), before);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let (model, utts) = victims(3);
        let p = perturbation(vec![0.0; 10], 0.01, 0);
        assert!(attack_outcomes(&model, &p, &[], &[]).is_err());
        assert!(timing_benchmark(&model, &p, &[], &AttackConfig::default(), 3).is_err());
        let w: Vec<Waveform> = utts.iter().take(1).map(|u| u.waveform.clone()).collect();
        let cfg = AttackConfig {
            individual_max_iters: 2,
            ..AttackConfig::default()
        };
        let t = timing_benchmark(&model, &p, &w, &cfg, 3).unwrap();
        assert_eq!(t.n_utterances, 1);
        assert!(t.individual_median > Duration::ZERO);
    }

    #[test]
    fn already_target_utterances_count_as_attempts() {
        let (model, utts) = victims(11);
        let p = perturbation(vec![0.0; 10], 0.01, 1);
        let (n, k) = attack_outcomes(&model, &p, &utts, &[]).unwrap();
        assert_eq!(n, 6);
        let clean_hits = utts
            .iter()
            .filter(|u| u.speaker.0 != 1 && model.predict(&u.waveform).unwrap().0 == 1)
            .count();
        assert_eq!(k, clean_hits);
    }

    proptest::proptest! {
        #[test]
        fn noise_level_is_scale_invariant(
            x in proptest::collection::vec(-1.0f64..1.0, 1..64),
            d in proptest::collection::vec(-0.1f64..0.1, 1..64),
            c in 1e-3f64..1e3,
        ) {
            proptest::prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
            proptest::prop_assume!(d.iter().any(|v| v.abs() > 1e-9));
            let a = noise_level_db(&d, &x).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let ds: Vec<f64> = d.iter().map(|v| v * c).collect();
            let b = noise_level_db(&ds, &xs).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        #[test]
        fn report_average_lies_between_extremes(
            counts in proptest::collection::vec((1usize..50, 0usize..50), 1..12),
        ) {
            let rows = counts
                .iter()
                .enumerate()
                .map(|(t, &(n, k))| TargetRow {
                    target: SpeakerLabel(t),
                    epsilon: 0.01,
                    noise_db: -30.0,
                    n_attempts: n,
                    n_success: k.min(n),
                })
                .collect();
            let r = AttackReport { condition: Condition::NoRir, rows, timing: None };
            proptest::prop_assert!(r.min_success() <= r.avg_success() + 1e-12);
            proptest::prop_assert!(r.avg_success() <= r.max_success() + 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&r.min_success()));
            proptest::prop_assert!(r.max_success() <= 1.0);
        }
    }

    #[test]
    fn report_aggregates_and_csv_roundtrip() {
        let row = |t, k| TargetRow {
            target: SpeakerLabel(t),
            epsilon: 0.05,
            noise_db: -20.0,
            n_attempts: 10,
            n_success: k,
        };
        let r = AttackReport {
            condition: Condition::TestRir,
            rows: vec![row(0, 10), row(1, 5), row(2, 0)],
            timing: None,
        };
        assert_eq!(r.min_success(), 0.0);
        assert_eq!(r.max_success(), 1.0);
        assert!((r.avg_success() - 0.5).abs() < 1e-12);
        let csv = r.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(AttackReport::from_csv(&csv).unwrap(), r);
        assert!(AttackReport::from_csv("nope\n").is_err());
        assert!(r.to_string().contains("test-rir"));
    }
}
