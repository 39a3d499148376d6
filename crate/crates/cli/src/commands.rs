use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use spkadv::attack::{train_individual, PerturbationMeta};
use spkadv::audio::{synth_utterance, write_wav_f64, CorpusManifest, Split};
use spkadv::eval::{self, evaluate_perturbations, timing_benchmark, train_targets, Condition};
use spkadv::room::{sample_rir_set, RirSet};
use spkadv::xvector::{load_checkpoint, save_checkpoint, train};
use spkadv::{Rir, SpeakerLabel, SpeakerModel, UniversalPerturbation, Utterance, Waveform};

use crate::config::{RirMode, RunConfig};
use crate::error::CliError;
use crate::{Channel, Suite};

type CmdResult = Result<String, CliError>;

fn corpus_dir(out: &Path) -> PathBuf {
    out.join("corpus")
}

fn model_path(out: &Path) -> PathBuf {
    out.join("model").join("model.ckpt")
}

fn rir_dir(out: &Path) -> PathBuf {
    out.join("rirs")
}

fn attack_dir(out: &Path, mode: RirMode) -> PathBuf {
    out.join(format!("attack-{}", mode.as_str()))
}

fn perturbation_stem(dir: &Path, target: SpeakerLabel) -> PathBuf {
    dir.join(format!("perturbation_t{:02}", target.index()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(spkadv::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_manifest(out: &Path) -> Result<CorpusManifest, CliError> {
    let m = CorpusManifest::load(corpus_dir(out).join("manifest.tsv"))?;
    m.validate()?;
    Ok(m)
}

fn load_model(cfg: &RunConfig, out: &Path) -> Result<SpeakerModel, CliError> {
    let model = load_checkpoint(model_path(out))?;
    if model.n_speakers() != cfg.corpus.n_speakers {
        return Err(CliError::Config(format!(
            "model has {} speakers but corpus.n_speakers = {}",
            model.n_speakers(),
            cfg.corpus.n_speakers
        )));
    }
    Ok(model)
}

fn load_rirs(out: &Path, split: Split, limit: usize) -> Result<Vec<Rir>, CliError> {
    let set = RirSet::load(rir_dir(out))?;
    let mut rirs: Vec<Rir> = set.subset(split).into_iter().cloned().collect();
    if limit > 0 {
        rirs.truncate(limit);
    }
    if rirs.is_empty() {
        return Err(spkadv::Error::Empty("RIR set has no responses in the requested split").into());
    }
    Ok(rirs)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub fn run_suite(suite: Suite) -> CmdResult {
    let report = match suite {
        Suite::Properties => eval::property_suite(0),
        Suite::Gradients => eval::gradient_suite(0),
    };
    let passed = report.checks.iter().filter(|c| c.passed).count();
    let summary = format!(
        "{}: {passed}/{} checks passed in {:.2} s",
        report.name,
        report.checks.len(),
        report.elapsed.as_secs_f64()
    );
    if report.passed() {
        Ok(summary)
    } else {
        eprintln!("{report}");
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Check(format!(
            "{summary}; failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn synth_corpus(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = corpus_dir(out);
    let manifest = spkadv::audio::synth_corpus(&cfg.synth()?, &dir)?;
    Ok(format!(
        "synth-corpus: {} speakers, {} train / {} test utterances -> {}",
        manifest.n_speakers(),
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        dir.display()
    ))
}

pub fn train_model(cfg: &RunConfig, out: &Path) -> CmdResult {
    let manifest = load_manifest(out)?;
    if manifest.n_speakers() != cfg.corpus.n_speakers {
        return Err(CliError::Config(format!(
            "corpus has {} speakers but corpus.n_speakers = {}",
            manifest.n_speakers(),
            cfg.corpus.n_speakers
        )));
    }
    let mut model = SpeakerModel::new(cfg.architecture()?, cfg.mfcc()?, cfg.seeds.model_init)?;
    let log = train(&mut model, &manifest, &cfg.training())?;
    let path = model_path(out);
    create_dir(path.parent().expect("model path has a parent"))?;
    save_checkpoint(&model, &path)?;
    write(&path.with_file_name("training_log.csv"), &log.to_csv())?;
    Ok(format!(
        "train-model: {} epochs, test accuracy {} -> {}",
        log.epochs.len(),
        pct(log.final_accuracy().unwrap_or(f64::NAN)),
        path.display()
    ))
}

pub fn gen_rirs(cfg: &RunConfig, out: &Path) -> CmdResult {
    let set = sample_rir_set(&cfg.rir_set()?)?;
    let dir = rir_dir(out);
    set.save(&dir)?;
    let lens: Vec<usize> = set.rirs.iter().map(|(r, _)| r.taps.len()).collect();
    Ok(format!(
        "gen-rirs: {} train / {} test responses, {}..{} taps -> {}",
        set.subset(Split::Train).len(),
        set.subset(Split::Test).len(),
        lens.iter().min().copied().unwrap_or(0),
        lens.iter().max().copied().unwrap_or(0),
        dir.display()
    ))
}

pub fn attack_universal(cfg: &RunConfig, out: &Path) -> CmdResult {
    let model = load_model(cfg, out)?;
    let train_utts = load_manifest(out)?.load_utterances(Split::Train)?;
    let mode = cfg.attack.rir_mode;
    let rirs = match mode {
        RirMode::None => Vec::new(),
        RirMode::Set => load_rirs(out, Split::Train, cfg.attack.max_train_rirs)?,
    };
    let targets = cfg.targets()?;
    let template = cfg.attack(targets[0])?;
    let trained = train_targets(&model, &train_utts, &template, &targets, &rirs)?;
    let dir = attack_dir(out, mode);
    create_dir(&dir)?;
    let mut log = String::from("target,epoch,success_rate,mean_loss,updates\n");
    for (p, history) in &trained {
        p.save(perturbation_stem(&dir, p.target))?;
        for e in history {
            let _ = writeln!(
                log,
                "{},{},{:.6},{:.9},{}",
                p.target, e.epoch, e.success_rate, e.mean_loss, e.updates
            );
        }
    }
    write(&dir.join("attack_log.csv"), &log)?;
    let mean_train = trained
        .iter()
        .map(|(p, _)| p.meta.train_success_rate)
        .sum::<f64>()
        / trained.len() as f64;
    Ok(format!(
        "attack-universal: {} targets, epsilon {}, {} train RIRs, mean training success {} -> {}",
        trained.len(),
        template.epsilon,
        rirs.len(),
        pct(mean_train),
        dir.display()
    ))
}

fn file_stem(u: &Utterance) -> String {
    Path::new(&u.utterance_id).file_stem().map_or_else(
        || u.utterance_id.clone(),
        |s| s.to_string_lossy().into_owned(),
    )
}

pub fn attack_individual(cfg: &RunConfig, out: &Path, target: Option<usize>) -> CmdResult {
    let model = load_model(cfg, out)?;
    let target = match target {
        Some(t) if t < cfg.corpus.n_speakers => SpeakerLabel(t),
        Some(t) => return Err(CliError::Config(format!("--target {t} is not a speaker"))),
        None => cfg.targets()?[0],
    };
    let attack = cfg.attack(target)?;
    let victims: Vec<Utterance> = load_manifest(out)?
        .load_utterances(Split::Test)?
        .into_iter()
        .filter(|u| u.speaker != target)
        .take(cfg.attack.individual_count)
        .collect();
    if victims.is_empty() {
        return Err(spkadv::Error::Empty("no test utterances to attack").into());
    }
    let dir = out.join("individual");
    create_dir(&dir)?;
    let mut table = String::from("utterance,speaker,target,success,iterations\n");
    let mut times = Vec::new();
    let mut successes = 0;
    for u in &victims {
        let r = train_individual(&model, &u.waveform, &attack)?;
        let stem = file_stem(u);
        write_wav_f64(
            dir.join(format!("{stem}_t{:02}.wav", target.index())),
            &Waveform::new(r.delta.clone(), u.waveform.sample_rate)?,
        )?;
        let _ = writeln!(
            table,
            "{stem},{},{target},{},{}",
            u.speaker, r.success, r.iterations
        );
        successes += r.success as usize;
        times.push(r.elapsed.as_secs_f64());
    }
    write(
        &dir.join(format!("individual_t{:02}.csv", target.index())),
        &table,
    )?;
    times.sort_by(f64::total_cmp);
    Ok(format!(
        "attack-individual: target {target}, {successes}/{} fooled, median {:.3} s per utterance -> {}",
        victims.len(),
        times[times.len() / 2],
        dir.display()
    ))
}

fn zero_perturbation(
    cfg: &RunConfig,
    target: SpeakerLabel,
) -> Result<UniversalPerturbation, CliError> {
    let attack = cfg.attack(target)?;
    Ok(UniversalPerturbation {
        unit: vec![0.0; attack.delta_len(cfg.corpus.sample_rate)],
        sample_rate: cfg.corpus.sample_rate,
        epsilon: attack.epsilon,
        target,
        meta: PerturbationMeta {
            kappa: attack.kappa,
            seed: attack.seed,
            epochs_run: 0,
            train_success_rate: 0.0,
            n_train_rirs: 0,
            update: attack.update,
        },
    })
}

pub fn evaluate(
    cfg: &RunConfig,
    out: &Path,
    channel: Channel,
    perturbations: Option<&Path>,
    zero: bool,
) -> CmdResult {
    let model = load_model(cfg, out)?;
    let test = load_manifest(out)?.load_utterances(Split::Test)?;
    let targets = cfg.targets()?;
    let perts: Vec<UniversalPerturbation> = if zero {
        targets
            .iter()
            .map(|&t| zero_perturbation(cfg, t))
            .collect::<Result<_, _>>()?
    } else {
        let dir =
            perturbations.map_or_else(|| attack_dir(out, cfg.attack.rir_mode), Path::to_path_buf);
        targets
            .iter()
            .map(|&t| UniversalPerturbation::load(perturbation_stem(&dir, t)))
            .collect::<Result<_, _>>()?
    };
    let (condition, channels) = match channel {
        Channel::None => (Condition::NoRir, Vec::new()),
        Channel::TrainRir => (
            Condition::TrainRir,
            load_rirs(out, Split::Train, cfg.attack.max_train_rirs)?,
        ),
        Channel::TestRir => (Condition::TestRir, load_rirs(out, Split::Test, 0)?),
    };
    let report = evaluate_perturbations(&model, &perts, &test, &channels, condition)?;
    let dir = out.join("eval");
    create_dir(&dir)?;
    let name = format!(
        "report_{}{}.csv",
        condition.as_str(),
        if zero { "_zero" } else { "" }
    );
    let path = dir.join(name);
    write(&path, &report.to_csv())?;
    Ok(format!(
        "evaluate: {condition}, {} targets, noise {:.2} dB, success min {} max {} avg {} -> {}",
        report.rows.len(),
        report.mean_noise_db(),
        pct(report.min_success()),
        pct(report.max_success()),
        pct(report.avg_success()),
        path.display()
    ))
}

pub fn bench(cfg: &RunConfig, out: &Path) -> CmdResult {
    let model = load_model(cfg, out)?;
    let b = &cfg.bench;
    if b.target >= cfg.corpus.n_speakers {
        return Err(CliError::Config(format!(
            "bench.target {} is not a speaker",
            b.target
        )));
    }
    let target = SpeakerLabel(b.target);
    let p = UniversalPerturbation::load(perturbation_stem(
        &attack_dir(out, cfg.attack.rir_mode),
        target,
    ))?;
    let synth = cfg.synth()?;
    let others: Vec<usize> = (0..synth.n_speakers).filter(|&s| s != b.target).collect();
    // Fresh utterances beyond the corpus indices, so none were seen in training.
    let utterances: Vec<Waveform> = (0..b.n_utterances)
        .map(|i| {
            synth_utterance(
                &synth,
                others[i % others.len()],
                synth.utterances_per_speaker + i,
                b.utterance_s,
            )
        })
        .collect();
    let timing = timing_benchmark(&model, &p, &utterances, &cfg.attack(target)?, b.repeats)?;
    let dir = out.join("bench");
    create_dir(&dir)?;
    write(&dir.join("timing.txt"), &format!("{timing}\n"))?;
    Ok(format!("bench: {timing}"))
}
