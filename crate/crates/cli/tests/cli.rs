use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
format_version = 1

[seeds]
corpus = 11
model_init = 12
training = 13
rirs = 14
attack = 15

[corpus]
n_speakers = 3
utterances_per_speaker = 6
min_duration_s = 0.4
max_duration_s = 0.5
speaker_spread = 1.0

[mfcc]
n_coeffs = 13
n_mels = 20

[model]
tdnn = [[3, 1, 8], [3, 2, 8]]
embedding_dim = 8

[training]
epochs = 2

[room]
n_locations = 6
n_train = 4
max_order = 2

[attack]
epsilon = 0.05
max_epochs = 2
rir_mode = "set"
targets = [0, 2]
individual_max_iters = 5
individual_count = 2

[bench]
utterance_s = 0.5
n_utterances = 2
repeats = 2
"#;

fn spkadv(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spkadv"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--threads", "1"])
        .output()
        .expect("binary runs")
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, text).unwrap();
    let out = dir.path().join("run");
    (dir, config, out)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        stderr(&o)
    );
    let s = stdout(&o);
    assert_eq!(
        s.trim_end().lines().count(),
        1,
        "one-line summary expected: {s}"
    );
    s
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let (_d, config, out) = setup(&TINY.replace("epsilon = 0.05", "epsilon = 0.05\nepsilom = 1"));
    let o = spkadv(&["synth-corpus"], &config, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilom"), "{}", stderr(&o));
    assert!(!out.exists(), "nothing may be written on a config error");
}

#[test]
fn missing_seeds_are_a_config_error() {
    let text: String = TINY.replace("attack = 15\n", "");
    let (_d, config, out) = setup(&text);
    let o = spkadv(&["synth-corpus"], &config, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("attack"), "{}", stderr(&o));
    let (_d, config, out) = setup("format_version = 1\n");
    assert_eq!(spkadv(&["gen-rirs"], &config, &out).status.code(), Some(2));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = spkadv(
        &["synth-corpus"],
        &dir.path().join("absent.toml"),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let (_d, config, out) = setup(TINY);
    let o = spkadv(&["train-model"], &config, &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(spkadv(&["evaluate"], &config, &out).status.code(), Some(3));
}

#[test]
fn check_suites_pass() {
    let (_d, config, out) = setup(TINY);
    let s = ok(spkadv(
        &["evaluate", "--suite", "properties"],
        &config,
        &out,
    ));
    assert!(s.contains("checks passed"), "{s}");
    ok(spkadv(&["evaluate", "--suite", "gradients"], &config, &out));
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let (_d, config, out) = setup(TINY);
    ok(spkadv(&["synth-corpus"], &config, &out));
    let manifest = fs::read(out.join("corpus/manifest.tsv")).unwrap();
    ok(spkadv(&["train-model"], &config, &out));
    let first = fs::read(out.join("model/model.ckpt")).unwrap();
    let log = fs::read(out.join("model/training_log.csv")).unwrap();
    ok(spkadv(&["synth-corpus"], &config, &out));
    ok(spkadv(&["train-model"], &config, &out));
    assert_eq!(fs::read(out.join("corpus/manifest.tsv")).unwrap(), manifest);
    assert_eq!(fs::read(out.join("model/model.ckpt")).unwrap(), first);
    assert_eq!(fs::read(out.join("model/training_log.csv")).unwrap(), log);
}

#[test]
fn full_pipeline_runs_and_zero_perturbation_sits_at_chance() {
    let (_d, config, out) = setup(TINY);
    ok(spkadv(&["synth-corpus"], &config, &out));
    ok(spkadv(&["train-model"], &config, &out));
    let s = ok(spkadv(&["gen-rirs"], &config, &out));
    assert!(s.contains("4 train / 2 test"), "{s}");
    let s = ok(spkadv(&["attack-universal"], &config, &out));
    assert!(s.contains("2 targets") && s.contains("4 train RIRs"), "{s}");
    for t in ["00", "02"] {
        assert!(out
            .join(format!("attack-rir/perturbation_t{t}.wav"))
            .exists());
        assert!(out
            .join(format!("attack-rir/perturbation_t{t}.meta.txt"))
            .exists());
    }
    let log = fs::read_to_string(out.join("attack-rir/attack_log.csv")).unwrap();
    assert!(log.starts_with("target,epoch,"));

    for (channel, condition) in [
        ("none", "no-rir"),
        ("train-rir", "train-rir"),
        ("test-rir", "test-rir"),
    ] {
        let s = ok(spkadv(&["evaluate", "--channel", channel], &config, &out));
        assert!(s.contains(condition), "{s}");
        assert!(out.join(format!("eval/report_{condition}.csv")).exists());
    }
    let report = fs::read_to_string(out.join("eval/report_test-rir.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);

    // With no perturbation, the success rate over all targets is the rate at
    // which non-target test utterances are misattributed, which sums to the
    // error rate: at most chance level for a classifier better than chance.
    ok(spkadv(&["evaluate", "--zero"], &config, &out));
    let zero = fs::read_to_string(out.join("eval/report_no-rir_zero.csv")).unwrap();
    let rates: Vec<f64> = zero
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let avg = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!(avg <= 1.0 / 3.0 + 0.15, "zero-perturbation success {avg}");

    let s = ok(spkadv(
        &["attack-individual", "--target", "1"],
        &config,
        &out,
    ));
    assert!(s.contains("/2 fooled"), "{s}");
    assert!(out.join("individual/individual_t01.csv").exists());
    let s = ok(spkadv(&["bench"], &config, &out));
    assert!(s.contains("speedup"), "{s}");
    assert!(out.join("bench/timing.txt").exists());
}

#[test]
fn evaluation_is_idempotent() {
    let (_d, config, out) = setup(&TINY.replace("rir_mode = \"set\"", "rir_mode = \"none\""));
    ok(spkadv(&["synth-corpus"], &config, &out));
    ok(spkadv(&["train-model"], &config, &out));
    ok(spkadv(&["attack-universal"], &config, &out));
    let p = fs::read(out.join("attack-none/perturbation_t00.wav")).unwrap();
    let first = ok(spkadv(&["evaluate"], &config, &out));
    let report = fs::read(out.join("eval/report_no-rir.csv")).unwrap();
    ok(spkadv(&["attack-universal"], &config, &out));
    assert_eq!(
        fs::read(out.join("attack-none/perturbation_t00.wav")).unwrap(),
        p
    );
    assert_eq!(ok(spkadv(&["evaluate"], &config, &out)), first);
    assert_eq!(
        fs::read(out.join("eval/report_no-rir.csv")).unwrap(),
        report
    );
    // RIR channels require the RIR set.
    let o = spkadv(&["evaluate", "--channel", "test-rir"], &config, &out);
    assert_eq!(o.status.code(), Some(3));
}
