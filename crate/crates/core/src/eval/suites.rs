//! Self-check suites: structural properties of the attack pipeline and
//! finite-difference / adjoint checks of every differentiable stage. Both run
//! on small randomized instances and return per-check results rather than
//! panicking, so they can be driven from the command line.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::{
    apply_delta, build_delta, clip_eps, cw_loss, fold_delta_gradient, train_universal, AttackConfig,
};
use crate::audio::{synth_utterance, SpeakerLabel, SynthConfig, Utterance};
use crate::features::Mfcc;
use crate::netcore::gradcheck::{
    adjoint_gap, directional_check, gradcheck, linear_adjoint_gap, GradCheckConfig,
};
use crate::netcore::{
    affine_backward, affine_forward, conv1d_backward, conv1d_forward, cross_entropy_grad,
    relu_backward, relu_forward, score_probs_backward, score_probs_forward, stats_pool_backward,
    stats_pool_forward, ConvShape, Frames, ScoringHead,
};
use crate::room::{
    convolve_full_direct, convolve_full_fft, convolve_samples, convolve_samples_backward,
    image_source_rir, Rir, RoomSpec,
};
use crate::xvector::{
    argmax, decode_checkpoint, encode_checkpoint, miniature, train_on, TrainConfig,
};

/// Relative tolerance for finite-difference gradient checks.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Relative tolerance for adjoint identities.
pub const ADJOINT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<34} {}",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        write!(
            f,
            "{}: {}/{} checks passed in {:.1} s",
            self.name,
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
            self.elapsed.as_secs_f64()
        )
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Move values away from `0` so ReLU kinks are not straddled by differences.
fn nudge(v: &mut [f64], gap: f64) {
    for x in v.iter_mut() {
        if x.abs() < gap {
            *x = if *x < 0.0 { -gap } else { gap };
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error of a directional derivative; a vanishing derivative would
/// make the comparison vacuous, so it counts as a failure.
fn directional<F: Fn(&[f64]) -> f64>(f: &F, point: &[f64], grad: &[f64], v: &[f64]) -> f64 {
    let r = directional_check(f, point, grad, v, 1e-6);
    if r.analytic.abs() < 1e-9 {
        f64::INFINITY
    } else {
        r.rel_error
    }
}

fn fd_and_adjoint(name: &str, fd: f64, adjoint: f64) -> CheckResult {
    CheckResult::new(
        name,
        fd <= FD_TOLERANCE && adjoint <= ADJOINT_TOLERANCE,
        format!("fd {fd:.2e}, adjoint {adjoint:.2e}"),
    )
}

fn check_conv(rng: &mut ChaCha8Rng) -> CheckResult {
    let s = ConvShape {
        context: 3,
        dilation: 2,
        in_ch: 4,
        out_ch: 5,
    };
    let t = 12;
    let (x, k, b) = (
        random(rng, t * 4, 1.0),
        random(rng, s.kernel_len(), 1.0),
        random(rng, 5, 1.0),
    );
    let up = random(rng, s.out_len(t) * 5, 1.0);
    let (nx, nk) = (x.len(), k.len());
    let f = |p: &[f64]| {
        let y = conv1d_forward(
            &Frames::new(p[..nx].to_vec(), t, 4),
            &p[nx..nx + nk],
            &p[nx + nk..],
            &s,
        )
        .unwrap();
        dot(&y.data, &up)
    };
    let (mut gk, mut gb) = (vec![0.0; nk], vec![0.0; 5]);
    let g_out = Frames::new(up.clone(), s.out_len(t), 5);
    let gx = conv1d_backward(
        &Frames::new(x.clone(), t, 4),
        &k,
        &s,
        &g_out,
        Some(&mut gk),
        Some(&mut gb),
    )
    .unwrap();
    let point = [x.clone(), k.clone(), b.clone()].concat();
    let analytic = [gx.data.clone(), gk, gb].concat();
    let blocks = [
        ("input", 0..nx),
        ("kernel", nx..nx + nk),
        ("bias", nx + nk..point.len()),
    ];
    let report = gradcheck(&f, &point, &analytic, &blocks, &GradCheckConfig::default());
    let v = random(rng, nx, 1.0);
    let zero = vec![0.0; 5];
    let jv = conv1d_forward(&Frames::new(v.clone(), t, 4), &k, &zero, &s).unwrap();
    fd_and_adjoint(
        "conv1d",
        report.max_rel_error(),
        linear_adjoint_gap(&jv.data, &up, &gx.data, &v),
    )
}

fn check_affine(rng: &mut ChaCha8Rng) -> CheckResult {
    let (n_in, n_out) = (7, 5);
    let (x, w, b, up) = (
        random(rng, n_in, 1.0),
        random(rng, n_in * n_out, 1.0),
        random(rng, n_out, 1.0),
        random(rng, n_out, 1.0),
    );
    let (nw, nb) = (w.len(), b.len());
    let f = |p: &[f64]| {
        dot(
            &affine_forward(&p[..n_in], &p[n_in..n_in + nw], &p[n_in + nw..]).unwrap(),
            &up,
        )
    };
    let (mut gw, mut gb) = (vec![0.0; nw], vec![0.0; nb]);
    let gx = affine_backward(&x, &w, &up, Some(&mut gw), Some(&mut gb)).unwrap();
    let point = [x.clone(), w.clone(), b.clone()].concat();
    let analytic = [gx.clone(), gw, gb].concat();
    let blocks = [
        ("x", 0..n_in),
        ("weight", n_in..n_in + nw),
        ("bias", n_in + nw..point.len()),
    ];
    let report = gradcheck(&f, &point, &analytic, &blocks, &GradCheckConfig::default());
    let v = random(rng, n_in, 1.0);
    let jv = affine_forward(&v, &w, &vec![0.0; n_out]).unwrap();
    fd_and_adjoint(
        "affine",
        report.max_rel_error(),
        linear_adjoint_gap(&jv, &up, &gx, &v),
    )
}

fn check_relu(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut x = random(rng, 20, 1.0);
    nudge(&mut x, 1e-3);
    let up = random(rng, 20, 1.0);
    let g = relu_backward(&x, &up);
    let f = |p: &[f64]| dot(&relu_forward(p), &up);
    let report = gradcheck(&f, &x, &g, &[("x", 0..20)], &GradCheckConfig::default());
    let v = random(rng, 20, 1.0);
    let fwd = |p: &[f64]| relu_forward(p);
    fd_and_adjoint(
        "relu",
        report.max_rel_error(),
        adjoint_gap(&fwd, &x, &v, &up, &g, 1e-6),
    )
}

fn check_pool(rng: &mut ChaCha8Rng) -> CheckResult {
    let (t, c) = (9, 4);
    let x = random(rng, t * c, 1.0);
    let up = random(rng, 2 * c, 1.0);
    let frames = Frames::new(x.clone(), t, c);
    let (_, cache) = stats_pool_forward(&frames).unwrap();
    let g = stats_pool_backward(&frames, &cache, &up).unwrap();
    let fwd = |p: &[f64]| {
        stats_pool_forward(&Frames::new(p.to_vec(), t, c))
            .unwrap()
            .0
    };
    let f = |p: &[f64]| dot(&fwd(p), &up);
    let report = gradcheck(
        &f,
        &x,
        &g.data,
        &[("input", 0..x.len())],
        &GradCheckConfig::default(),
    );
    let v = random(rng, x.len(), 1.0);
    fd_and_adjoint(
        "stats pooling",
        report.max_rel_error(),
        adjoint_gap(&fwd, &x, &v, &up, &g.data, 1e-5),
    )
}

fn check_scoring(rng: &mut ChaCha8Rng) -> CheckResult {
    let (k, e) = (4, 3);
    let mut head = ScoringHead::zeros(k, e);
    head.means.values = random(rng, k * e, 1.0);
    head.log_priors.values = random(rng, k, 1.0);
    let emb = random(rng, e, 1.0);
    let up = random(rng, k, 1.0);
    let (nm, nb) = (k * e, k);
    let build = |p: &[f64]| {
        let mut h = ScoringHead::zeros(k, e);
        h.means.values = p[e..e + nm].to_vec();
        h.log_priors.values = p[e + nm..].to_vec();
        h
    };
    let fwd = |p: &[f64]| score_probs_forward(&p[..e], &build(p)).unwrap().1;
    let f = |p: &[f64]| dot(&fwd(p), &up);
    let (_, probs) = score_probs_forward(&emb, &head).unwrap();
    let (mut gm, mut gb) = (vec![0.0; nm], vec![0.0; nb]);
    let g = score_probs_backward(&emb, &head, &probs, &up, Some((&mut gm, &mut gb))).unwrap();
    let point = [
        emb.clone(),
        head.means.values.clone(),
        head.log_priors.values.clone(),
    ]
    .concat();
    let analytic = [g.embedding.clone(), gm, gb].concat();
    let blocks = [
        ("embedding", 0..e),
        ("means", e..e + nm),
        ("log_priors", e + nm..point.len()),
    ];
    let report = gradcheck(&f, &point, &analytic, &blocks, &GradCheckConfig::default());
    let v = random(rng, point.len(), 1.0);
    let gap = adjoint_gap(&fwd, &point, &v, &up, &analytic, 1e-5);
    fd_and_adjoint("scoring head + softmax", report.max_rel_error(), gap)
}

fn check_mfcc(rng: &mut ChaCha8Rng) -> CheckResult {
    let model = miniature(rng.random());
    let mfcc: &Mfcc = model.mfcc();
    let x = random(rng, 1600, 0.3);
    let (feats, cache) = mfcc.forward_cached(&x).unwrap();
    let up = random(rng, feats.values.len(), 1.0);
    let g = mfcc.backward(&cache, &up).unwrap();
    let fwd = |p: &[f64]| mfcc.forward(p).unwrap().values;
    let f = |p: &[f64]| dot(&fwd(p), &up);
    let v = random(rng, x.len(), 1.0);
    let fd = directional(&f, &x, &g, &v);
    fd_and_adjoint(
        "MFCC front end",
        fd,
        adjoint_gap(&fwd, &x, &v, &up, &g, 1e-6),
    )
}

fn check_rir_convolution(rng: &mut ChaCha8Rng) -> CheckResult {
    let taps = image_source_rir(&RoomSpec {
        max_order: 3,
        ..RoomSpec::default()
    })
    .unwrap()
    .normalized()
    .taps;
    let x = random(rng, 2000, 0.5);
    let up = random(rng, 2000, 1.0);
    let g = convolve_samples_backward(&up, &taps);
    let f = |p: &[f64]| {
        convolve_samples(p, &taps)
            .iter()
            .zip(&up)
            .map(|(y, u)| u * y.sin())
            .sum::<f64>()
    };
    let y = convolve_samples(&x, &taps);
    let up_nl: Vec<f64> = y.iter().zip(&up).map(|(y, u)| u * y.cos()).collect();
    let g_nl = convolve_samples_backward(&up_nl, &taps);
    let v = random(rng, 2000, 1.0);
    let fd = directional(&f, &x, &g_nl, &v);
    let gap = linear_adjoint_gap(&convolve_samples(&v, &taps), &up, &g, &v);
    fd_and_adjoint("RIR convolution", fd, gap)
}

fn check_model_parameters(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut model = miniature(rng.random());
    let x = random(rng, 3000, 0.3);
    let label = 1;
    let trace = model.forward(&x).unwrap();
    let (_, g) = cross_entropy_grad(&trace.probs, label);
    let mut grads = model.grad_buffers();
    model
        .backward_scores(&trace, &g, Some(&mut grads), false)
        .unwrap();
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let point: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|p| p.values.clone())
        .collect();
    let analytic: Vec<f64> = grads.concat();
    let mut offsets = vec![0];
    for s in &sizes {
        offsets.push(offsets.last().unwrap() + s);
    }
    let blocks: Vec<(&str, std::ops::Range<usize>)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), offsets[i]..offsets[i + 1]))
        .collect();
    let f = |p: &[f64]| {
        let mut m = model.clone();
        for (i, param) in m.params_mut().into_iter().enumerate() {
            param.values.copy_from_slice(&p[offsets[i]..offsets[i + 1]]);
        }
        let probs = m.forward(&x).unwrap().probs;
        -probs[label].ln()
    };
    let report = gradcheck(&f, &point, &analytic, &blocks, &GradCheckConfig::default());
    model.zero_grad();
    CheckResult::new(
        "model parameters (cross-entropy)",
        report.passed,
        format!("fd {:.2e}", report.max_rel_error()),
    )
}

fn check_model_input(rng: &mut ChaCha8Rng) -> CheckResult {
    let model = miniature(rng.random());
    let x = random(rng, 3000, 0.3);
    let gp = random(rng, 3, 1.0);
    let trace = model.forward(&x).unwrap();
    let g = model.input_gradient(&trace, &gp).unwrap();
    let f = |p: &[f64]| dot(&model.forward(p).unwrap().probs, &gp);
    let fwd = |p: &[f64]| model.forward(p).unwrap().probs;
    let v = random(rng, x.len(), 1.0);
    let fd = directional(&f, &x, &g, &v);
    fd_and_adjoint(
        "model input gradient",
        fd,
        adjoint_gap(&fwd, &x, &v, &gp, &g, 1e-6),
    )
}

fn check_attack_chain(rng: &mut ChaCha8Rng) -> CheckResult {
    let model = miniature(rng.random());
    let x = random(rng, 3000, 0.3);
    let taps = [0.9, 0.0, 0.3, -0.1, 0.05];
    let (eps, len) = (0.05, 700);
    let target = SpeakerLabel(2);
    // Margin loss on the perturbed, channel-distorted input, as a function of
    // the base signal. The runner-up is fixed at the evaluation point so the
    // loss is smooth in a neighbourhood.
    let unit = random(rng, len, 0.02);
    let received = |u: &[f64]| convolve_samples(&apply_delta(&x, u, eps).unwrap(), &taps);
    let trace = model.forward(&received(&unit)).unwrap();
    let loss = cw_loss(&trace.probs, target, 0.0).unwrap();
    let j = loss.runner_up;
    let f = |u: &[f64]| {
        let p = model.forward(&received(u)).unwrap().probs;
        p[j] - p[target.index()]
    };
    let g_y = model.input_gradient(&trace, &loss.grad).unwrap();
    let g = fold_delta_gradient(&convolve_samples_backward(&g_y, &taps), len);
    let v = random(rng, len, 1.0);
    let fd = directional(&f, &unit, &g, &v);
    let g_tile = random(rng, x.len(), 1.0);
    let gap = linear_adjoint_gap(
        &build_delta(&v, x.len()).unwrap(),
        &g_tile,
        &fold_delta_gradient(&g_tile, len),
        &v,
    );
    fd_and_adjoint("attack chain (tile, clip, RIR, model)", fd, gap)
}

/// Finite-difference and adjoint checks of every forward/backward pair.
pub fn gradient_suite(seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        check_conv(&mut rng),
        check_affine(&mut rng),
        check_relu(&mut rng),
        check_pool(&mut rng),
        check_scoring(&mut rng),
        check_mfcc(&mut rng),
        check_rir_convolution(&mut rng),
        check_model_parameters(&mut rng),
        check_model_input(&mut rng),
        check_attack_chain(&mut rng),
    ];
    SuiteReport {
        name: "gradients",
        checks,
        elapsed: start.elapsed(),
    }
}

fn prop_tiling(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..200 {
        let (len, n) = (rng.random_range(1..300), rng.random_range(1..2000));
        let unit = random(rng, len, 1.0);
        let d = build_delta(&unit, n).unwrap();
        if d.len() != n || (0..n).any(|i| d[i] != unit[i % len]) {
            return CheckResult::new("periodic tiling", false, format!("len {len}, n {n}"));
        }
    }
    CheckResult::new("periodic tiling", true, "200 random (L, n) pairs")
}

fn prop_bound(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let eps = rng.random_range(1e-4..0.5);
        let (len, n) = (rng.random_range(1..300), rng.random_range(1..2000));
        let (x, unit) = (random(rng, n, 1.0), random(rng, len, 1.0));
        let y = apply_delta(&x, &unit, eps).unwrap();
        let clipped = clip_eps(&unit, eps);
        for i in 0..n {
            let d = y[i] - x[i];
            worst = worst.max((d.abs() - eps) / eps);
            if (d - clipped[i % len]).abs() > 1e-12 {
                return CheckResult::new(
                    "infinity-norm bound",
                    false,
                    format!("sample {i} is not x + clip(δ)"),
                );
            }
        }
    }
    CheckResult::new(
        "infinity-norm bound",
        worst <= 1e-12,
        format!("max (|δ| − ε)/ε = {worst:.1e}"),
    )
}

fn prop_cw(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..500 {
        let k = rng.random_range(2..12);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1e-3..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let t = rng.random_range(0..k);
        let kappa = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..0.5)
        };
        let l = cw_loss(&p, SpeakerLabel(t), kappa).unwrap();
        if l.value < -kappa {
            return CheckResult::new(
                "margin loss floor and sign",
                false,
                format!("{} < −κ", l.value),
            );
        }
        let margin_ok = (l.value <= 0.0) == (argmax(&p) == t);
        if kappa == 0.0 && !margin_ok {
            return CheckResult::new(
                "margin loss floor and sign",
                false,
                format!("{p:?}, t = {t}"),
            );
        }
    }
    CheckResult::new(
        "margin loss floor and sign",
        true,
        "500 random distributions",
    )
}

fn prop_convolution(rng: &mut ChaCha8Rng) -> CheckResult {
    let x = random(rng, 700, 1.0);
    if convolve_samples(&x, &Rir::unit(16_000).taps) != x {
        return CheckResult::new(
            "convolution identity and linearity",
            false,
            "unit impulse changed the input",
        );
    }
    let (w, r) = (random(rng, 700, 1.0), random(rng, 90, 1.0));
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let mix: Vec<f64> = x.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
    let lhs = convolve_samples(&mix, &r);
    let (yx, yw) = (convolve_samples(&x, &r), convolve_samples(&w, &r));
    let lin = (0..700)
        .map(|i| (lhs[i] - a * yx[i] - b * yw[i]).abs())
        .fold(0.0, f64::max);
    let (d, f) = (convolve_full_direct(&x, &r), convolve_full_fft(&x, &r));
    let agree = d
        .iter()
        .zip(&f)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    CheckResult::new(
        "convolution identity and linearity",
        lin < 1e-9 && agree < 1e-10 * crate::audio::peak_abs(&d),
        format!("linearity {lin:.1e}, fft vs direct {agree:.1e}"),
    )
}

fn prop_checkpoint(rng: &mut ChaCha8Rng) -> CheckResult {
    let model = miniature(rng.random());
    let bytes = encode_checkpoint(&model);
    match decode_checkpoint(&bytes) {
        Ok(m) if m == model && encode_checkpoint(&m) == bytes => CheckResult::new(
            "checkpoint round trip",
            true,
            format!("{} bytes bit-exact", bytes.len()),
        ),
        Ok(_) => CheckResult::new("checkpoint round trip", false, "decoded model differs"),
        Err(e) => CheckResult::new("checkpoint round trip", false, e.to_string()),
    }
}

fn tiny_corpus(seed: u64) -> Vec<Utterance> {
    let cfg = SynthConfig {
        n_speakers: 3,
        seed,
        ..SynthConfig::default()
    };
    (0..3)
        .flat_map(|s| (0..3).map(move |i| (s, i)))
        .map(|(s, i)| Utterance {
            waveform: synth_utterance(&cfg, s, i, 0.4),
            speaker: SpeakerLabel(s),
            utterance_id: format!("{s}-{i}"),
        })
        .collect()
}

fn prop_training_determinism(rng: &mut ChaCha8Rng) -> CheckResult {
    let seed: u64 = rng.random_range(0..1000);
    let utts = tiny_corpus(seed);
    let hyper = TrainConfig {
        epochs: 2,
        seed,
        ..TrainConfig::default()
    };
    let run = |hyper: &TrainConfig| {
        let mut m = miniature(seed);
        train_on(&mut m, &utts, &utts, hyper).map(|log| (encode_checkpoint(&m), log))
    };
    let (a, b) = (run(&hyper), run(&hyper));
    let c = run(&TrainConfig {
        seed: seed + 1,
        ..hyper
    });
    let mut attack = AttackConfig {
        target: SpeakerLabel(0),
        max_epochs: 2,
        delta_len_s: 0.05,
        ..AttackConfig::default()
    };
    attack.seed = seed;
    let model = miniature(seed);
    let (pa, pb) = (
        train_universal(&model, &utts, &[], &attack),
        train_universal(&model, &utts, &[], &attack),
    );
    match (a, b, c, pa, pb) {
        (Ok(a), Ok(b), Ok(c), Ok(pa), Ok(pb)) => CheckResult::new(
            "deterministic training",
            a == b && a.0 != c.0 && pa == pb,
            "classifier checkpoints and universal perturbations repeat under fixed seeds",
        ),
        _ => CheckResult::new("deterministic training", false, "a training run failed"),
    }
}

/// Structural properties of tiling, clipping, the margin loss, convolution,
/// checkpoints and seeded training.
pub fn property_suite(seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        prop_tiling(&mut rng),
        prop_bound(&mut rng),
        prop_cw(&mut rng),
        prop_convolution(&mut rng),
        prop_checkpoint(&mut rng),
        prop_training_determinism(&mut rng),
    ];
    SuiteReport {
        name: "properties",
        checks,
        elapsed: start.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes() {
        let r = gradient_suite(1);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn property_suite_passes() {
        let r = property_suite(2);
        assert!(r.passed(), "{r}");
    }
}
