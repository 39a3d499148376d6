//! The end-to-end speaker classifier `F(x) = argmax P(x)`.
//!
//! MFCC features are standardized with fixed per-coefficient statistics, passed
//! through dilated temporal convolutions with ReLU, pooled to mean and standard
//! deviation, mapped to an embedding by one affine+ReLU layer and scored by the
//! Gaussian head.

mod checkpoint;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use train::{accuracy, train, train_on, EpochLog, TrainConfig, TrainingLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{SpeakerLabel, Utterance, Waveform};
use crate::error::{Error, Result};
use crate::features::{Mfcc, MfccCache, MfccConfig};
use crate::netcore::{
    affine_backward, affine_forward, conv1d_backward, conv1d_forward, relu_backward, relu_forward,
    score_probs_forward, scores_backward, softmax_backward, stats_pool_backward,
    stats_pool_forward, ConvShape, Frames, Parameter, PoolCache, ScoringHead,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdnnSpec {
    pub context: usize,
    pub dilation: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub tdnn: Vec<TdnnSpec>,
    pub embedding_dim: usize,
    pub n_speakers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            tdnn: vec![
                TdnnSpec {
                    context: 5,
                    dilation: 1,
                    channels: 64,
                },
                TdnnSpec {
                    context: 3,
                    dilation: 2,
                    channels: 64,
                },
                TdnnSpec {
                    context: 3,
                    dilation: 3,
                    channels: 64,
                },
            ],
            embedding_dim: 64,
            n_speakers: 10,
        }
    }
}

impl Architecture {
    /// Frames consumed by the convolution stack for one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .tdnn
            .iter()
            .map(|l| (l.context - 1) * l.dilation)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!(
                "need at least 2 speakers, got {}",
                self.n_speakers
            )));
        }
        if self.tdnn.is_empty() || self.embedding_dim == 0 {
            return Err(Error::Config(
                "architecture needs at least one TDNN layer and a non-empty embedding".into(),
            ));
        }
        if self
            .tdnn
            .iter()
            .any(|l| l.context == 0 || l.dilation == 0 || l.channels == 0)
        {
            return Err(Error::Config(
                "TDNN context, dilation and channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdnnLayer {
    pub shape: ConvShape,
    pub kernel: Parameter,
    pub bias: Parameter,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    mfcc: MfccCache,
    /// Standardized features, the input of the first TDNN layer.
    input: Frames,
    /// Pre-activation output of each TDNN layer.
    pre: Vec<Frames>,
    /// Post-ReLU output of each TDNN layer.
    post: Vec<Frames>,
    pool: PoolCache,
    pooled: Vec<f64>,
    embed_pre: Vec<f64>,
    pub embedding: Vec<f64>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SpeakerModel {
    pub mfcc_config: MfccConfig,
    pub arch: Architecture,
    /// Per-coefficient feature standardization `(x − shift) · scale`; not trained.
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub tdnn: Vec<TdnnLayer>,
    pub embed_weight: Parameter,
    pub embed_bias: Parameter,
    pub head: ScoringHead,
    /// Display name per speaker index.
    pub labels: Vec<String>,
    mfcc: Mfcc,
}

impl PartialEq for SpeakerModel {
    fn eq(&self, other: &Self) -> bool {
        self.mfcc_config == other.mfcc_config
            && self.arch == other.arch
            && self.feature_shift == other.feature_shift
            && self.feature_scale == other.feature_scale
            && self.tdnn == other.tdnn
            && self.embed_weight == other.embed_weight
            && self.embed_bias == other.embed_bias
            && self.head == other.head
            && self.labels == other.labels
    }
}

/// Lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl SpeakerModel {
    /// He-initialized convolution and embedding weights, zero biases and a
    /// zero scoring head (uniform posteriors before training).
    pub fn new(arch: Architecture, mfcc_config: MfccConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mfcc = Mfcc::new(mfcc_config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, n: usize| -> Vec<f64> {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        let mut in_ch = mfcc_config.n_coeffs;
        let mut tdnn = Vec::with_capacity(arch.tdnn.len());
        for (i, spec) in arch.tdnn.iter().enumerate() {
            let shape = ConvShape {
                context: spec.context,
                dilation: spec.dilation,
                in_ch,
                out_ch: spec.channels,
            };
            tdnn.push(TdnnLayer {
                kernel: Parameter::new(
                    format!("tdnn{i}.kernel"),
                    vec![spec.context, in_ch, spec.channels],
                    he(spec.context * in_ch, shape.kernel_len()),
                ),
                bias: Parameter::zeros(format!("tdnn{i}.bias"), vec![spec.channels]),
                shape,
            });
            in_ch = spec.channels;
        }
        let pooled = 2 * in_ch;
        let embed_weight = Parameter::new(
            "embed.weight",
            vec![arch.embedding_dim, pooled],
            he(pooled, arch.embedding_dim * pooled),
        );
        let n_coeffs = mfcc_config.n_coeffs;
        Ok(Self {
            embed_bias: Parameter::zeros("embed.bias", vec![arch.embedding_dim]),
            head: ScoringHead::zeros(arch.n_speakers, arch.embedding_dim),
            labels: (0..arch.n_speakers).map(|i| format!("spk{i:02}")).collect(),
            feature_shift: vec![0.0; n_coeffs],
            feature_scale: vec![1.0; n_coeffs],
            tdnn,
            embed_weight,
            arch,
            mfcc_config,
            mfcc,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.arch.n_speakers
    }

    /// Shortest accepted input, in samples.
    pub fn min_samples(&self) -> usize {
        self.mfcc_config.min_samples(self.arch.receptive_field())
    }

    pub fn mfcc(&self) -> &Mfcc {
        &self.mfcc
    }

    /// Set the feature standardization from the frames of `utterances`.
    pub fn fit_feature_normalization(&mut self, utterances: &[Utterance]) -> Result<()> {
        let c = self.mfcc_config.n_coeffs;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for u in utterances {
            let f = self.mfcc.forward(&u.waveform.samples)?;
            for row in f.values.chunks_exact(c) {
                for i in 0..c {
                    sum[i] += row[i];
                    sq[i] += row[i] * row[i];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("no frames to fit feature normalization"));
        }
        for i in 0..c {
            let mean = sum[i] / n as f64;
            let var = (sq[i] / n as f64 - mean * mean).max(0.0);
            self.feature_shift[i] = mean;
            self.feature_scale[i] = 1.0 / (var.sqrt() + 1e-8);
        }
        Ok(())
    }

    /// All trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = Vec::new();
        for l in &self.tdnn {
            v.push(&l.kernel);
            v.push(&l.bias);
        }
        v.extend([
            &self.embed_weight,
            &self.embed_bias,
            &self.head.means,
            &self.head.log_priors,
        ]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = Vec::new();
        for l in &mut self.tdnn {
            v.push(&mut l.kernel);
            v.push(&mut l.bias);
        }
        v.push(&mut self.embed_weight);
        v.push(&mut self.embed_bias);
        v.push(&mut self.head.means);
        v.push(&mut self.head.log_priors);
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn forward(&self, samples: &[f64]) -> Result<Trace> {
        if samples.len() < self.min_samples() {
            return Err(Error::TooShort {
                got: samples.len(),
                min: self.min_samples(),
                unit: "samples",
            });
        }
        let (feats, mfcc) = self.mfcc.forward_cached(samples)?;
        let c = feats.n_coeffs;
        let mut data = feats.values;
        for row in data.chunks_exact_mut(c) {
            for ((v, shift), scale) in row
                .iter_mut()
                .zip(&self.feature_shift)
                .zip(&self.feature_scale)
            {
                *v = (*v - shift) * scale;
            }
        }
        let input = Frames::new(data, feats.n_frames, c);
        let mut pre = Vec::with_capacity(self.tdnn.len());
        let mut post: Vec<Frames> = Vec::with_capacity(self.tdnn.len());
        for layer in &self.tdnn {
            let x = post.last().unwrap_or(&input);
            let y = conv1d_forward(x, &layer.kernel.values, &layer.bias.values, &layer.shape)?;
            post.push(Frames::new(relu_forward(&y.data), y.len, y.channels));
            pre.push(y);
        }
        let (pooled, pool) = stats_pool_forward(post.last().expect("at least one layer"))?;
        let embed_pre =
            affine_forward(&pooled, &self.embed_weight.values, &self.embed_bias.values)?;
        let embedding = relu_forward(&embed_pre);
        let (scores, probs) = score_probs_forward(&embedding, &self.head)?;
        Ok(Trace {
            mfcc,
            input,
            pre,
            post,
            pool,
            pooled,
            embed_pre,
            embedding,
            scores,
            probs,
        })
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate != self.mfcc_config.sample_rate {
            return Err(Error::SampleRate {
                left: w.sample_rate,
                right: self.mfcc_config.sample_rate,
            });
        }
        Ok(())
    }

    /// Posterior over enrolled speakers, `P(x)`.
    pub fn forward_probs(&self, w: &Waveform) -> Result<Vec<f64>> {
        self.check_rate(w)?;
        Ok(self.forward(&w.samples)?.probs)
    }

    /// `F(x) = argmax P(x)`, ties to the lowest index.
    pub fn predict(&self, w: &Waveform) -> Result<SpeakerLabel> {
        Ok(SpeakerLabel(argmax(&self.forward_probs(w)?)))
    }

    /// Zeroed gradient buffers in [`Self::params`] order.
    pub fn grad_buffers(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Back-propagate a gradient on the pre-softmax scores. Parameter gradients
    /// are accumulated into `param_grads` (in [`Self::params`] order) when given;
    /// the gradient w.r.t. the input samples is returned when `want_input`.
    pub fn backward_scores(
        &self,
        trace: &Trace,
        grad_scores: &[f64],
        mut param_grads: Option<&mut [Vec<f64>]>,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let n_layers = self.tdnn.len();
        let head_grads = param_grads.as_deref_mut().map(|g| {
            let (_, tail) = g.split_at_mut(2 * n_layers + 2);
            let (means, priors) = tail.split_at_mut(1);
            (means[0].as_mut_slice(), priors[0].as_mut_slice())
        });
        let g_emb = scores_backward(&trace.embedding, &self.head, grad_scores, head_grads);
        let g_embed_pre = relu_backward(&trace.embed_pre, &g_emb);
        let g_pooled = {
            let (gw, gb) = match param_grads.as_deref_mut() {
                Some(g) => {
                    let (w, rest) = g[2 * n_layers..].split_at_mut(1);
                    (Some(w[0].as_mut_slice()), Some(rest[0].as_mut_slice()))
                }
                None => (None, None),
            };
            affine_backward(
                &trace.pooled,
                &self.embed_weight.values,
                &g_embed_pre,
                gw,
                gb,
            )?
        };
        let last = trace.post.last().expect("at least one layer");
        let mut g = stats_pool_backward(last, &trace.pool, &g_pooled)?;
        for (i, layer) in self.tdnn.iter().enumerate().rev() {
            let g_pre = Frames::new(
                relu_backward(&trace.pre[i].data, &g.data),
                g.len,
                g.channels,
            );
            let x = if i == 0 {
                &trace.input
            } else {
                &trace.post[i - 1]
            };
            if i == 0 && !want_input && param_grads.is_none() {
                return Ok(None);
            }
            let (gk, gb) = match param_grads.as_deref_mut() {
                Some(pg) => {
                    let (k, rest) = pg[2 * i..].split_at_mut(1);
                    (Some(k[0].as_mut_slice()), Some(rest[0].as_mut_slice()))
                }
                None => (None, None),
            };
            g = conv1d_backward(x, &layer.kernel.values, &layer.shape, &g_pre, gk, gb)?;
        }
        if !want_input {
            return Ok(None);
        }
        let c = g.channels;
        for row in g.data.chunks_exact_mut(c) {
            for (v, scale) in row.iter_mut().zip(&self.feature_scale) {
                *v *= scale;
            }
        }
        Ok(Some(self.mfcc.backward(&trace.mfcc, &g.data)?))
    }

    /// Gradient of `⟨grad_probs, P(x)⟩` w.r.t. the input samples.
    pub fn input_gradient(&self, trace: &Trace, grad_probs: &[f64]) -> Result<Vec<f64>> {
        let g_scores = softmax_backward(&trace.probs, grad_probs);
        Ok(self
            .backward_scores(trace, &g_scores, None, true)?
            .expect("input gradient requested"))
    }
}

/// A small randomly initialised three-speaker model with a non-trivial head,
/// used by the self-check suites and tests.
pub fn miniature(seed: u64) -> SpeakerModel {
    let arch = Architecture {
        tdnn: vec![
            TdnnSpec {
                context: 3,
                dilation: 1,
                channels: 6,
            },
            TdnnSpec {
                context: 2,
                dilation: 2,
                channels: 5,
            },
        ],
        embedding_dim: 4,
        n_speakers: 3,
    };
    let cfg = MfccConfig {
        n_coeffs: 8,
        n_mels: 12,
        ..MfccConfig::default()
    };
    let mut m = SpeakerModel::new(arch, cfg, seed).expect("miniature architecture is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for v in m
        .head
        .means
        .values
        .iter_mut()
        .chain(m.head.log_priors.values.iter_mut())
    {
        *v = rng.random_range(-1.0..1.0);
    }
    // Positive TDNN biases and non-negative embedding weights (pooled
    // statistics are non-negative) keep the tiny ReLU layers alive for any seed.
    for layer in &mut m.tdnn {
        layer.bias.values.iter_mut().for_each(|b| *b = 0.5);
    }
    m.embed_weight.values.iter_mut().for_each(|w| *w = w.abs());
    m.embed_bias.values.iter_mut().for_each(|b| *b = 0.5);
    m.feature_shift.iter_mut().for_each(|s| *s = -20.0);
    m.feature_scale.iter_mut().for_each(|s| *s = 0.1);
    m
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::netcore::cross_entropy_grad;
    use crate::netcore::gradcheck::{directional_check, gradcheck, GradCheckConfig};
    use rand::Rng;

    pub(crate) fn tiny_model(seed: u64) -> SpeakerModel {
        miniature(seed)
    }

    #[test]
    fn miniature_models_are_not_dead() {
        for seed in 0..40 {
            let m = miniature(seed);
            let x = noise(3000, seed + 100);
            let trace = m.forward(&x).unwrap();
            let g = m.input_gradient(&trace, &[1.0, -1.0, 0.5]).unwrap();
            assert!(g.iter().any(|v| v.abs() > 1e-9), "seed {seed}");
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()
    }

    #[test]
    fn zero_head_gives_uniform() {
        let m = SpeakerModel::new(Architecture::default(), MfccConfig::default(), 1).unwrap();
        let w = Waveform::new(noise(m.min_samples() + 500, 2), 16_000).unwrap();
        let p = m.forward_probs(&w).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-12));
        assert_eq!(m.predict(&w).unwrap(), SpeakerLabel(0));
    }

    #[test]
    fn receptive_field_and_min_duration() {
        let m = SpeakerModel::new(Architecture::default(), MfccConfig::default(), 1).unwrap();
        assert_eq!(m.arch.receptive_field(), 15);
        assert_eq!(m.min_samples(), 400 + 14 * 160);
        let short = Waveform::zeros(m.min_samples() - 1, 16_000);
        assert!(matches!(
            m.forward_probs(&short),
            Err(Error::TooShort { .. })
        ));
        assert!(m
            .forward_probs(&Waveform::zeros(m.min_samples(), 16_000))
            .is_ok());
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn probabilities_sum_to_one_and_predict_is_argmax() {
        let m = tiny_model(3);
        for seed in 0..5 {
            let w = Waveform::new(noise(3000, seed), 16_000).unwrap();
            let p = m.forward_probs(&w).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v > 0.0));
            assert_eq!(m.predict(&w).unwrap().0, argmax(&p));
        }
    }

    #[test]
    fn softmax_shift_invariance_of_prediction() {
        let m = tiny_model(4);
        let w = noise(3000, 9);
        let t = m.forward(&w).unwrap();
        let shifted: Vec<f64> = t.scores.iter().map(|s| s + 37.5).collect();
        assert_eq!(argmax(&crate::netcore::softmax(&shifted)), argmax(&t.probs));
        let mut m2 = m.clone();
        m2.head.log_priors.values.iter_mut().for_each(|b| *b += 3.0);
        let p2 = m2.forward(&w).unwrap().probs;
        for (a, b) in p2.iter().zip(&t.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_gradient_passes_gradcheck() {
        let m = tiny_model(5);
        let w = noise(2400, 10);
        let label = 1;
        let trace = m.forward(&w).unwrap();
        let (_, g_scores) = cross_entropy_grad(&trace.probs, label);
        let mut grads = m.grad_buffers();
        m.backward_scores(&trace, &g_scores, Some(&mut grads), false)
            .unwrap();
        let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
        let point: Vec<f64> = m.params().iter().flat_map(|p| p.values.clone()).collect();
        let analytic: Vec<f64> = grads.concat();
        let mut ranges = Vec::new();
        let mut at = 0;
        for p in m.params() {
            ranges.push(at..at + p.len());
            at += p.len();
        }
        let blocks: Vec<(&str, std::ops::Range<usize>)> = names
            .iter()
            .map(String::as_str)
            .zip(ranges.iter().cloned())
            .collect();
        let f = |p: &[f64]| -> f64 {
            let mut mm = m.clone();
            let mut at = 0;
            for param in mm.params_mut() {
                let n = param.len();
                param.values.copy_from_slice(&p[at..at + n]);
                at += n;
            }
            let t = mm.forward(&w).unwrap();
            cross_entropy_grad(&t.probs, label).0
        };
        let report = gradcheck(&f, &point, &analytic, &blocks, &GradCheckConfig::default());
        assert!(report.passed, "{report}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = tiny_model(6);
        let w = noise(2400, 11);
        let up = [0.3, -1.0, 0.7];
        let trace = m.forward(&w).unwrap();
        let g = m.input_gradient(&trace, &up).unwrap();
        let f = |x: &[f64]| -> f64 {
            m.forward(x)
                .unwrap()
                .probs
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum()
        };
        for seed in 0..3 {
            let r = directional_check(&f, &w, &g, &noise(w.len(), 50 + seed), 1e-6);
            assert!(r.rel_error < 1e-4, "{r:?}");
        }
    }
}
