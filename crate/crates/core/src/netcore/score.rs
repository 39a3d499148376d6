//! Probabilistic scoring head.
//!
//! A shared-covariance Gaussian classifier over embeddings with identity
//! covariance: `score_k = μ_k·e − ½‖μ_k‖² + b_k` where `b_k` is a learned
//! log-prior. Posteriors are the softmax of the scores. This is affine in the
//! embedding, so it is equivalent to a linear layer plus softmax, but keeps the
//! class-mean reading of a generative backend.

use super::{axpy, dot, Parameter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead {
    /// `K × E`
    pub means: Parameter,
    /// `K`
    pub log_priors: Parameter,
}

impl ScoringHead {
    /// All-zero head: every class scores 0.
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            means: Parameter::zeros("head.means", vec![n_classes, dim]),
            log_priors: Parameter::zeros("head.log_priors", vec![n_classes]),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.log_priors.len()
    }

    pub fn dim(&self) -> usize {
        self.means.shape[1]
    }

    pub fn scores(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        let (k, e) = (self.n_classes(), self.dim());
        if k < 2 {
            return Err(Error::Config(format!(
                "scoring head needs K >= 2 classes, has {k}"
            )));
        }
        if embedding.len() != e {
            return Err(Error::shape("score_probs", e, embedding.len()));
        }
        Ok((0..k)
            .map(|c| {
                let mu = &self.means.values[c * e..(c + 1) * e];
                dot(mu, embedding) - 0.5 * dot(mu, mu) + self.log_priors.values[c]
            })
            .collect())
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Returns `(scores, probabilities)`.
pub fn score_probs_forward(embedding: &[f64], head: &ScoringHead) -> Result<(Vec<f64>, Vec<f64>)> {
    let scores = head.scores(embedding)?;
    let probs = softmax(&scores);
    Ok((scores, probs))
}

#[derive(Debug, Clone)]
pub struct ScoreGrads {
    pub embedding: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Mutable views of the head's gradient buffers: `(means, log_priors)`.
pub type HeadGrads<'a> = (&'a mut [f64], &'a mut [f64]);

/// Pull a gradient on the scores back to the embedding, accumulating head
/// gradients into `grads` when given.
pub fn scores_backward(
    embedding: &[f64],
    head: &ScoringHead,
    grad_scores: &[f64],
    mut grads: Option<HeadGrads<'_>>,
) -> Vec<f64> {
    let e = head.dim();
    let mut g_emb = vec![0.0; e];
    for (c, &gs) in grad_scores.iter().enumerate() {
        let mu = &head.means.values[c * e..(c + 1) * e];
        axpy(gs, mu, &mut g_emb);
        if let Some((g_means, g_priors)) = grads.as_mut() {
            let gm = &mut g_means[c * e..(c + 1) * e];
            for ((g, &x), &m) in gm.iter_mut().zip(embedding).zip(mu) {
                *g += gs * (x - m);
            }
            g_priors[c] += gs;
        }
    }
    g_emb
}

/// Softmax adjoint: `g_s = p ⊙ (g_p − ⟨g_p, p⟩)`.
///
/// `g_i − ⟨g, p⟩` is evaluated as `Σ_k p_k (g_i − g_k)`, which stays accurate
/// when one probability is within rounding of 1 (a saturated classifier).
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| {
            let centred: f64 = probs
                .iter()
                .zip(grad_probs)
                .map(|(pk, gk)| pk * (g - gk))
                .sum();
            p * centred
        })
        .collect()
}

/// Gradient through the softmax and then the scores.
pub fn score_probs_backward(
    embedding: &[f64],
    head: &ScoringHead,
    probs: &[f64],
    grad_probs: &[f64],
    grads: Option<HeadGrads<'_>>,
) -> Result<ScoreGrads> {
    if grad_probs.len() != probs.len() || probs.len() != head.n_classes() {
        return Err(Error::shape(
            "score_probs_backward",
            head.n_classes(),
            grad_probs.len(),
        ));
    }
    let g_scores = softmax_backward(probs, grad_probs);
    let g_emb = scores_backward(embedding, head, &g_scores, grads);
    Ok(ScoreGrads {
        embedding: g_emb,
        scores: g_scores,
    })
}

/// `(−log p_label, ∂/∂scores = p − onehot)`
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> (f64, Vec<f64>) {
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    (loss, g)
}
