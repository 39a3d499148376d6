//! Per-utterance cross-entropy training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::SpeakerModel;
use crate::audio::{CorpusManifest, Split, Utterance};
use crate::error::{Error, Result};
use crate::netcore::{cross_entropy_grad, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fit the feature standardization on the training split before the first epoch.
    pub fit_normalization: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
            fit_normalization: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's updates.
    pub loss: f64,
    /// Accuracy on the held-out split after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    /// Mean cross-entropy on the training split before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// CSV with header `epoch,loss,accuracy`; epoch 0 is the untrained model.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        s.push_str(&format!("0,{:.9},\n", self.initial_loss));
        for e in &self.epochs {
            s.push_str(&format!("{},{:.9},{:.6}\n", e.epoch, e.loss, e.accuracy));
        }
        s
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

/// Fraction of `utterances` whose prediction equals the label.
pub fn accuracy(model: &SpeakerModel, utterances: &[Utterance]) -> Result<f64> {
    if utterances.is_empty() {
        return Err(Error::Empty("accuracy over an empty split"));
    }
    let correct: Result<Vec<bool>> = utterances
        .par_iter()
        .map(|u| Ok(model.predict(&u.waveform)? == u.speaker))
        .collect();
    Ok(correct?.into_iter().filter(|&c| c).count() as f64 / utterances.len() as f64)
}

fn mean_loss(model: &SpeakerModel, utterances: &[Utterance]) -> Result<f64> {
    let losses: Result<Vec<f64>> = utterances
        .par_iter()
        .map(|u| {
            let t = model.forward(&u.waveform.samples)?;
            Ok(cross_entropy_grad(&t.probs, u.speaker.0).0)
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Train on the corpus's train split, reporting accuracy on its test split.
pub fn train(
    model: &mut SpeakerModel,
    corpus: &CorpusManifest,
    hyper: &TrainConfig,
) -> Result<TrainingLog> {
    let train_set = corpus.load_utterances(Split::Train)?;
    let test_set = corpus.load_utterances(Split::Test)?;
    train_on(model, &train_set, &test_set, hyper)
}

pub fn train_on(
    model: &mut SpeakerModel,
    train_set: &[Utterance],
    test_set: &[Utterance],
    hyper: &TrainConfig,
) -> Result<TrainingLog> {
    if train_set.is_empty() {
        return Err(Error::Empty("training split is empty"));
    }
    for s in 0..model.n_speakers() {
        if !train_set.iter().any(|u| u.speaker.0 == s) {
            return Err(Error::Config(format!(
                "speaker {s} has no training utterances"
            )));
        }
    }
    if let Some(u) = train_set.iter().find(|u| u.speaker.0 >= model.n_speakers()) {
        return Err(Error::Config(format!(
            "utterance {} has label {} but the model has {} speakers",
            u.utterance_id,
            u.speaker,
            model.n_speakers()
        )));
    }
    let mut log = TrainingLog::default();
    if hyper.epochs == 0 {
        log.initial_loss = mean_loss(model, train_set)?;
        return Ok(log);
    }
    if hyper.fit_normalization {
        model.fit_feature_normalization(train_set)?;
    }
    log.initial_loss = mean_loss(model, train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = AdamState::new(AdamConfig {
        learning_rate: hyper.learning_rate,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let u = &train_set[i];
            let trace = model.forward(&u.waveform.samples)?;
            let (loss, g_scores) = cross_entropy_grad(&trace.probs, u.speaker.0);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} on {}",
                    u.utterance_id
                )));
            }
            total += loss;
            let mut grads = model.grad_buffers();
            model.backward_scores(&trace, &g_scores, Some(&mut grads), false)?;
            let mut params = model.params_mut();
            for (p, g) in params.iter_mut().zip(grads) {
                p.grad = g;
            }
            opt.step(&mut params);
        }
        let loss = total / order.len() as f64;
        let accuracy = if test_set.is_empty() {
            f64::NAN
        } else {
            accuracy(model, test_set)?
        };
        log.epochs.push(EpochLog {
            epoch,
            loss,
            accuracy,
        });
    }
    Ok(log)
}
