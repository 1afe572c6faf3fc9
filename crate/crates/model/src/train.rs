//! Adam training with a linear learning-rate schedule, gradient clipping and
//! best-validation-BLEU checkpoint selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ketod_core::eval::corpus_bleu;
use ketod_core::tokens::PAD_ID;

use crate::checkpoint::Checkpoint;
use crate::error::{ModelError, Result};
use crate::generate::greedy_generate;
use crate::params::{Grads, Params};
use crate::transformer::{accumulate, teacher_forcing, Example, Runner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Epochs(usize),
    Steps(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub budget: Budget,
    pub warmup_steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: Option<f64>,
    /// Stop after this many validations without a new best BLEU.
    pub patience: Option<usize>,
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            lr0: 6.25e-5,
            budget: Budget::Epochs(30),
            warmup_steps: 0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(1.0),
            patience: None,
            max_decode_len: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidTrainConfig(m));
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        match self.budget {
            Budget::Epochs(0) => return bad("epochs must be at least 1".into()),
            Budget::Steps(0) => return bad("steps must be at least 1".into()),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        match self.budget {
            Budget::Epochs(e) => e * self.steps_per_epoch(n_train),
            Budget::Steps(s) => s,
        }
    }
}

/// Linear warmup from 0 to `lr0` over `warmup_steps`, then linear decay to 0
/// at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> Result<f64> {
    if step > total_steps {
        return Err(ModelError::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    let warmup = config.warmup_steps.min(total_steps);
    let lr = if step < warmup {
        config.lr0 * step as f64 / warmup as f64
    } else if total_steps == warmup {
        0.0
    } else {
        config.lr0 * (total_steps - step) as f64 / (total_steps - warmup) as f64
    };
    Ok(lr)
}

/// Adam without weight decay over a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Adam {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = self.eps as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Scores validation hypotheses; `valid[i]` is the reference of `hyps[i]`.
pub trait Scorer {
    fn score(&self, hyps: &[Vec<u32>], valid: &[Example]) -> Result<ValidationScores>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScores {
    pub bleu: f64,
    pub entity_f1: Option<f64>,
}

/// Corpus BLEU over token ids.
pub struct BleuScorer;

impl Scorer for BleuScorer {
    fn score(&self, hyps: &[Vec<u32>], valid: &[Example]) -> Result<ValidationScores> {
        Ok(ValidationScores {
            bleu: bleu_of_ids(hyps, valid.iter().map(|e| e.tgt.as_slice()))?,
            entity_f1: None,
        })
    }
}

pub fn bleu_of_ids<'a>(hyps: &[Vec<u32>], refs: impl Iterator<Item = &'a [u32]>) -> Result<f64> {
    let words = |ids: &[u32]| ids.iter().map(u32::to_string).collect::<Vec<_>>();
    let h: Vec<Vec<String>> = hyps.iter().map(|x| words(x)).collect();
    let r: Vec<Vec<String>> = refs.map(words).collect();
    Ok(corpus_bleu(&h, &r)?)
}

/// Greedy outputs for every example source.
pub fn generate_all(params: &Params<f32>, examples: &[Example], max_len: usize) -> Result<Vec<Vec<u32>>> {
    examples
        .iter()
        .map(|e| greedy_generate(params, &e.src, max_len))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub validation_bleu: f64,
    pub validation_f1: Option<f64>,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters with the highest validation BLEU (earliest on ties).
    pub best: Checkpoint<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub final_params: Params<f32>,
}

/// Mean token loss of a batch and its gradient (no dropout when `rng` is `None`).
pub fn batch_gradients(
    params: &Params<f32>,
    batch: &[&Example],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Grads<f32>)> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let framed: Vec<(Vec<u32>, Vec<u32>)> = batch.iter().map(|e| teacher_forcing(&e.tgt)).collect();
    let tokens: usize = framed
        .iter()
        .map(|(_, out)| out.iter().filter(|&&t| t != PAD_ID).count())
        .sum();
    let weight = 1.0 / tokens as f64;
    let mut grads = Grads::zeros_like(params);
    let mut runner = match rng {
        Some(rng) => Runner::train(params, rng),
        None => Runner::eval(params),
    };
    let mut sum = 0.0;
    for (e, (input, output)) in batch.iter().zip(&framed) {
        sum += accumulate(&mut runner, &e.src, input, output, weight, &mut grads)?;
    }
    Ok((sum / tokens as f64, grads))
}

/// Mean token loss over a set of examples, without dropout.
pub fn mean_loss(params: &Params<f32>, examples: &[Example]) -> Result<f64> {
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for e in examples {
        let (input, output) = teacher_forcing(&e.tgt);
        let logits = crate::transformer::forward(params, &e.src, &input)?;
        let n = output.iter().filter(|&&t| t != PAD_ID).count();
        sum += crate::transformer::nll_loss(&logits, &output)? as f64 * n as f64;
        tokens += n;
    }
    Ok(sum / tokens.max(1) as f64)
}

/// Trains from `init`, validating at the end of every epoch (and after the
/// last step when a step budget ends mid-epoch).
pub fn fit(
    init: Params<f32>,
    train: &[Example],
    valid: &[Example],
    config: &TrainConfig,
    scorer: &dyn Scorer,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let total = config.total_steps(train.len());
    let per_epoch = config.steps_per_epoch(train.len());
    let mut params = init;
    let mut adam = Adam::new(params.data.len(), config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);

    let start = Instant::now();
    let mut history = Vec::new();
    let mut step_losses = Vec::with_capacity(total);
    let mut best: Option<(Checkpoint<f32>, usize)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;
    let mut epoch = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    while step < total {
        epoch += 1;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size).take(per_epoch) {
            if step >= total {
                break;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(&params, &batch, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { step, loss });
            }
            if let Some(clip) = config.clip_norm {
                let norm = grads.norm();
                if norm > clip {
                    grads.scale((clip / norm) as f32);
                }
            }
            lr = lr_at(step, total, config)?;
            adam.step(&mut params.data, &grads.data, lr);
            step_losses.push(loss);
            epoch_loss += loss;
            epoch_steps += 1;
            step += 1;
        }

        let hyps = generate_all(&params, valid, config.max_decode_len)?;
        let scores = scorer.score(&hyps, valid)?;
        let record = EpochRecord {
            epoch,
            steps: step,
            mean_loss: epoch_loss / epoch_steps.max(1) as f64,
            validation_bleu: scores.bleu,
            validation_f1: scores.entity_f1,
            lr,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} step {} loss {:.4} valid BLEU {:.3}",
            record.epoch,
            record.steps,
            record.mean_loss,
            record.validation_bleu
        );
        on_epoch(&record);
        let improved = best.as_ref().is_none_or(|(b, _)| scores.bleu > b.validation_bleu);
        if improved {
            best = Some((
                Checkpoint {
                    params: params.clone(),
                    vocab_hash: String::new(),
                    step,
                    validation_bleu: scores.bleu,
                },
                epoch,
            ));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(record);
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }

    let (best, best_epoch) = best.expect("at least one validation");
    Ok(FitOutcome {
        best,
        best_epoch,
        history,
        step_losses,
        final_params: params,
    })
}
