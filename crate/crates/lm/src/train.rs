//! Causal language-model training with Adam and global-norm clipping.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{AdamState, Checkpoint, LOG_FILE};
use crate::model::{Model, ModelConfig, Sequence};
use crate::tokenizer::{ligand_position, Vocab};
use crate::ModelError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    /// Every next-token prediction counts.
    Full,
    /// Only predictions of tokens after `<L>` count.
    TargetOnly,
}

impl FromStr for LossMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(LossMask::Full),
            "target_only" | "target-only" => Ok(LossMask::TargetOnly),
            other => Err(format!("unknown loss mask `{other}` (expected full or target_only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss_mask: LossMask,
    pub clip_norm: f64,
    /// Seeds shuffling and dropout.
    pub seed: u64,
    /// When set, the checkpoint is written here after every epoch and each
    /// step's loss is appended to its training log.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 1,
            lr: 5e-5,
            batch_size: 24,
            loss_mask: LossMask::TargetOnly,
            clip_norm: 1.0,
            seed: 0,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    /// Weighted mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Records dropped for not fitting the context window.
    pub skipped: usize,
}

/// Token ids plus per-prediction weights for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub weights: Vec<f32>,
}

/// Loss weights for predicting `ids[1..]`. Under `TargetOnly` a record with
/// no `<L>` marker is weighted in full.
pub fn loss_weights(ids: &[u32], mask: LossMask) -> Vec<f32> {
    let n = ids.len().saturating_sub(1);
    match (mask, ligand_position(ids)) {
        (LossMask::TargetOnly, Some(l)) => (0..n).map(|t| if t + 1 > l { 1.0 } else { 0.0 }).collect(),
        _ => vec![1.0; n],
    }
}

/// Encodes records, dropping those longer than the context window.
pub fn encode_records<S: AsRef<str>>(
    texts: &[S],
    vocab: &Vocab,
    context_len: usize,
    mask: LossMask,
) -> (Vec<Encoded>, usize) {
    let mut out = Vec::with_capacity(texts.len());
    let mut skipped = 0;
    for t in texts {
        let ids = vocab.encode(t.as_ref());
        if ids.len() - 1 > context_len {
            log::warn!(
                "skipping record of {} tokens (context {context_len}): {}",
                ids.len(),
                t.as_ref()
            );
            skipped += 1;
            continue;
        }
        let weights = loss_weights(&ids, mask);
        out.push(Encoded { ids, weights });
    }
    (out, skipped)
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let (b1, b2) = (BETA1 as f32, BETA2 as f32);
    let step = (lr / c1) as f32;
    let c2 = c2 as f32;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        params[i] -= step * state.m[i] / ((state.v[i] / c2).sqrt() + ADAM_EPS as f32);
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Trains a fresh model on serialized records.
pub fn train_clm<S: AsRef<str>>(
    texts: &[S],
    vocab: &Vocab,
    config: ModelConfig,
    opts: &TrainOptions,
) -> Result<(Checkpoint, TrainReport), ModelError> {
    let mut ckpt = Checkpoint::new(config, vocab.clone())?;
    let report = train_epochs(&mut ckpt, texts, opts)?;
    Ok((ckpt, report))
}

/// Continues training an existing checkpoint; the input is left untouched.
pub fn finetune<S: AsRef<str>>(
    ckpt: &Checkpoint,
    texts: &[S],
    opts: &TrainOptions,
) -> Result<(Checkpoint, TrainReport), ModelError> {
    let mut out = ckpt.clone();
    let report = train_epochs(&mut out, texts, opts)?;
    Ok((out, report))
}

/// Runs `opts.epochs` passes over `texts`, updating `ckpt` in place.
pub fn train_epochs<S: AsRef<str>>(
    ckpt: &mut Checkpoint,
    texts: &[S],
    opts: &TrainOptions,
) -> Result<TrainReport, ModelError> {
    if !(opts.lr >= 0.0 && opts.lr.is_finite()) {
        return Err(ModelError::Config(format!("learning rate must be non-negative, got {}", opts.lr)));
    }
    if opts.batch_size == 0 {
        return Err(ModelError::Config("batch size must be positive".into()));
    }
    let (data, skipped) = encode_records(texts, &ckpt.vocab, ckpt.model.config.context_len, opts.loss_mask);
    let mut report = TrainReport {
        skipped,
        ..TrainReport::default()
    };
    if skipped > 0 {
        log::warn!("{skipped} records exceed the context window and were skipped");
    }
    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?)
        }
        None => None,
    };

    // Offsetting by the step count keeps resumed runs from replaying the
    // shuffles of earlier ones.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ckpt.step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0f32; ckpt.model.num_params()];
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_weight) = (0.0, 0.0);
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<Sequence<'_>> = chunk
                .iter()
                .map(|&i| Sequence {
                    ids: &data[i].ids,
                    weights: &data[i].weights,
                })
                .collect();
            let (loss, cache) = ckpt.model.forward(&batch, Some(&mut rng))?;
            let weight: f64 = loss.per_sequence.iter().map(|p| p.1).sum();
            if weight == 0.0 {
                continue;
            }
            grads.fill(0.0);
            ckpt.model.backward(&cache, &mut grads);
            clip_global_norm(&mut grads, opts.clip_norm);
            adam_step(&mut ckpt.model.params, &grads, &mut ckpt.optimizer, opts.lr);
            ckpt.step += 1;
            epoch_loss += loss.mean * weight;
            epoch_weight += weight;
            let entry = StepLog {
                step: ckpt.step,
                epoch,
                loss: loss.mean,
            };
            log::debug!("step {} epoch {} loss {:.4}", entry.step, epoch, entry.loss);
            if let Some(f) = log_file.as_mut() {
                let line = serde_json::to_string(&entry).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
                writeln!(f, "{line}")?;
            }
            report.steps.push(entry);
        }
        let mean = if epoch_weight > 0.0 { epoch_loss / epoch_weight } else { 0.0 };
        log::info!("epoch {} mean loss {:.4}", epoch + 1, mean);
        report.epoch_losses.push(mean);
        if let Some(dir) = &opts.out_dir {
            ckpt.save(dir)?;
        }
    }
    Ok(report)
}

/// Teacher-forced NLL of a record's target segment in nats per token
/// (the `[EOS]` prediction included).
pub fn nll(model: &Model<f32>, vocab: &Vocab, text: &str) -> Result<f64, ModelError> {
    let ids = vocab.encode(text);
    let weights = loss_weights(&ids, LossMask::TargetOnly);
    let (loss, _) = model.forward(
        &[Sequence {
            ids: &ids,
            weights: &weights,
        }],
        None,
    )?;
    Ok(loss.mean)
}

/// Mean target NLL over many records, batched.
pub fn mean_nll<S: AsRef<str>>(model: &Model<f32>, vocab: &Vocab, texts: &[S], batch_size: usize) -> Result<f64, ModelError> {
    let (data, _) = encode_records(texts, vocab, model.config.context_len, LossMask::TargetOnly);
    let (mut total, mut weight) = (0.0, 0.0);
    for chunk in data.chunks(batch_size.max(1)) {
        let batch: Vec<Sequence<'_>> = chunk
            .iter()
            .map(|e| Sequence {
                ids: &e.ids,
                weights: &e.weights,
            })
            .collect();
        let (loss, _) = model.forward(&batch, None)?;
        for (l, w) in loss.per_sequence {
            total += l;
            weight += w;
        }
    }
    Ok(if weight > 0.0 { total / weight } else { 0.0 })
}
