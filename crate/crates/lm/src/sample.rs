//! Prompted autoregressive sampling with temperature, top-k and nucleus
//! truncation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::tokenizer::{Vocab, EOS, LIGAND};
use crate::ModelError;

/// Temperatures at or below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            top_k: 15,
            top_p: 0.9,
            temperature: 1.0,
            max_new_tokens: 128,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.top_k == 0 {
            return Err(ModelError::Config("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::Config("top_p must lie in (0, 1]".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draws one token from a next-token distribution.
pub fn sample_next(probs: &[f32], params: &SamplingParams, rng: &mut impl Rng) -> u32 {
    let argmax = || {
        probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i as u32)
    };
    if params.temperature <= GREEDY_TEMPERATURE || params.top_k == 1 {
        return argmax();
    }
    let inv_t = 1.0 / params.temperature;
    let max_log = probs.iter().map(|&p| f64::from(p).ln()).fold(f64::NEG_INFINITY, f64::max);
    let mut cand: Vec<(u32, f64)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as u32, ((f64::from(p).ln() - max_log) * inv_t).exp()))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cand.truncate(params.top_k);
    let total: f64 = cand.iter().map(|c| c.1).sum();
    if params.top_p < 1.0 {
        let mut acc = 0.0;
        let mut keep = cand.len();
        for (i, c) in cand.iter().enumerate() {
            acc += c.1 / total;
            if acc >= params.top_p {
                keep = i + 1;
                break;
            }
        }
        cand.truncate(keep);
    }
    let total: f64 = cand.iter().map(|c| c.1).sum();
    if cand.is_empty() || total <= 0.0 {
        return argmax();
    }
    let mut u = rng.random::<f64>() * total;
    for &(id, w) in &cand {
        if u < w {
            return id;
        }
        u -= w;
    }
    cand[cand.len() - 1].0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    /// Decoded text after `<L>`.
    pub text: String,
    pub tokens: Vec<u32>,
    /// True when `[EOS]` was produced; false when cut off by the token
    /// budget or the context window.
    pub finished: bool,
}

/// Completes each prompt once. Prompts must end in `<L>`. Sequence `i` draws
/// from its own random stream derived from `(params.seed, i)`, so results do
/// not depend on batch composition.
pub fn generate<S: AsRef<str>>(
    model: &Model<f32>,
    vocab: &Vocab,
    prompts: &[S],
    params: &SamplingParams,
) -> Result<Vec<Completion>, ModelError> {
    params.validate()?;
    let context = model.config.context_len;
    let mut encoded = Vec::with_capacity(prompts.len());
    for p in prompts {
        let mut ids = vocab.encode(p.as_ref());
        ids.pop(); // [EOS]
        if ids.last() != Some(&LIGAND) {
            return Err(ModelError::Input(format!("prompt must end with <L>: {}", p.as_ref())));
        }
        if ids.len() > context {
            return Err(ModelError::ContextOverflow {
                len: ids.len(),
                context,
            });
        }
        encoded.push(ids);
    }

    let mut out: Vec<Completion> = (0..prompts.len())
        .map(|_| Completion {
            text: String::new(),
            tokens: Vec::new(),
            finished: false,
        })
        .collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..prompts.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(params.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();

    let mut active: Vec<usize> = if params.max_new_tokens == 0 {
        Vec::new()
    } else {
        (0..prompts.len()).collect()
    };
    let mut caches: Vec<_> = active.iter().map(|_| model.new_cache()).collect();
    // Next token to feed for each active sequence.
    let mut feed: Vec<u32> = active.iter().map(|&i| encoded[i][0]).collect();
    while !active.is_empty() {
        let probs = model.step(&feed, &mut caches)?;
        let v = model.vocab_size;
        let mut keep = vec![true; active.len()];
        for (slot, &i) in active.iter().enumerate() {
            let pos = caches[slot].len();
            if pos < encoded[i].len() {
                feed[slot] = encoded[i][pos];
                continue;
            }
            let next = sample_next(&probs[slot * v..(slot + 1) * v], params, &mut rngs[i]);
            if next == EOS {
                out[i].finished = true;
                keep[slot] = false;
                continue;
            }
            out[i].tokens.push(next);
            feed[slot] = next;
            if out[i].tokens.len() >= params.max_new_tokens || pos >= context {
                keep[slot] = false;
            }
        }
        let mut slot = 0;
        active.retain(|_| {
            slot += 1;
            keep[slot - 1]
        });
        let mut slot = 0;
        caches.retain(|_| {
            slot += 1;
            keep[slot - 1]
        });
        let mut slot = 0;
        feed.retain(|_| {
            slot += 1;
            keep[slot - 1]
        });
    }
    for c in &mut out {
        c.text = vocab.decode(&c.tokens)?;
    }
    Ok(out)
}
