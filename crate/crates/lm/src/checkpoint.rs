//! On-disk checkpoints: a directory holding the model config, the vocabulary
//! and its hash, raw little-endian parameters and Adam moments, plus the
//! training log appended by the trainer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tokenizer::Vocab;
use crate::ModelError;

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const VOCAB_HASH_FILE: &str = "vocab.sha256";
pub const PARAMS_FILE: &str = "params.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const LOG_FILE: &str = "train_log.jsonl";

/// First and second moment estimates of Adam, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocab,
    pub optimizer: AdamState,
    /// Optimizer steps taken so far.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab_size: usize,
    num_params: usize,
    step: u64,
    adam_t: u64,
}

fn to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

fn from_bytes(bytes: &[u8], expected: usize, what: &str) -> Result<Vec<f32>, ModelError> {
    if bytes.len() != expected * f32::BYTES {
        return Err(ModelError::Checkpoint(format!(
            "{what}: expected {} bytes, found {}",
            expected * f32::BYTES,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(f32::BYTES).map(f32::read_le).collect())
}

impl Checkpoint {
    /// Freshly initialized model for `vocab`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        let model = Model::new(config, vocab.len())?;
        let optimizer = AdamState::new(model.num_params());
        Ok(Checkpoint {
            model,
            vocab,
            optimizer,
            step: 0,
        })
    }

    pub fn vocab_hash(&self) -> String {
        self.vocab.hash()
    }

    /// Writes every file except the training log, creating `dir` if needed.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let header = Header {
            model: self.model.config.clone(),
            vocab_size: self.model.vocab_size,
            num_params: self.model.num_params(),
            step: self.step,
            adam_t: self.optimizer.t,
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(dir.join(CONFIG_FILE), json + "\n")?;
        fs::write(dir.join(VOCAB_FILE), self.vocab.to_text())?;
        fs::write(dir.join(VOCAB_HASH_FILE), self.vocab_hash() + "\n")?;
        fs::write(dir.join(PARAMS_FILE), to_bytes(&self.model.params))?;
        let mut opt = to_bytes(&self.optimizer.m);
        opt.extend(to_bytes(&self.optimizer.v));
        fs::write(dir.join(OPTIMIZER_FILE), opt)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let header: Header = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)
            .map_err(|e| ModelError::Checkpoint(format!("{CONFIG_FILE}: {e}")))?;
        let vocab = Vocab::from_text(&fs::read_to_string(dir.join(VOCAB_FILE))?)?;
        let recorded = fs::read_to_string(dir.join(VOCAB_HASH_FILE))?;
        if recorded.trim() != vocab.hash() {
            return Err(ModelError::Checkpoint("vocabulary does not match its recorded hash".into()));
        }
        if vocab.len() != header.vocab_size {
            return Err(ModelError::Checkpoint(format!(
                "model expects {} tokens, vocabulary has {}",
                header.vocab_size,
                vocab.len()
            )));
        }
        let params = from_bytes(&fs::read(dir.join(PARAMS_FILE))?, header.num_params, PARAMS_FILE)?;
        let model = Model::from_params(header.model, header.vocab_size, params)?;
        let opt = fs::read(dir.join(OPTIMIZER_FILE))?;
        let mut moments = from_bytes(&opt, 2 * header.num_params, OPTIMIZER_FILE)?;
        let v = moments.split_off(header.num_params);
        Ok(Checkpoint {
            model,
            vocab,
            optimizer: AdamState {
                m: moments,
                v,
                t: header.adam_t,
            },
            step: header.step,
        })
    }
}
