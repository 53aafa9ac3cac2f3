#![allow(dead_code)]

use std::sync::OnceLock;

use fragforge_core::corpus::{build_corpus, CorpusOptions, CorpusRecord};
use fragforge_core::critics::{Critics, HeuristicOracle, SaModel};
use fragforge_core::molgraph::parse_smiles;
use fragforge_core::toygen::{toy_corpus, ToyGenOptions};
use fragforge_lm::{train_bpe, train_clm, Checkpoint, ModelConfig, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub molecules: Vec<String>,
    pub records: Vec<CorpusRecord>,
    pub checkpoint: Checkpoint,
}

/// A small learner trained just long enough to emit some valid molecules.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = ToyGenOptions {
            max_blocks: 3,
            ..ToyGenOptions::default()
        };
        let molecules = toy_corpus(&mut rng, 300, &opts);
        let (records, _) = build_corpus(&molecules, &CorpusOptions::default(), &mut rng).unwrap();
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        let vocab = train_bpe(&texts, 96).unwrap();
        let config = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 48,
            d_ff: 96,
            context_len: 64,
            dropout: 0.0,
            seed: 1,
        };
        let train = TrainOptions {
            epochs: 12,
            lr: 3e-3,
            batch_size: 16,
            seed: 2,
            ..TrainOptions::default()
        };
        let (checkpoint, _) = train_clm(&texts, &vocab, config, &train).unwrap();
        Fixture {
            molecules,
            records,
            checkpoint,
        }
    })
}

pub fn critics(molecules: &[String]) -> Critics {
    let graphs: Vec<_> = molecules.iter().map(|m| parse_smiles(m).unwrap()).collect();
    Critics::new(SaModel::fit(&graphs), Box::new(HeuristicOracle))
}
