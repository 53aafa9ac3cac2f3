use fragforge_lm::model::{Model, ModelConfig, Sequence};
use fragforge_lm::tokenizer::{train_bpe, Vocab, LIGAND};
use fragforge_lm::train::{finetune, loss_weights, mean_nll, nll, train_clm, LossMask, TrainOptions};
use fragforge_lm::{generate, sample_next, Checkpoint, SamplingParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const RECORDS: &[&str] = &[
    "<p1>CC<p2>CO<L>CCOCC",
    "<p1>c1ccccc1<L>Cc1ccccc1",
    "<L>CCN",
    "<p1>C1CCNCC1<p2>NC(=O)C<L>CC(=O)NC1CCNCC1",
    "<p1>CO<L>COc1ccncc1",
];

fn vocab() -> Vocab {
    train_bpe(RECORDS, 40).unwrap()
}

fn small() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        context_len: 48,
        dropout: 0.1,
        seed: 3,
    }
}

fn opts(epochs: usize, lr: f64) -> TrainOptions {
    TrainOptions {
        epochs,
        lr,
        batch_size: 4,
        seed: 11,
        ..TrainOptions::default()
    }
}

#[test]
fn untrained_nll_is_near_uniform() {
    let v = vocab();
    let ck = Checkpoint::new(small(), v.clone()).unwrap();
    let uniform = (v.len() as f64).ln();
    for r in RECORDS {
        let x = nll(&ck.model, &v, r).unwrap();
        assert!((x - uniform).abs() < 0.1 * uniform, "{r}: {x} vs {uniform}");
        assert_eq!(x, nll(&ck.model, &v, r).unwrap());
    }
}

#[test]
fn first_step_loss_is_near_uniform() {
    let v = vocab();
    let (_, report) = train_clm(RECORDS, &v, small(), &opts(1, 1e-3)).unwrap();
    let uniform = (v.len() as f64).ln();
    assert!((report.steps[0].loss - uniform).abs() < 0.1 * uniform);
}

#[test]
fn training_is_deterministic() {
    let v = vocab();
    let a = train_clm(RECORDS, &v, small(), &opts(3, 1e-3)).unwrap();
    let b = train_clm(RECORDS, &v, small(), &opts(3, 1e-3)).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.model.params, b.0.model.params);
}

#[test]
fn zero_learning_rate_keeps_the_curve_flat() {
    let mut c = small();
    c.dropout = 0.0;
    let v = vocab();
    let (ck, report) = train_clm(RECORDS, &v, c.clone(), &opts(3, 0.0)).unwrap();
    assert_eq!(ck.model.params, Model::<f32>::new(c, v.len()).unwrap().params);
    let e = &report.epoch_losses;
    assert!(e.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9), "{e:?}");
}

#[test]
fn zero_epoch_finetune_is_identity() {
    let v = vocab();
    let (ck, _) = train_clm(RECORDS, &v, small(), &opts(1, 1e-3)).unwrap();
    let (tuned, report) = finetune(&ck, RECORDS, &opts(0, 1e-3)).unwrap();
    assert!(report.steps.is_empty());
    let ids = v.encode(RECORDS[3]);
    assert_eq!(
        ck.model.distributions(&ids).unwrap(),
        tuned.model.distributions(&ids).unwrap()
    );
}

#[test]
fn training_reduces_loss() {
    let v = vocab();
    let (ck, _) = train_clm(RECORDS, &v, small(), &opts(40, 3e-3)).unwrap();
    let fresh = Checkpoint::new(small(), v.clone()).unwrap();
    let before = mean_nll(&fresh.model, &v, RECORDS, 8).unwrap();
    let after = mean_nll(&ck.model, &v, RECORDS, 8).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn overlong_records_are_skipped() {
    let v = vocab();
    let mut c = small();
    let longest = RECORDS.iter().map(|r| v.encode(r).len()).max().unwrap();
    c.context_len = longest - 2;
    let (_, report) = train_clm(RECORDS, &v, c, &opts(1, 1e-3)).unwrap();
    assert!(report.skipped > 0 && report.skipped < RECORDS.len(), "{}", report.skipped);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let v = vocab();
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(2, 1e-3);
    o.out_dir = Some(dir.path().to_path_buf());
    let (ck, report) = train_clm(RECORDS, &v, small(), &o).unwrap();
    let loaded = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.step, ck.step);
    assert_eq!(loaded.optimizer, ck.optimizer);
    assert_eq!(loaded.vocab_hash(), ck.vocab_hash());
    let ids = v.encode(RECORDS[0]);
    let a = ck.model.distributions(&ids).unwrap();
    let b = loaded.model.distributions(&ids).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));

    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), report.steps.len());
}

#[test]
fn tampered_vocab_is_rejected() {
    let v = vocab();
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::new(small(), v).unwrap().save(dir.path()).unwrap();
    std::fs::write(dir.path().join("vocab.sha256"), "00\n").unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}

#[test]
fn greedy_generation_is_repeatable() {
    let v = vocab();
    let (ck, _) = train_clm(RECORDS, &v, small(), &opts(5, 1e-3)).unwrap();
    let p = SamplingParams {
        top_k: 1,
        temperature: 0.0,
        max_new_tokens: 20,
        seed: 1,
        ..SamplingParams::default()
    };
    let prompts = ["<p1>CC<p2>CO<L>", "<L>"];
    let a = generate(&ck.model, &v, &prompts, &p).unwrap();
    let b = generate(&ck.model, &v, &prompts, &SamplingParams { seed: 99, ..p }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sampling_is_independent_of_batch_composition() {
    let v = vocab();
    let ck = Checkpoint::new(small(), v.clone()).unwrap();
    let p = SamplingParams {
        max_new_tokens: 12,
        seed: 5,
        ..SamplingParams::default()
    };
    let pair = generate(&ck.model, &v, &["<L>", "<p1>CO<L>"], &p).unwrap();
    let solo = generate(&ck.model, &v, &["<L>"], &p).unwrap();
    assert_eq!(pair[0], solo[0]);
}

#[test]
fn zero_token_budget_gives_empty_completions() {
    let v = vocab();
    let ck = Checkpoint::new(small(), v.clone()).unwrap();
    let p = SamplingParams {
        max_new_tokens: 0,
        ..SamplingParams::default()
    };
    let out = generate(&ck.model, &v, &["<p1>CC<L>"; 3], &p).unwrap();
    assert!(out.iter().all(|c| c.text.is_empty() && c.tokens.is_empty()));
}

#[test]
fn prompts_must_end_with_the_ligand_marker() {
    let v = vocab();
    let ck = Checkpoint::new(small(), v.clone()).unwrap();
    assert!(generate(&ck.model, &v, &["<p1>CC"], &SamplingParams::default()).is_err());
}

#[test]
fn unrestricted_sampling_matches_softmax() {
    // Two-token toy model: compare 10k draws against its own distribution.
    let c = ModelConfig {
        n_layers: 1,
        n_heads: 1,
        d_model: 8,
        d_ff: 8,
        context_len: 4,
        dropout: 0.0,
        seed: 21,
    };
    let m = Model::<f32>::with_init_scale(c, 2, 0.5).unwrap();
    let mut cache = vec![m.new_cache()];
    let probs = m.step(&[0], &mut cache).unwrap();
    let p1 = f64::from(probs[1]);
    assert!(p1 > 0.05 && p1 < 0.95, "{p1}");
    let params = SamplingParams {
        top_k: 2,
        top_p: 1.0,
        temperature: 1.0,
        ..SamplingParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let ones = (0..n).filter(|_| sample_next(&probs, &params, &mut rng) == 1).count();
    let sigma = (n as f64 * p1 * (1.0 - p1)).sqrt();
    assert!((ones as f64 - n as f64 * p1).abs() < 3.0 * sigma, "{ones} vs {}", n as f64 * p1);
}

#[test]
fn masked_weights_follow_the_marker() {
    let v = vocab();
    let ids = v.encode(RECORDS[0]);
    let l = ids.iter().position(|&t| t == LIGAND).unwrap();
    let w = loss_weights(&ids, LossMask::TargetOnly);
    assert_eq!(w.len(), ids.len() - 1);
    assert!(w[..l].iter().all(|&x| x == 0.0));
    assert!(w[l..].iter().all(|&x| x == 1.0));
    assert!(loss_weights(&ids, LossMask::Full).iter().all(|&x| x == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_stay_inside_the_top_k(
        raw in prop::collection::vec(0.001f32..1.0, 2..20),
        k in 1usize..6,
        p in 0.05f64..1.0,
        t in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let total: f32 = raw.iter().sum();
        let probs: Vec<f32> = raw.iter().map(|x| x / total).collect();
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let allowed = &order[..k.min(probs.len())];
        let params = SamplingParams { top_k: k, top_p: p, temperature: t, ..SamplingParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_next(&probs, &params, &mut rng) as usize;
        prop_assert!(allowed.contains(&x));
    }

    #[test]
    fn distributions_sum_to_one(ids in prop::collection::vec(0u32..40, 1..20), seed in 0u64..4) {
        let mut c = small();
        c.seed = seed;
        let m = Model::<f32>::with_init_scale(c, 40, 0.3).unwrap();
        let probs = m.distributions(&ids).unwrap();
        for row in probs.chunks(40) {
            let s: f64 = row.iter().map(|&x| f64::from(x)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn later_tokens_never_change_earlier_outputs(
        ids in prop::collection::vec(0u32..40, 2..16),
        cut in 1usize..15,
        fill in 0u32..40,
    ) {
        let cut = cut.min(ids.len() - 1);
        let m = Model::<f32>::with_init_scale(small(), 40, 0.3).unwrap();
        let mut other = ids.clone();
        for t in &mut other[cut..] {
            *t = fill;
        }
        let a = m.distributions(&ids).unwrap();
        let b = m.distributions(&other).unwrap();
        prop_assert_eq!(&a[..cut * 40], &b[..cut * 40]);
    }

    #[test]
    fn batching_does_not_change_losses(a in prop::collection::vec(0u32..40, 2..12), b in prop::collection::vec(0u32..40, 2..12)) {
        let m = Model::<f64>::with_init_scale(small(), 40, 0.3).unwrap();
        let wa = vec![1.0f32; a.len() - 1];
        let wb = vec![1.0f32; b.len() - 1];
        let sa = Sequence { ids: &a, weights: &wa };
        let sb = Sequence { ids: &b, weights: &wb };
        let (joint, _) = m.forward(&[sa.clone(), sb.clone()], None).unwrap();
        let (solo, _) = m.forward(&[sb], None).unwrap();
        prop_assert!((joint.per_sequence[1].0 - solo.per_sequence[0].0).abs() < 1e-9);
    }
}
