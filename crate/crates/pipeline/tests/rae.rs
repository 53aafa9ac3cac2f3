mod support;

use std::collections::BTreeSet;

use fragforge::rae::{
    mutate, prompt_pool, ExpertPolicy, HighTempExpert, MutateExpert, Parent, Rae, RaeConfig, RaeError,
    SubprocessExpert,
};
use fragforge_core::molgraph::{canonicalize, parse_smiles, write_smiles};
use fragforge_core::rewards::Source;
use fragforge_core::toygen::{random_molecule, ToyGenOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{critics, fixture};

fn desk(iterations: usize, experts: &[&str]) -> RaeConfig {
    let mut c = RaeConfig {
        iterations,
        molecules_per_iteration: 24,
        dataset_size: 24,
        experts: experts.iter().map(|s| s.to_string()).collect(),
        seed: 9,
        ..RaeConfig::default()
    };
    c.sampling.max_new_tokens = 40;
    c.finetune.lr = 1e-3;
    c
}

#[test]
fn mutations_of_ethane_are_single_edits() {
    let neighbours: BTreeSet<String> = ["CN", "CO", "CS", "CF", "CCl", "C=C", "CCC", "CCN", "CCO", "CCF", "CCCl"]
        .iter()
        .map(|s| canonicalize(s).unwrap())
        .collect();
    let g = parse_smiles("CC").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = BTreeSet::new();
    for _ in 0..400 {
        let m = mutate(&g, &mut rng).unwrap();
        assert!(neighbours.contains(&m), "{m}");
        seen.insert(m);
    }
    assert_eq!(seen, neighbours);
}

#[test]
fn benzene_can_still_grow() {
    let g = parse_smiles("c1ccccc1").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = mutate(&g, &mut rng).unwrap();
        assert_ne!(m, "c1ccccc1");
        assert_eq!(parse_smiles(&m).unwrap().heavy_atom_count(), 7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mutate_yields_a_different_valid_molecule(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_molecule(&mut rng, &ToyGenOptions::default());
        if let Some(m) = mutate(&g, &mut rng) {
            let back = parse_smiles(&m).unwrap();
            back.check_valences().unwrap();
            prop_assert_ne!(write_smiles(&back), write_smiles(&g));
            prop_assert_eq!(write_smiles(&back), m);
        }
    }
}

#[test]
fn config_round_trips_through_toml() {
    let text = r#"
        iterations = 3
        molecules_per_iteration = 64
        experts = ["mutate"]
        seed = 4

        [sampling]
        top_k = 10
        top_p = 0.85

        [finetune]
        epochs = 2
        loss_mask = "full"
    "#;
    let c = RaeConfig::from_toml(text).unwrap();
    assert_eq!(c.iterations, 3);
    assert_eq!(c.sampling.top_k, 10);
    assert_eq!(c.finetune.epochs, 2);
    assert_eq!(c.dataset_size, RaeConfig::default().dataset_size);
    assert!(RaeConfig::from_toml("iterations = 0").is_err());
    assert!(RaeConfig::from_toml("molecules_per_iteration = 0").is_err());
    assert!(RaeConfig::from_toml("bogus = 1").is_err());
    let again = RaeConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
    assert_eq!(again, c);
}

#[test]
fn hightemp_needs_the_learner() {
    let parents = [Parent {
        smiles: "CCO".into(),
        prompt: "<p1>CC<L>".into(),
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = HighTempExpert::default().propose(&parents, 2, None, &mut rng).unwrap_err();
    assert!(matches!(err, RaeError::LearnerRequired(_)));
}

#[test]
fn subprocess_expert_speaks_the_line_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("expert.sh");
    std::fs::write(&script, "#!/bin/sh\nawk -F'\\t' '{ print $2 \"C\\t\" $2 \"N\" }'\n").unwrap();
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let mut e = SubprocessExpert::from_command(script.to_str().unwrap()).unwrap();
    let parents: Vec<Parent> = ["CCO", "c1ccccc1"]
        .iter()
        .map(|s| Parent {
            smiles: s.to_string(),
            prompt: "<L>".into(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = e.propose(&parents, 2, None, &mut rng).unwrap();
    assert_eq!(out, vec![vec!["CCOC", "CCON"], vec!["c1ccccc1C", "c1ccccc1N"]]);
    let out = e.propose(&parents, 1, None, &mut rng).unwrap();
    assert_eq!(out[0], vec!["CCOC"]);
}

#[test]
fn mutate_expert_proposes_per_parent() {
    let parents: Vec<Parent> = ["CCO", "c1ccccc1", "not a molecule"]
        .iter()
        .map(|s| Parent {
            smiles: s.to_string(),
            prompt: "<L>".into(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = MutateExpert.propose(&parents, 3, None, &mut rng).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[0].len(), 3);
    assert!(out[2].is_empty());
}

#[test]
fn without_experts_the_buffer_holds_learner_molecules_only() {
    let f = fixture();
    let pool = prompt_pool(&f.records);
    let critics = critics(&f.molecules);
    let config = desk(1, &[]);
    let mut rae = Rae::new(config.clone(), &pool, &critics, Vec::new()).unwrap();
    let mut state = rae.initial_state(f.checkpoint.clone()).unwrap();
    assert!(state.dataset.iter().all(|m| m.source == Source::Seed));
    let m = rae.run_iteration(&mut state).unwrap();
    assert_eq!(m.expert_added, 0);
    assert!(state.buffer.entries().iter().all(|m| m.source == Source::Learner));
    assert_eq!(m.buffer_size, m.learner_unique);
    assert!(m.valid > 0);
    assert!(m.buffer_size <= config.molecules_per_iteration);
}

#[test]
fn buffer_size_respects_the_counting_bound() {
    let f = fixture();
    let pool = prompt_pool(&f.records);
    let critics = critics(&f.molecules);
    let mut config = desk(1, &["mutate", "hightemp"]);
    config.variants_per_molecule = 2;
    let experts = Rae::configured_experts(&config).unwrap();
    let e = experts.len();
    let mut rae = Rae::new(config.clone(), &pool, &critics, experts).unwrap();
    let mut state = rae.initial_state(f.checkpoint.clone()).unwrap();
    let m = rae.run_iteration(&mut state).unwrap();
    let k = config.molecules_per_iteration;
    assert!(m.buffer_size <= k * (1 + e * config.variants_per_molecule));
    assert!(m.expert_added > 0);
    let smiles: BTreeSet<&str> = state.buffer.entries().iter().map(|m| m.smiles.as_str()).collect();
    assert_eq!(smiles.len(), state.buffer.len());
}

#[test]
fn experts_only_add_molecules() {
    let f = fixture();
    let pool = prompt_pool(&f.records);
    let critics = critics(&f.molecules);
    let run = |experts: &[&str]| {
        let config = desk(1, experts);
        let ex = Rae::configured_experts(&config).unwrap();
        let mut rae = Rae::new(config, &pool, &critics, ex).unwrap();
        let mut state = rae.initial_state(f.checkpoint.clone()).unwrap();
        rae.run_iteration(&mut state).unwrap();
        state.buffer.entries().iter().map(|m| m.smiles.clone()).collect::<BTreeSet<_>>()
    };
    let plain = run(&[]);
    let with = run(&["mutate", "hightemp"]);
    assert!(plain.is_subset(&with));
    assert!(with.len() > plain.len());
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let f = fixture();
    let pool = prompt_pool(&f.records);
    let critics = critics(&f.molecules);
    let go = |iterations: usize, dir: Option<&std::path::Path>, resume: bool| {
        let config = desk(iterations, &["mutate"]);
        let ex = Rae::configured_experts(&config).unwrap();
        let mut rae = Rae::new(config, &pool, &critics, ex).unwrap();
        rae.run(f.checkpoint.clone(), dir, resume).unwrap()
    };
    let straight = go(3, None, false);
    assert_eq!(straight.metrics.len(), 3);
    assert_eq!(straight.iteration, 3);
    let again = go(3, None, false);
    assert_eq!(again.metrics, straight.metrics);

    let dir = tempfile::tempdir().unwrap();
    let first = go(2, Some(dir.path()), false);
    assert_eq!(first.metrics[..], straight.metrics[..2]);
    let resumed = go(3, Some(dir.path()), true);
    assert_eq!(resumed.metrics, straight.metrics);
    assert_eq!(resumed.dataset, straight.dataset);
    let logged = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(logged.lines().count(), 3);

    let one = go(1, None, false);
    assert_eq!(one.metrics[..], straight.metrics[..1]);
}
