use fragforge_core::critics::{default_fingerprint, druglikeness, logp, tanimoto, HeuristicOracle, SaModel};
use fragforge_core::molgraph::{parse_smiles, write_smiles, MolecularGraph};
use fragforge_core::toygen::{random_molecule, toy_corpus, ToyGenOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn sa_model() -> &'static SaModel {
    static MODEL: OnceLock<SaModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let corpus: Vec<MolecularGraph> = toy_corpus(&mut ChaCha8Rng::seed_from_u64(0), 500, &ToyGenOptions::default())
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        SaModel::fit(&corpus)
    })
}

fn molecule(seed: u64) -> MolecularGraph {
    random_molecule(&mut ChaCha8Rng::seed_from_u64(seed), &ToyGenOptions::default())
}

/// Reverses the atom order by writing the graph from the other end.
fn respelled(g: &MolecularGraph) -> MolecularGraph {
    let mut out = MolecularGraph::new();
    let n = g.atom_count();
    for i in (0..n).rev() {
        out.add_atom(g.atom(i).clone());
    }
    for b in g.bonds().iter().rev() {
        out.add_bond(n - 1 - b.a, n - 1 - b.b, b.order).unwrap();
    }
    out.sanitize().unwrap();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn critics_ignore_spelling(seed in any::<u64>()) {
        let g = molecule(seed);
        let h = respelled(&g);
        prop_assert_eq!(write_smiles(&g), write_smiles(&h));
        prop_assert_eq!(default_fingerprint(&g), default_fingerprint(&h));
        prop_assert_eq!(logp(&g), logp(&h));
        prop_assert_eq!(druglikeness(&g), druglikeness(&h));
        prop_assert_eq!(sa_model().score(&g).unwrap(), sa_model().score(&h).unwrap());
        prop_assert_eq!(HeuristicOracle::score(&g), HeuristicOracle::score(&h));
    }

    #[test]
    fn tanimoto_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (default_fingerprint(&molecule(s1)), default_fingerprint(&molecule(s2)));
        let t = tanimoto(&a, &b).unwrap();
        prop_assert_eq!(t, tanimoto(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn longer_chains_are_never_easier(len in 1usize..40, branch in any::<bool>()) {
        let base = if branch { format!("CC(C){}", "C".repeat(len)) } else { "C".repeat(len) };
        let longer = format!("{base}{}", "C".repeat(10));
        let m = sa_model();
        let (a, b) = (m.score(&parse_smiles(&base).unwrap()).unwrap(), m.score(&parse_smiles(&longer).unwrap()).unwrap());
        prop_assert!(b >= a, "{} -> {}: {} vs {}", base, longer, a, b);
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>()) {
        let g = molecule(seed);
        let sa = sa_model().score(&g).unwrap();
        prop_assert!((1.0..=10.0).contains(&sa));
        prop_assert!((0.0..=1.0).contains(&druglikeness(&g)));
        prop_assert!((-14.0..=-6.0).contains(&HeuristicOracle::score(&g)));
    }
}
