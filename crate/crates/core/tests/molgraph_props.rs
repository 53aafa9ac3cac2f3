use fragforge_core::molgraph::{is_isomorphic, parse_smiles, write_smiles, MolecularGraph};
use fragforge_core::toygen::{random_graph, random_molecule, ToyGenOptions};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Same molecule with atoms renumbered by `perm`.
fn permuted(g: &MolecularGraph, rng: &mut ChaCha8Rng) -> MolecularGraph {
    let mut order: Vec<usize> = (0..g.atom_count()).collect();
    order.shuffle(rng);
    let mut pos = vec![0; order.len()];
    let mut out = MolecularGraph::new();
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
        out.add_atom(g.atom(old).clone());
    }
    let mut bonds: Vec<_> = g.bonds().to_vec();
    bonds.shuffle(rng);
    for b in bonds {
        out.add_bond(pos[b.a], pos[b.b], b.order).unwrap();
    }
    out.sanitize().unwrap();
    out
}

fn molecule(seed: u64) -> MolecularGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed.is_multiple_of(2) {
        random_molecule(&mut rng, &ToyGenOptions::default())
    } else {
        random_graph(&mut rng, 24)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parse_write_parse_is_isomorphic(seed in any::<u64>()) {
        let text = write_smiles(&molecule(seed));
        let once = parse_smiles(&text).unwrap();
        let twice = parse_smiles(&write_smiles(&once)).unwrap();
        prop_assert!(is_isomorphic(&once, &twice), "{}", text);
        prop_assert_eq!(write_smiles(&twice), write_smiles(&once));
    }

    #[test]
    fn canonical_form_ignores_atom_order(seed in any::<u64>()) {
        let g = parse_smiles(&write_smiles(&molecule(seed))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let h = permuted(&g, &mut rng);
        prop_assert_eq!(write_smiles(&h), write_smiles(&g));
    }

    #[test]
    fn valences_hold_after_parsing(seed in any::<u64>()) {
        let g = parse_smiles(&write_smiles(&molecule(seed))).unwrap();
        prop_assert!(g.check_valences().is_ok());
        prop_assert!(g.check_aromaticity().is_ok());
    }
}
