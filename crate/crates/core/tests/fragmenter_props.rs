mod common;

use fragforge_core::fragmenter::{
    cleave, find_mcs, make_grow_example, make_link_example, make_merge_example, mcs, merge_on_mcs, CleaveOptions,
    McsOptions,
};
use fragforge_core::molgraph::{parse_smiles, BondOrder, MolecularGraph};
use fragforge_core::toygen::{random_molecule, ToyGenOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn molecule(seed: u64, max_heavy: usize) -> MolecularGraph {
    let opts = ToyGenOptions {
        max_heavy_atoms: max_heavy,
        ..ToyGenOptions::default()
    };
    random_molecule(&mut ChaCha8Rng::seed_from_u64(seed), &opts)
}

#[test]
fn benzene_toluene_mcs_matches_enumeration() {
    let a = parse_smiles("c1ccccc1").unwrap();
    let b = parse_smiles("Cc1ccccc1").unwrap();
    assert_eq!(common::brute_force_mcs_size(&a, &b), 6);
    assert_eq!(mcs(&a, &b).unwrap().atom_count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cleave_partitions_and_skips_rings(seed in any::<u64>()) {
        let g = molecule(seed, 32);
        let fs = cleave(&g, &CleaveOptions::default());
        prop_assert!(!fs.is_empty() && fs.len() <= 3);
        let mut atoms = fs.atom_maps.concat();
        atoms.sort_unstable();
        prop_assert_eq!(atoms, (0..g.atom_count()).collect::<Vec<_>>());
        for &(a, b) in &fs.cut_bonds {
            let bond = g.bond(g.bond_between(a, b).unwrap());
            prop_assert!(!bond.in_ring && !bond.in_aromatic_ring);
            prop_assert_eq!(bond.order, BondOrder::Single);
        }
        let again = cleave(&g, &CleaveOptions::default());
        prop_assert_eq!(again.cut_bonds, fs.cut_bonds);
        prop_assert_eq!(again.atom_maps, fs.atom_maps);
    }

    #[test]
    fn task_examples_are_well_formed(seed in any::<u64>()) {
        let g = molecule(seed, 28);
        let opts = CleaveOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in [make_link_example(&g, &opts), make_merge_example(&g, &opts), make_grow_example(&g, &opts, &mut rng)]
            .into_iter()
            .flatten()
        {
            let target = parse_smiles(&e.target).unwrap();
            prop_assert_eq!(e.prompt_fragments.len(), e.kind.arity());
            for f in &e.prompt_fragments {
                let frag = parse_smiles(f).unwrap();
                // every prompt part embeds in the target
                prop_assert_eq!(mcs(&frag, &target).unwrap().atom_count(), frag.atom_count());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mcs_matches_exhaustive_enumeration(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = molecule(s1, 12);
        let b = molecule(s2, 12);
        let found = find_mcs(&a, &b, &McsOptions::default()).unwrap();
        prop_assert!(found.exhaustive);
        prop_assert_eq!(found.len(), common::brute_force_mcs_size(&a, &b));
    }

    #[test]
    fn mcs_is_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = molecule(s1, 16);
        let b = molecule(s2, 16);
        let ab = mcs(&a, &b).unwrap().atom_count();
        prop_assert_eq!(ab, mcs(&b, &a).unwrap().atom_count());
        prop_assert!(ab <= a.atom_count().min(b.atom_count()));
    }

    #[test]
    fn merge_counts_atoms_once(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = molecule(s1, 16);
        let b = molecule(s2, 16);
        let common = mcs(&a, &b).unwrap().atom_count();
        if let Ok(m) = merge_on_mcs(&a, &b) {
            prop_assert_eq!(m.atom_count(), a.atom_count() + b.atom_count() - common);
            prop_assert!(m.is_connected());
            prop_assert!(m.check_valences().is_ok());
        }
    }
}
