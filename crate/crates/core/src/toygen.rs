//! Random molecule generators for desk-scale corpora and tests.
//!
//! `random_molecule` grows drug-like structures by grafting common ring and
//! chain building blocks onto each other. `random_graph` builds unstructured
//! chains with branches, ring closures and multiple bonds, for stress tests.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::molgraph::{parse_smiles, write_smiles, Atom, BondOrder, Element, MolecularGraph};

const BLOCKS: &[&str] = &[
    "c1ccccc1",
    "c1ccncc1",
    "c1cncnc1",
    "c1ccsc1",
    "c1ccoc1",
    "c1ccc2ccccc2c1",
    "c1ccc2[nH]ccc2c1",
    "C1CCCCC1",
    "C1CCNCC1",
    "C1COCCN1",
    "C1CC1",
    "C1CCCC1",
    "C",
    "CC",
    "CCC",
    "CC(C)C",
    "C(=O)O",
    "C(=O)N",
    "NC(=O)C",
    "C(=O)OC",
    "O",
    "N",
    "OC",
    "CO",
    "CN",
    "CCN",
    "CCO",
    "C(F)(F)F",
    "Cl",
    "F",
    "Br",
    "C#N",
    "S(=O)(=O)N",
    "C=O",
    "C=C",
];

#[derive(Debug, Clone)]
pub struct ToyGenOptions {
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub max_heavy_atoms: usize,
}

impl Default for ToyGenOptions {
    fn default() -> Self {
        ToyGenOptions {
            min_blocks: 2,
            max_blocks: 6,
            max_heavy_atoms: 32,
        }
    }
}

/// Atoms that can take one more single bond: unbracketed, with a hydrogen.
fn open_sites(g: &MolecularGraph) -> Vec<usize> {
    (0..g.atom_count())
        .filter(|&i| !g.atom(i).bracket && g.hydrogen_count(i) > 0)
        .collect()
}

fn graft(base: &mut MolecularGraph, at: usize, block: &MolecularGraph, via: usize) {
    let offset = base.atom_count();
    for atom in block.atoms() {
        base.add_atom(atom.clone());
    }
    for bond in block.bonds() {
        base.add_bond(bond.a + offset, bond.b + offset, bond.order)
            .expect("block bonds are distinct");
    }
    base.add_bond(at, via + offset, BondOrder::Single)
        .expect("graft joins two components");
}

/// A random connected, valid molecule assembled from building blocks.
pub fn random_molecule(rng: &mut impl Rng, opts: &ToyGenOptions) -> MolecularGraph {
    let blocks: Vec<MolecularGraph> = BLOCKS
        .iter()
        .map(|s| parse_smiles(s).expect("building blocks parse"))
        .collect();
    let mut g = blocks.choose(rng).expect("blocks").clone();
    let target = rng.random_range(opts.min_blocks..=opts.max_blocks.max(opts.min_blocks));
    let mut attempts = 0;
    let mut placed = 1;
    while placed < target && attempts < 4 * target {
        attempts += 1;
        let block = blocks.choose(rng).expect("blocks");
        if g.heavy_atom_count() + block.heavy_atom_count() > opts.max_heavy_atoms {
            continue;
        }
        let (sites, block_sites) = (open_sites(&g), open_sites(block));
        let (Some(&at), Some(&via)) = (sites.choose(rng), block_sites.choose(rng)) else {
            break;
        };
        graft(&mut g, at, block, via);
        placed += 1;
    }
    g.sanitize().expect("grafting onto hydrogens keeps valences");
    g.source_text = write_smiles(&g);
    g
}

/// `n` distinct canonical SMILES from `random_molecule`.
pub fn toy_corpus(rng: &mut impl Rng, n: usize, opts: &ToyGenOptions) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut misses = 0;
    while out.len() < n && misses < 100 * n.max(1) {
        let s = write_smiles(&random_molecule(rng, opts));
        if seen.insert(s.clone()) {
            out.push(s);
        } else {
            misses += 1;
        }
    }
    out
}

/// A random aliphatic graph with up to `max_atoms` atoms: a random tree with
/// occasional ring closures, double and triple bonds and charged atoms.
pub fn random_graph(rng: &mut impl Rng, max_atoms: usize) -> MolecularGraph {
    const ELEMENTS: &[(Element, u32)] = &[
        (Element::C, 60),
        (Element::N, 12),
        (Element::O, 12),
        (Element::S, 4),
        (Element::F, 3),
        (Element::Cl, 3),
        (Element::Br, 2),
        (Element::P, 1),
        (Element::B, 1),
        (Element::I, 1),
    ];
    let total: u32 = ELEMENTS.iter().map(|e| e.1).sum();
    let n = rng.random_range(1..=max_atoms.max(1));
    let mut g = MolecularGraph::new();
    let mut capacity: Vec<u8> = Vec::new();
    for i in 0..n {
        let mut roll = rng.random_range(0..total);
        let element = ELEMENTS
            .iter()
            .find(|&&(_, w)| {
                if roll < w {
                    true
                } else {
                    roll -= w;
                    false
                }
            })
            .expect("weights cover the roll")
            .0;
        let mut atom = Atom::new(element);
        if element == Element::N && rng.random_bool(0.05) {
            atom.formal_charge = 1;
        }
        let cap = *atom_valences(&atom).iter().max().unwrap_or(&0);
        if i > 0 {
            let parents: Vec<usize> = (0..i).filter(|&p| capacity[p] >= 1).collect();
            let Some(&parent) = parents.choose(rng) else {
                break;
            };
            if cap == 0 {
                break;
            }
            let idx = g.add_atom(atom);
            let max_order = capacity[parent].min(cap).min(3);
            let order = match rng.random_range(0..10) {
                0 if max_order >= 3 => BondOrder::Triple,
                1 | 2 if max_order >= 2 => BondOrder::Double,
                _ => BondOrder::Single,
            };
            let used = order.valence_contribution();
            g.add_bond(parent, idx, order).expect("new atom");
            capacity[parent] -= used;
            capacity.push(cap - used);
        } else {
            g.add_atom(atom);
            capacity.push(cap);
        }
    }
    // ring closures
    let closures = rng.random_range(0..=n / 4);
    for _ in 0..closures {
        let a = rng.random_range(0..g.atom_count());
        let b = rng.random_range(0..g.atom_count());
        if a != b && capacity[a] >= 1 && capacity[b] >= 1 && g.bond_between(a, b).is_none() {
            g.add_bond(a, b, BondOrder::Single).expect("checked");
            capacity[a] -= 1;
            capacity[b] -= 1;
        }
    }
    g.sanitize().expect("capacities respect the largest valence");
    g
}

fn atom_valences(atom: &Atom) -> Vec<u8> {
    atom.element.charged_valences(atom.formal_charge)
}
