use std::collections::HashMap;

use crate::molgraph::{BondOrder, Element, MolecularGraph};

/// Average bond dissociation energies in kcal/mol, keyed by unordered element
/// pair and bond order. Aromatic bonds and unlisted pairs fall back to
/// `default_energy`, which sits above any sensible cutoff.
#[derive(Debug, Clone)]
pub struct BondEnergyTable {
    entries: HashMap<(Element, Element, BondOrder), f64>,
    pub default_energy: f64,
}

const AVERAGE_BDE: &[(Element, Element, BondOrder, f64)] = {
    use BondOrder::*;
    use Element::*;
    &[
        (C, C, Single, 83.0),
        (C, N, Single, 73.0),
        (C, O, Single, 85.5),
        (C, S, Single, 65.0),
        (C, F, Single, 116.0),
        (C, Cl, Single, 81.0),
        (C, Br, Single, 68.0),
        (C, I, Single, 57.0),
        (N, N, Single, 39.0),
        (N, O, Single, 55.0),
        (O, O, Single, 35.0),
        (S, S, Single, 54.0),
        (C, C, Double, 147.0),
        (C, O, Double, 173.0),
        (C, C, Triple, 200.0),
        (C, N, Triple, 213.0),
        (N, H, Single, 93.0),
        (O, H, Single, 111.0),
        (C, H, Single, 99.0),
    ]
};

impl Default for BondEnergyTable {
    fn default() -> Self {
        let mut table = BondEnergyTable {
            entries: HashMap::new(),
            default_energy: 999.0,
        };
        for &(a, b, order, e) in AVERAGE_BDE {
            table.insert(a, b, order, e);
        }
        table
    }
}

impl BondEnergyTable {
    pub fn empty(default_energy: f64) -> Self {
        BondEnergyTable {
            entries: HashMap::new(),
            default_energy,
        }
    }

    /// Sets an entry. Energies must be strictly positive.
    pub fn insert(&mut self, a: Element, b: Element, order: BondOrder, energy: f64) {
        assert!(energy > 0.0, "bond energies must be positive");
        self.entries.insert(key(a, b, order), energy);
    }

    pub fn energy(&self, a: Element, b: Element, order: BondOrder) -> f64 {
        if order == BondOrder::Aromatic {
            return self.default_energy;
        }
        self.entries
            .get(&key(a, b, order))
            .copied()
            .unwrap_or(self.default_energy)
    }
}

fn key(a: Element, b: Element, order: BondOrder) -> (Element, Element, BondOrder) {
    if a <= b {
        (a, b, order)
    } else {
        (b, a, order)
    }
}

/// Dissociation energy of every bond, indexed like `g.bonds()`.
pub fn annotate_energies(g: &MolecularGraph, table: &BondEnergyTable) -> Vec<f64> {
    g.bonds()
        .iter()
        .map(|bond| {
            if bond.in_aromatic_ring {
                table.default_energy
            } else {
                table.energy(g.atom(bond.a).element, g.atom(bond.b).element, bond.order)
            }
        })
        .collect()
}

/// Cleavable bonds in ascending energy order (ties by bond index): single,
/// acyclic, below `cutoff`.
pub fn eligible_bonds(g: &MolecularGraph, energies: &[f64], cutoff: f64) -> Vec<usize> {
    let mut out: Vec<usize> = g
        .bonds()
        .iter()
        .enumerate()
        .filter(|(i, b)| {
            b.order == BondOrder::Single && !b.in_ring && !b.in_aromatic_ring && energies[*i] < cutoff
        })
        .map(|(i, _)| i)
        .collect();
    out.sort_by(|&x, &y| energies[x].total_cmp(&energies[y]).then(x.cmp(&y)));
    out
}
