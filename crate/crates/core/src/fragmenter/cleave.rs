use std::collections::VecDeque;

use crate::molgraph::{Element, MolecularGraph};

use super::energy::{annotate_energies, eligible_bonds, BondEnergyTable};

#[derive(Debug, Clone)]
pub struct CleaveOptions {
    /// Bonds at or above this energy (kcal/mol) are never cut.
    pub cutoff: f64,
    pub max_fragments: usize,
    /// Cuts that would split off fewer heavy atoms than this are skipped.
    pub min_fragment_atoms: usize,
    pub table: BondEnergyTable,
}

impl Default for CleaveOptions {
    fn default() -> Self {
        CleaveOptions {
            cutoff: 90.0,
            max_fragments: 3,
            min_fragment_atoms: 2,
            table: BondEnergyTable::default(),
        }
    }
}

/// Result of energy-ordered cleavage of one molecule.
#[derive(Debug, Clone)]
pub struct FragmentSet {
    pub fragments: Vec<MolecularGraph>,
    /// Parent atom indices of each fragment, in fragment atom order.
    pub atom_maps: Vec<Vec<usize>>,
    /// Cut bonds as parent atom pairs, in cut order.
    pub cut_bonds: Vec<(usize, usize)>,
    pub parent: MolecularGraph,
}

impl FragmentSet {
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }
}

pub(crate) fn heavy_count(g: &MolecularGraph, atoms: &[usize]) -> usize {
    atoms.iter().filter(|&&a| g.atom(a).element != Element::H).count()
}

/// Atoms reachable from `start` without crossing any bond in `cut`.
pub(crate) fn side(g: &MolecularGraph, start: usize, cut: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; g.atom_count()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut out = Vec::new();
    while let Some(v) = queue.pop_front() {
        out.push(v);
        for &(w, b) in g.neighbors(v) {
            if !seen[w] && !cut.contains(&b) {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Cuts eligible bonds weakest first until `max_fragments` pieces exist or no
/// eligible bond remains. A molecule with nothing to cut yields itself.
pub fn cleave(g: &MolecularGraph, opts: &CleaveOptions) -> FragmentSet {
    let energies = annotate_energies(g, &opts.table);
    let candidates = eligible_bonds(g, &energies, opts.cutoff);
    let mut pieces = g.component_atoms().len();
    let mut cut: Vec<usize> = Vec::new();
    for b in candidates {
        if pieces >= opts.max_fragments {
            break;
        }
        let bond = g.bond(b);
        cut.push(b);
        let left = side(g, bond.a, &cut);
        if left.contains(&bond.b) {
            // Still connected some other way; cannot happen for acyclic bonds.
            cut.pop();
            continue;
        }
        let right = side(g, bond.b, &cut);
        let ok = heavy_count(g, &left) >= opts.min_fragment_atoms
            && heavy_count(g, &right) >= opts.min_fragment_atoms;
        if ok {
            pieces += 1;
        } else {
            cut.pop();
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut assigned = vec![false; g.atom_count()];
    for start in 0..g.atom_count() {
        if !assigned[start] {
            let part = side(g, start, &cut);
            for &a in &part {
                assigned[a] = true;
            }
            groups.push(part);
        }
    }
    FragmentSet {
        fragments: groups.iter().map(|atoms| g.induced_subgraph(atoms)).collect(),
        atom_maps: groups,
        cut_bonds: cut.iter().map(|&b| (g.bond(b).a, g.bond(b).b)).collect(),
        parent: g.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{canonicalize, parse_smiles, write_smiles};

    fn opts(min: usize) -> CleaveOptions {
        CleaveOptions {
            min_fragment_atoms: min,
            ..CleaveOptions::default()
        }
    }

    fn smiles(fs: &FragmentSet) -> Vec<String> {
        fs.fragments.iter().map(write_smiles).collect()
    }

    #[test]
    fn ethane_splits_into_two_methyls() {
        let fs = cleave(&parse_smiles("CC").unwrap(), &opts(1));
        assert_eq!(smiles(&fs), vec!["C", "C"]);
        // default minimum of two heavy atoms forbids it
        assert_eq!(cleave(&parse_smiles("CC").unwrap(), &opts(2)).len(), 1);
    }

    #[test]
    fn benzene_is_untouched() {
        let fs = cleave(&parse_smiles("c1ccccc1").unwrap(), &CleaveOptions::default());
        assert_eq!(fs.len(), 1);
        assert!(fs.cut_bonds.is_empty());
        assert_eq!(write_smiles(&fs.fragments[0]), "c1ccccc1");
    }

    #[test]
    fn diethyl_ether_cuts_carbon_carbon_first() {
        let fs = cleave(&parse_smiles("CCOCC").unwrap(), &opts(1));
        assert_eq!(smiles(&fs), vec!["C".to_string(), canonicalize("COC").unwrap(), "C".to_string()]);
        assert_eq!(fs.cut_bonds, vec![(0, 1), (3, 4)]);
        let fs = cleave(&parse_smiles("CCOCC").unwrap(), &opts(2));
        assert_eq!(fs.len(), 2);
    }

    #[test]
    fn partition_is_exact() {
        let g = parse_smiles("CCOc1ccc(CC(=O)NCC)cc1CCl").unwrap();
        let fs = cleave(&g, &CleaveOptions::default());
        assert!(fs.len() <= 3);
        let mut all: Vec<usize> = fs.atom_maps.concat();
        all.sort_unstable();
        assert_eq!(all, (0..g.atom_count()).collect::<Vec<_>>());
        for (frag, map) in fs.fragments.iter().zip(&fs.atom_maps) {
            assert_eq!(frag.atom_count(), map.len());
            assert!(frag.heavy_atom_count() >= 2);
        }
    }

    #[test]
    fn fragments_keep_bracket_hydrogens_balanced() {
        let g = parse_smiles("CC[N+](C)(C)CC").unwrap();
        let fs = cleave(&g, &CleaveOptions::default());
        for f in &fs.fragments {
            f.check_valences().unwrap();
        }
    }
}
