//! Maximum common connected induced substructure.
//!
//! Backtracking over compatible atom pairs (cliques of the modular product
//! graph) grown only along bonds, so every partial match stays connected.
//! Each candidate atom of the first molecule is either matched or excluded
//! forever, which enumerates every connected match exactly once.

use std::collections::HashMap;

use crate::molgraph::{write_smiles, BondOrder, MolecularGraph};

use super::FragmentError;

#[derive(Debug, Clone)]
pub struct McsOptions {
    /// Molecules above this atom count are rejected.
    pub max_atoms: usize,
    /// Search nodes before settling for the best match found so far.
    pub node_limit: usize,
}

impl Default for McsOptions {
    fn default() -> Self {
        McsOptions {
            max_atoms: 64,
            node_limit: 2_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McsMatch {
    /// `(atom in a, atom in b)` pairs sorted by the first index.
    pub mapping: Vec<(usize, usize)>,
    /// The common substructure, taken from `a`.
    pub graph: MolecularGraph,
    /// Canonical SMILES of `graph` (empty when there is no overlap).
    pub smiles: String,
    /// False when the node limit stopped the search early.
    pub exhaustive: bool,
}

impl McsMatch {
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Largest connected common substructure of `a` and `b`, as a graph.
pub fn mcs(a: &MolecularGraph, b: &MolecularGraph) -> Result<MolecularGraph, FragmentError> {
    find_mcs(a, b, &McsOptions::default()).map(|m| m.graph)
}

/// Largest connected common substructure with its atom mapping. Atoms match
/// on element and aromaticity, bonds on order, and the match is induced: two
/// matched atoms are bonded in `a` exactly when their images are bonded in
/// `b`. Among equal-size matches the one with the smallest canonical SMILES
/// wins, then the smallest mapping.
pub fn find_mcs(a: &MolecularGraph, b: &MolecularGraph, opts: &McsOptions) -> Result<McsMatch, FragmentError> {
    for g in [a, b] {
        if g.atom_count() > opts.max_atoms {
            return Err(FragmentError::SizeLimit {
                atoms: g.atom_count(),
                limit: opts.max_atoms,
            });
        }
    }
    let mut search = Search::new(a, b, opts.node_limit);
    for root in 0..a.atom_count() {
        for v in 0..b.atom_count() {
            if !search.atoms_match(root, v) {
                continue;
            }
            search.map_a[root] = Some(v);
            search.map_b[v] = Some(root);
            search.size = 1;
            search.recurse(root);
            search.map_a[root] = None;
            search.map_b[v] = None;
            search.size = 0;
        }
        // Matches rooted here are done: later roots never use this atom.
        search.excluded[root] = true;
    }

    let exhaustive = search.nodes <= search.node_limit;
    type Best = (String, Vec<(usize, usize)>, MolecularGraph);
    let mut best: Option<Best> = None;
    let mut cache: HashMap<Vec<usize>, (String, MolecularGraph)> = HashMap::new();
    for mapping in search.solutions {
        let atoms: Vec<usize> = mapping.iter().map(|&(x, _)| x).collect();
        let (smiles, graph) = cache
            .entry(atoms.clone())
            .or_insert_with(|| {
                let g = a.induced_subgraph(&atoms);
                (write_smiles(&g), g)
            })
            .clone();
        let better = match &best {
            None => true,
            Some((s, m, _)) => (&smiles, &mapping) < (s, m),
        };
        if better {
            best = Some((smiles, mapping, graph));
        }
    }
    Ok(match best {
        Some((smiles, mapping, graph)) => McsMatch {
            mapping,
            graph,
            smiles,
            exhaustive,
        },
        None => McsMatch {
            mapping: Vec::new(),
            graph: MolecularGraph::new(),
            smiles: String::new(),
            exhaustive,
        },
    })
}

struct Search<'g> {
    a: &'g MolecularGraph,
    b: &'g MolecularGraph,
    map_a: Vec<Option<usize>>,
    map_b: Vec<Option<usize>>,
    excluded: Vec<bool>,
    size: usize,
    best: usize,
    solutions: Vec<Vec<(usize, usize)>>,
    nodes: usize,
    node_limit: usize,
}

impl<'g> Search<'g> {
    fn new(a: &'g MolecularGraph, b: &'g MolecularGraph, node_limit: usize) -> Self {
        Search {
            a,
            b,
            map_a: vec![None; a.atom_count()],
            map_b: vec![None; b.atom_count()],
            excluded: vec![false; a.atom_count()],
            size: 0,
            best: 0,
            solutions: Vec::new(),
            nodes: 0,
            node_limit,
        }
    }

    fn atoms_match(&self, x: usize, y: usize) -> bool {
        let (p, q) = (self.a.atom(x), self.b.atom(y));
        p.element == q.element && p.aromatic == q.aromatic
    }

    fn bond_order_a(&self, x: usize, y: usize) -> Option<BondOrder> {
        self.a.bond_between(x, y).map(|bi| self.a.bond(bi).order)
    }

    fn bond_order_b(&self, x: usize, y: usize) -> Option<BondOrder> {
        self.b.bond_between(x, y).map(|bi| self.b.bond(bi).order)
    }

    /// Whether mapping `u -> v` keeps the match induced and order preserving.
    fn consistent(&self, u: usize, v: usize) -> bool {
        (0..self.a.atom_count()).all(|x| match self.map_a[x] {
            Some(y) => self.bond_order_a(u, x) == self.bond_order_b(v, y),
            None => true,
        })
    }

    /// Smallest unmatched, non-excluded atom of `a` bonded to the match.
    fn next_frontier(&self) -> Option<usize> {
        (0..self.a.atom_count()).find(|&u| {
            self.map_a[u].is_none()
                && !self.excluded[u]
                && self.a.neighbors(u).iter().any(|&(w, _)| self.map_a[w].is_some())
        })
    }

    /// Optimistic number of further atoms: label-wise minimum of what is
    /// still reachable in `a` and still free in `b`.
    fn bound(&self) -> usize {
        let n = self.a.atom_count();
        let mut reach = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&u| self.map_a[u].is_some()).collect();
        for &u in &stack {
            reach[u] = true;
        }
        let mut counts: HashMap<(u8, bool), (usize, usize)> = HashMap::new();
        while let Some(u) = stack.pop() {
            for &(w, _) in self.a.neighbors(u) {
                if !reach[w] && !self.excluded[w] && self.map_a[w].is_none() {
                    reach[w] = true;
                    stack.push(w);
                    let atom = self.a.atom(w);
                    counts.entry((atom.element.atomic_number(), atom.aromatic)).or_default().0 += 1;
                }
            }
        }
        for y in 0..self.b.atom_count() {
            if self.map_b[y].is_none() {
                let atom = self.b.atom(y);
                if let Some(c) = counts.get_mut(&(atom.element.atomic_number(), atom.aromatic)) {
                    c.1 += 1;
                }
            }
        }
        counts.values().map(|&(x, y)| x.min(y)).sum()
    }

    fn record(&mut self) {
        if self.size < self.best {
            return;
        }
        if self.size > self.best {
            self.best = self.size;
            self.solutions.clear();
        }
        let mapping = (0..self.a.atom_count())
            .filter_map(|x| self.map_a[x].map(|y| (x, y)))
            .collect();
        self.solutions.push(mapping);
    }

    fn recurse(&mut self, root: usize) {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.record();
            return;
        }
        if self.size + self.bound() < self.best {
            return;
        }
        let Some(u) = self.next_frontier() else {
            self.record();
            return;
        };
        debug_assert!(u > root);
        let images: Vec<usize> = (0..self.b.atom_count())
            .filter(|&v| self.map_b[v].is_none() && self.atoms_match(u, v))
            .filter(|&v| {
                self.b
                    .neighbors(v)
                    .iter()
                    .any(|&(w, _)| self.map_b[w].is_some())
            })
            .collect();
        for v in images {
            if !self.consistent(u, v) {
                continue;
            }
            self.map_a[u] = Some(v);
            self.map_b[v] = Some(u);
            self.size += 1;
            self.recurse(root);
            self.size -= 1;
            self.map_a[u] = None;
            self.map_b[v] = None;
        }
        self.excluded[u] = true;
        self.recurse(root);
        self.excluded[u] = false;
    }
}

/// Glues `b` onto `a` by identifying their common substructure once. The
/// result has `|a| + |b| - |mcs|` atoms.
pub fn merge_on_mcs(a: &MolecularGraph, b: &MolecularGraph) -> Result<MolecularGraph, FragmentError> {
    let found = find_mcs(a, b, &McsOptions::default())?;
    if found.is_empty() {
        return Err(FragmentError::EmptyOverlap);
    }
    merge_with_mapping(a, b, &found.mapping)
}

pub(crate) fn merge_with_mapping(
    a: &MolecularGraph,
    b: &MolecularGraph,
    mapping: &[(usize, usize)],
) -> Result<MolecularGraph, FragmentError> {
    let mut merged = a.clone();
    let mut image = vec![usize::MAX; b.atom_count()];
    for &(x, y) in mapping {
        image[y] = x;
    }
    for (y, slot) in image.iter_mut().enumerate() {
        if *slot == usize::MAX {
            *slot = merged.add_atom(b.atom(y).clone());
        }
    }
    for bond in b.bonds() {
        let (x, y) = (image[bond.a], image[bond.b]);
        if merged.bond_between(x, y).is_some() {
            continue;
        }
        merged
            .add_bond(x, y, bond.order)
            .map_err(FragmentError::Invalid)?;
        // A matched bracket atom gaining a bond gives up a hydrogen.
        for end in [x, y] {
            if end < a.atom_count() {
                let atom = merged.atom_mut(end);
                if atom.bracket {
                    atom.explicit_h = atom.explicit_h.saturating_sub(bond.order.valence_contribution());
                }
            }
        }
    }
    merged.source_text.clear();
    merged.sanitize().map_err(FragmentError::Invalid)?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{canonicalize, is_isomorphic, parse_smiles};

    fn p(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn identity_and_disjoint() {
        let m = p("CC(=O)Nc1ccccc1");
        let r = mcs(&m, &m).unwrap();
        assert_eq!(r.atom_count(), m.atom_count());
        assert!(mcs(&p("C"), &p("O")).unwrap().is_empty());
    }

    #[test]
    fn benzene_in_toluene() {
        let r = find_mcs(&p("c1ccccc1"), &p("Cc1ccccc1"), &McsOptions::default()).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r.smiles, "c1ccccc1");
        assert!(r.graph.atoms().iter().all(|a| a.aromatic));
    }

    #[test]
    fn induced_match_respects_bond_orders() {
        // ethanol vs acetaldehyde: C-C-O vs C-C=O share only C-C (+ one more
        // atom is impossible because the C-O orders differ).
        let r = find_mcs(&p("CCO"), &p("CC=O"), &McsOptions::default()).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn size_limit() {
        let big = p(&"C".repeat(70));
        assert!(matches!(
            find_mcs(&big, &p("C"), &McsOptions::default()),
            Err(FragmentError::SizeLimit { .. })
        ));
    }

    #[test]
    fn merge_identity_and_reorder() {
        let m = p("CC(=O)Nc1ccccc1");
        assert!(is_isomorphic(&merge_on_mcs(&m, &m).unwrap(), &m));
        assert!(is_isomorphic(&merge_on_mcs(&p("CCO"), &p("OCC")).unwrap(), &p("CCO")));
    }

    #[test]
    fn merge_ethylbenzene_with_benzylamine() {
        let a = p("CCc1ccccc1");
        let b = p("c1ccccc1CN");
        let overlap = mcs(&a, &b).unwrap();
        assert_eq!(overlap.atom_count(), 7);
        let merged = merge_on_mcs(&a, &b).unwrap();
        assert_eq!(merged.atom_count(), a.atom_count() + b.atom_count() - 7);
        // Hand-glued product: the shared benzylic carbon carries both the
        // methyl of the ethyl group and the amine.
        assert!(is_isomorphic(&merged, &p("CC(N)c1ccccc1")));
        assert!(mcs(&merged, &a).unwrap().atom_count() == a.atom_count());
        assert!(mcs(&merged, &b).unwrap().atom_count() == b.atom_count());
    }

    #[test]
    fn merge_without_overlap_fails() {
        assert!(matches!(merge_on_mcs(&p("C"), &p("O")), Err(FragmentError::EmptyOverlap)));
    }

    #[test]
    fn tie_break_is_deterministic() {
        let a = p("OCCN");
        let b = p("NCCO");
        let r1 = find_mcs(&a, &b, &McsOptions::default()).unwrap();
        let r2 = find_mcs(&a, &b, &McsOptions::default()).unwrap();
        assert_eq!(r1.mapping, r2.mapping);
        assert_eq!(r1.smiles, canonicalize("NCCO").unwrap());
    }
}
