//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashMap;

use fragforge_core::molgraph::{BondOrder, Element, MolecularGraph};
use petgraph::graph::UnGraph;

/// Fronts by repeated peeling of the points no remaining point dominates.
pub fn pareto_peel(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let dominates = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).all(|(x, y)| x >= y) && a != b;
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

type Labelled = UnGraph<(Element, bool), BondOrder>;

fn subgraph(g: &MolecularGraph, mask: u64) -> Labelled {
    let mut out = UnGraph::default();
    let mut map = HashMap::new();
    for i in 0..g.atom_count() {
        if mask >> i & 1 == 1 {
            let a = g.atom(i);
            map.insert(i, out.add_node((a.element, a.aromatic)));
        }
    }
    for b in g.bonds() {
        if let (Some(&x), Some(&y)) = (map.get(&b.a), map.get(&b.b)) {
            out.add_edge(x, y, b.order);
        }
    }
    out
}

fn connected(g: &MolecularGraph, mask: u64) -> bool {
    let start = mask.trailing_zeros() as usize;
    let mut seen = 1u64 << start;
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &(w, _) in g.neighbors(v) {
            if mask >> w & 1 == 1 && seen >> w & 1 == 0 {
                seen |= 1 << w;
                stack.push(w);
            }
        }
    }
    seen == mask
}

/// Label multiset plus in-subgraph degree, equal for isomorphic subgraphs.
fn invariant(g: &Labelled) -> Vec<(u8, bool, usize)> {
    let mut v: Vec<(u8, bool, usize)> = g
        .node_indices()
        .map(|n| {
            let (e, ar) = g[n];
            (e.atomic_number(), ar, g.neighbors(n).count())
        })
        .collect();
    v.sort_unstable();
    v
}

fn connected_subsets(g: &MolecularGraph) -> Vec<u64> {
    assert!(g.atom_count() <= 20, "oracle enumerates all subsets");
    (1u64..1 << g.atom_count()).filter(|&m| connected(g, m)).collect()
}

/// Size of the largest connected induced common subgraph, found by listing
/// every connected atom subset of both molecules.
pub fn brute_force_mcs_size(a: &MolecularGraph, b: &MolecularGraph) -> usize {
    let mut by_invariant: HashMap<Vec<(u8, bool, usize)>, Vec<Labelled>> = HashMap::new();
    for m in connected_subsets(b) {
        let s = subgraph(b, m);
        by_invariant.entry(invariant(&s)).or_default().push(s);
    }
    let mut subsets = connected_subsets(a);
    subsets.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
    for m in subsets {
        let s = subgraph(a, m);
        if let Some(cands) = by_invariant.get(&invariant(&s)) {
            if cands
                .iter()
                .any(|c| petgraph::algo::is_isomorphic_matching(&s, c, |x, y| x == y, |x, y| x == y))
            {
                return m.count_ones() as usize;
            }
        }
    }
    0
}
