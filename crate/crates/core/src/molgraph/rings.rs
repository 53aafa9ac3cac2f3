//! Ring perception: a minimum cycle basis (SSSR) from Horton's candidate set
//! filtered by GF(2) independence.

use std::collections::{HashSet, VecDeque};

use super::MolecularGraph;

/// Recomputes the ring set of `g`, updates its bond ring flags, and returns
/// the rings as atom cycles.
pub fn perceive_rings(g: &mut MolecularGraph) -> Vec<Vec<usize>> {
    g.refresh_rings();
    g.rings().to_vec()
}

pub(crate) fn sssr(g: &MolecularGraph) -> Vec<Vec<usize>> {
    let n = g.atom_count();
    let m = g.bond_count();
    let components = g.component_atoms().len();
    let rank = (m + components).saturating_sub(n);
    if rank == 0 {
        return Vec::new();
    }

    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for root in 0..n {
        let (dist, parent) = bfs(g, root);
        for bond in g.bonds() {
            let (x, y) = (bond.a, bond.b);
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            // Skip tree edges; they close no cycle.
            if parent[x] == Some(y) || parent[y] == Some(x) {
                continue;
            }
            let px = path_to_root(&parent, x);
            let py = path_to_root(&parent, y);
            let shared = px.iter().filter(|a| py.contains(a)).count();
            if shared != 1 {
                continue;
            }
            let mut cycle: Vec<usize> = px.iter().rev().copied().collect();
            cycle.extend(py.iter().take(py.len() - 1));
            let mut key = cycle.clone();
            key.sort_unstable();
            if seen.insert(key) {
                candidates.push(cycle);
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.len().cmp(&b.len()).then_with(|| {
            let mut sa = a.clone();
            let mut sb = b.clone();
            sa.sort_unstable();
            sb.sort_unstable();
            sa.cmp(&sb)
        })
    });

    let words = m.div_ceil(64);
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut rings = Vec::new();
    for cycle in candidates {
        if rings.len() == rank {
            break;
        }
        let mut bits = vec![0u64; words];
        for k in 0..cycle.len() {
            let b = g
                .bond_between(cycle[k], cycle[(k + 1) % cycle.len()])
                .expect("cycle follows bonds");
            bits[b / 64] ^= 1 << (b % 64);
        }
        for (pivot, row) in &basis {
            if bits[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (w, r) in bits.iter_mut().zip(row) {
                    *w ^= r;
                }
            }
        }
        if let Some(pivot) = first_set_bit(&bits) {
            basis.push((pivot, bits));
            rings.push(canonical_cycle(cycle));
        }
    }
    rings
}

fn first_set_bit(bits: &[u64]) -> Option<usize> {
    bits.iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

/// Rotates a cycle to start at its smallest atom, walking toward the smaller
/// neighbor.
fn canonical_cycle(mut cycle: Vec<usize>) -> Vec<usize> {
    let (pos, _) = cycle
        .iter()
        .enumerate()
        .min_by_key(|(_, &a)| a)
        .expect("non-empty cycle");
    cycle.rotate_left(pos);
    if cycle.len() > 2 && cycle[cycle.len() - 1] < cycle[1] {
        cycle[1..].reverse();
    }
    cycle
}

fn bfs(g: &MolecularGraph, root: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = g.atom_count();
    let mut dist = vec![usize::MAX; n];
    let mut parent = vec![None; n];
    let mut queue = VecDeque::new();
    dist[root] = 0;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        let mut nbrs: Vec<usize> = g.neighbors(v).iter().map(|&(w, _)| w).collect();
        nbrs.sort_unstable();
        for w in nbrs {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                parent[w] = Some(v);
                queue.push_back(w);
            }
        }
    }
    (dist, parent)
}

/// Path from `v` up to the BFS root, starting at `v`.
fn path_to_root(parent: &[Option<usize>], mut v: usize) -> Vec<usize> {
    let mut path = vec![v];
    while let Some(p) = parent[v] {
        path.push(p);
        v = p;
    }
    path
}
