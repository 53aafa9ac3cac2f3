//! Canonical SMILES writer.
//!
//! Atoms are ranked by iterative Morgan-style refinement over
//! (element, charge, aromatic, degree, hydrogen count). Remaining ties are
//! broken by trying each member of the first tied class and keeping the
//! lexicographically smallest output string.

use super::{BondOrder, MolecularGraph};

/// Upper bound on complete rankings explored while breaking symmetric ties.
const MAX_TIE_LEAVES: usize = 4096;

/// Writes the canonical SMILES of `g`. Components are written separately and
/// joined with `.` in sorted order.
pub fn write_smiles(g: &MolecularGraph) -> String {
    let mut parts: Vec<String> = g
        .component_atoms()
        .iter()
        .map(|members| write_component(g, members))
        .collect();
    parts.sort();
    parts.join(".")
}

fn write_component(g: &MolecularGraph, members: &[usize]) -> String {
    let n = g.atom_count();
    let mut keys: Vec<(u8, i8, bool, usize, u8)> = vec![(0, 0, false, 0, 0); n];
    for &i in members {
        let a = g.atom(i);
        keys[i] = (
            a.element.atomic_number(),
            a.formal_charge,
            a.aromatic,
            g.degree(i),
            g.hydrogen_count(i),
        );
    }
    let initial = compress(members, |i| keys[i]);
    let mut search = TieSearch {
        g,
        members,
        best: None,
        leaves: 0,
    };
    search.explore(initial);
    search.best.unwrap_or_default()
}

/// Dense ranks (0..k) of `members` ordered by `key`; non-members get 0.
fn compress<K: Ord + Clone>(members: &[usize], key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut sorted: Vec<K> = members.iter().map(|&i| key(i)).collect();
    sorted.sort();
    sorted.dedup();
    let max = members.iter().copied().max().map_or(0, |m| m + 1);
    let mut ranks = vec![0; max];
    for &i in members {
        ranks[i] = sorted.binary_search(&key(i)).expect("key present");
    }
    ranks
}

fn distinct(members: &[usize], ranks: &[usize]) -> usize {
    let mut seen: Vec<usize> = members.iter().map(|&i| ranks[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn refine(g: &MolecularGraph, members: &[usize], mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = distinct(members, &ranks);
    loop {
        let next = compress(members, |i| {
            let mut env: Vec<(usize, BondOrder)> = g
                .neighbors(i)
                .iter()
                .map(|&(w, b)| (ranks[w], g.bond(b).order))
                .collect();
            env.sort_unstable();
            (ranks[i], env)
        });
        let count = distinct(members, &next);
        ranks = next;
        if count == classes {
            return ranks;
        }
        classes = count;
    }
}

struct TieSearch<'a> {
    g: &'a MolecularGraph,
    members: &'a [usize],
    best: Option<String>,
    leaves: usize,
}

impl TieSearch<'_> {
    fn explore(&mut self, ranks: Vec<usize>) {
        let ranks = refine(self.g, self.members, ranks);
        let classes = distinct(self.members, &ranks);
        if classes == self.members.len() {
            let s = emit(self.g, self.members, &ranks);
            if self.best.as_ref().is_none_or(|b| s < *b) {
                self.best = Some(s);
            }
            self.leaves += 1;
            return;
        }
        let mut counts = vec![0usize; classes];
        for &i in self.members {
            counts[ranks[i]] += 1;
        }
        let tied = counts.iter().position(|&c| c > 1).expect("a tied class exists");
        let candidates: Vec<usize> = self.members.iter().copied().filter(|&i| ranks[i] == tied).collect();
        for m in candidates {
            if self.leaves >= MAX_TIE_LEAVES && self.best.is_some() {
                return;
            }
            let mut split = ranks.clone();
            for &i in self.members {
                split[i] = ranks[i] * 2 + usize::from(ranks[i] == tied && i != m);
            }
            self.explore(split);
        }
    }
}

/// Writes one component given a total order on its atoms.
fn emit(g: &MolecularGraph, members: &[usize], ranks: &[usize]) -> String {
    let n = g.atom_count();
    let start = *members.iter().min_by_key(|&&i| ranks[i]).expect("non-empty component");

    // Pass 1: DFS spanning tree and ring closures.
    let mut visit_order = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); n];
    let mut bond_seen = vec![false; g.bond_count()];
    let mut counter = 0;
    dfs(
        g,
        ranks,
        start,
        &mut visit_order,
        &mut children,
        &mut closures,
        &mut bond_seen,
        &mut counter,
    );

    // Pass 2: text.
    let mut out = String::new();
    let mut digits = vec![false; 100];
    let mut open: Vec<Option<u32>> = vec![None; g.bond_count()];
    write_atom(g, ranks, &visit_order, start, &children, &closures, &mut digits, &mut open, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    g: &MolecularGraph,
    ranks: &[usize],
    v: usize,
    visit_order: &mut [usize],
    children: &mut [Vec<(usize, usize)>],
    closures: &mut [Vec<(usize, usize, bool)>],
    bond_seen: &mut [bool],
    counter: &mut usize,
) {
    visit_order[v] = *counter;
    *counter += 1;
    let mut nbrs: Vec<(usize, usize)> = g.neighbors(v).to_vec();
    nbrs.sort_by_key(|&(w, _)| ranks[w]);
    for (w, b) in nbrs {
        if bond_seen[b] {
            continue;
        }
        bond_seen[b] = true;
        if visit_order[w] == usize::MAX {
            children[v].push((w, b));
            dfs(g, ranks, w, visit_order, children, closures, bond_seen, counter);
        } else {
            // Back edge to an ancestor: the ancestor opens, this atom closes.
            closures[w].push((v, b, true));
            closures[v].push((w, b, false));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn write_atom(
    g: &MolecularGraph,
    ranks: &[usize],
    visit_order: &[usize],
    v: usize,
    children: &[Vec<(usize, usize)>],
    closures: &[Vec<(usize, usize, bool)>],
    digits: &mut [bool],
    open: &mut [Option<u32>],
    out: &mut String,
) {
    out.push_str(&atom_symbol(g, v));

    let mut closing: Vec<&(usize, usize, bool)> = closures[v].iter().filter(|c| !c.2).collect();
    closing.sort_by_key(|c| visit_order[c.0]);
    let mut opening: Vec<&(usize, usize, bool)> = closures[v].iter().filter(|c| c.2).collect();
    opening.sort_by_key(|c| ranks[c.0]);

    for &&(_, b, _) in &closing {
        let d = open[b].take().expect("ring bond was opened");
        push_digit(out, d);
        digits[d as usize] = false;
    }
    for &&(partner, b, _) in &opening {
        let d = (1..digits.len())
            .find(|&d| !digits[d])
            .expect("fewer than 100 simultaneously open ring bonds");
        digits[d] = true;
        open[b] = Some(d as u32);
        out.push_str(bond_symbol(g, b, v, partner));
        push_digit(out, d as u32);
    }

    let kids = &children[v];
    for (k, &(w, b)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_symbol(g, b, v, w));
        write_atom(g, ranks, visit_order, w, children, closures, digits, open, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

fn bond_symbol(g: &MolecularGraph, b: usize, x: usize, y: usize) -> &'static str {
    let both_aromatic = g.atom(x).aromatic && g.atom(y).aromatic;
    match g.bond(b).order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn atom_symbol(g: &MolecularGraph, i: usize) -> String {
    let atom = g.atom(i);
    let h = g.hydrogen_count(i);
    let symbol = if atom.aromatic {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    let bare_ok = atom.formal_charge == 0
        && atom.element.is_organic_subset()
        && (!atom.aromatic || atom.element.can_be_aromatic())
        && g.implicit_hydrogens(i) == Some(h);
    if bare_ok {
        return symbol;
    }
    let mut s = String::from("[");
    s.push_str(&symbol);
    match h {
        0 => {}
        1 => s.push('H'),
        n => s.push_str(&format!("H{n}")),
    }
    match atom.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{is_isomorphic, parse_smiles};

    fn canon(s: &str) -> String {
        write_smiles(&parse_smiles(s).unwrap())
    }

    #[test]
    fn spelling_invariance() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("C(C)O"), canon("CCO"));
        assert_eq!(canon("c1ccccc1C"), canon("Cc1ccccc1"));
        assert_eq!(canon("C1=CC=CC=C1"), canon("c1ccccc1"));
        assert_eq!(canon("OC(=O)C"), canon("CC(O)=O"));
        assert_eq!(canon("c1ccc2ccccc2c1"), canon("c1cccc2c1cccc2"));
    }

    #[test]
    fn benzene_round_trip() {
        let s = canon("c1ccccc1");
        assert_eq!(s, "c1ccccc1");
        let g = parse_smiles(&s).unwrap();
        assert_eq!(g.atom_count(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic));
    }

    #[test]
    fn idempotent() {
        for s in [
            "CC(=O)Nc1ccc(O)cc1",
            "C[N+](C)(C)CC(=O)[O-]",
            "c1ccc2[nH]ccc2c1",
            "O=C1CCCCC1",
            "C1CC2CCC1C2",
            "Clc1ccc(Br)cc1-c1ccccc1",
            "CCO.O",
        ] {
            let once = canon(s);
            assert_eq!(canon(&once), once, "{s}");
            assert!(is_isomorphic(&parse_smiles(&once).unwrap(), &parse_smiles(s).unwrap()));
        }
    }

    #[test]
    fn components_sorted() {
        assert_eq!(canon("O.CCO"), canon("CCO.O"));
    }

    #[test]
    fn many_ring_closures_use_percent_digits() {
        // Cubane-like cages need several simultaneously open ring bonds.
        let s = canon("C12C3C4C1C5C2C3C45");
        assert!(is_isomorphic(&parse_smiles(&s).unwrap(), &parse_smiles("C12C3C4C1C5C2C3C45").unwrap()));
    }
}
