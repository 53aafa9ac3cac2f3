use std::collections::HashSet;

use crate::molgraph::{BondOrder, MolecularGraph};

use super::CriticError;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_BITS: usize = 1024;

/// Fixed-width bitset of hashed circular atom environments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
}

impl Fingerprint {
    pub fn new(width: usize) -> Self {
        Fingerprint {
            words: vec![0; width.div_ceil(64)],
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.width);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&i| self.get(i))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the little-endian bytes of `values`.
pub(crate) fn fnv(values: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for v in values {
        for byte in v.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

fn bond_code(order: BondOrder) -> u64 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

/// Environment identifiers: `ids[r][atom]` for radius `r` in `0..=radius`,
/// plus the bond set each environment covers.
pub(crate) struct Environments {
    pub ids: Vec<Vec<u64>>,
    pub bonds: Vec<Vec<Vec<usize>>>,
}

pub(crate) fn environments(g: &MolecularGraph, radius: usize) -> Environments {
    let n = g.atom_count();
    let mut ids: Vec<Vec<u64>> = vec![(0..n)
        .map(|i| {
            let a = g.atom(i);
            fnv(&[
                u64::from(a.element.atomic_number()),
                g.degree(i) as u64,
                u64::from(g.hydrogen_count(i)),
                a.formal_charge as u64,
                u64::from(a.aromatic),
                u64::from(g.is_ring_atom(i)),
            ])
        })
        .collect()];
    let mut bonds: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n]];
    for r in 1..=radius {
        let prev = &ids[r - 1];
        let prev_bonds = &bonds[r - 1];
        let mut next = Vec::with_capacity(n);
        let mut next_bonds = Vec::with_capacity(n);
        for i in 0..n {
            let mut env: Vec<(u64, u64)> = g
                .neighbors(i)
                .iter()
                .map(|&(w, b)| (bond_code(g.bond(b).order), prev[w]))
                .collect();
            env.sort_unstable();
            let mut values = vec![r as u64, prev[i]];
            for (b, id) in env {
                values.extend([b, id]);
            }
            next.push(fnv(&values));
            let mut covered: Vec<usize> = prev_bonds[i].clone();
            for &(w, b) in g.neighbors(i) {
                covered.push(b);
                covered.extend(&prev_bonds[w]);
            }
            covered.sort_unstable();
            covered.dedup();
            next_bonds.push(covered);
        }
        ids.push(next);
        bonds.push(next_bonds);
    }
    Environments { ids, bonds }
}

/// ECFP-style fingerprint. An environment is dropped when it covers the same
/// bonds as one already emitted, so a lone atom sets a single bit.
pub fn fingerprint(g: &MolecularGraph, radius: usize, nbits: usize) -> Fingerprint {
    let env = environments(g, radius);
    let mut fp = Fingerprint::new(nbits);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for r in 0..=radius {
        let mut round: Vec<(Vec<usize>, u64, usize)> = (0..g.atom_count())
            .map(|i| (env.bonds[r][i].clone(), env.ids[r][i], i))
            .collect();
        round.sort();
        for (covered, id, _) in round {
            if r > 0 && (covered.is_empty() || seen.contains(&covered)) {
                continue;
            }
            if r > 0 {
                seen.insert(covered);
            }
            fp.set((id % nbits as u64) as usize);
        }
    }
    fp
}

pub fn default_fingerprint(g: &MolecularGraph) -> Fingerprint {
    fingerprint(g, DEFAULT_RADIUS, DEFAULT_BITS)
}

/// `|a ∧ b| / |a ∨ b|`, or 0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, CriticError> {
    if a.width != b.width {
        return Err(CriticError::WidthMismatch(a.width, b.width));
    }
    let (mut and, mut or) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        and += (x & y).count_ones();
        or += (x | y).count_ones();
    }
    Ok(if or == 0 { 0.0 } else { f64::from(and) / f64::from(or) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn fp(s: &str) -> Fingerprint {
        default_fingerprint(&parse_smiles(s).unwrap())
    }

    fn bits(width: usize, on: &[usize]) -> Fingerprint {
        let mut f = Fingerprint::new(width);
        for &b in on {
            f.set(b);
        }
        f
    }

    #[test]
    fn spelling_invariant() {
        assert_eq!(fp("OCC"), fp("CCO"));
        assert_eq!(fp("c1ccccc1C(=O)O"), fp("OC(=O)c1ccccc1"));
    }

    #[test]
    fn methane_sets_one_bit() {
        let f = fp("C");
        assert!(f.count_ones() >= 1 && f.count_ones() <= 2);
    }

    #[test]
    fn benzene_and_ethane_differ() {
        assert!(tanimoto(&fp("c1ccccc1"), &fp("CC")).unwrap() < 0.2);
    }

    #[test]
    fn tanimoto_set_arithmetic() {
        let x = bits(64, &[1, 5, 9]);
        assert_eq!(tanimoto(&x, &x).unwrap(), 1.0);
        assert_eq!(tanimoto(&bits(64, &[1, 2]), &bits(64, &[3, 4])).unwrap(), 0.0);
        assert_eq!(tanimoto(&bits(64, &[1, 2]), &bits(64, &[1, 2, 3, 4])).unwrap(), 0.5);
        assert_eq!(tanimoto(&Fingerprint::new(64), &Fingerprint::new(64)).unwrap(), 0.0);
        assert!(matches!(
            tanimoto(&Fingerprint::new(64), &Fingerprint::new(128)),
            Err(CriticError::WidthMismatch(64, 128))
        ));
    }

    #[test]
    fn similar_molecules_score_higher() {
        let t = fp("Cc1ccccc1");
        assert!(tanimoto(&t, &fp("CCc1ccccc1")).unwrap() > tanimoto(&t, &fp("CCCCO")).unwrap());
    }
}
