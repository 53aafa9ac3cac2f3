//! Molecular graphs built from SMILES text.
//!
//! Atoms are nodes and bonds are edges. Hydrogens are never stored as nodes
//! unless written as `[H]`; every other hydrogen is either an explicit count on
//! a bracket atom or an implicit count filled from the default valence.

mod parse;
mod rings;
mod write;

use std::collections::BTreeMap;
use std::fmt;

use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_smiles;
pub use rings::perceive_rings;
pub use write::write_smiles;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("valence exceeded on atom {atom} ({element})")]
    Valence { atom: usize, element: Element },
    #[error("aromaticity error: {0}")]
    Aromaticity(String),
}

impl SmilesError {
    pub(crate) fn syntax(position: usize, message: impl Into<String>) -> Self {
        SmilesError::Syntax {
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Standard atomic weight in g/mol.
    pub fn atomic_weight(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::B => 10.81,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
            Element::P => 30.974,
            Element::S => 32.06,
            Element::Cl => 35.45,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    /// Allowed neutral valences, smallest first.
    pub fn valences(self) -> &'static [u8] {
        match self {
            Element::H | Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
        }
    }

    /// Whether the element may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        !matches!(self, Element::H)
    }

    /// Whether the element has a lowercase aromatic spelling.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    pub fn is_halogen(self) -> bool {
        matches!(self, Element::F | Element::Cl | Element::Br | Element::I)
    }

    /// Valences shifted by formal charge: +1 per unit for pnictogens,
    /// chalcogens and halogens, reduced by |charge| for carbon and hydrogen,
    /// and boron gains one per unit of negative charge.
    pub fn charged_valences(self, charge: i8) -> Vec<u8> {
        let shift = |v: u8| -> Option<u8> {
            let c = i16::from(charge);
            let v = i16::from(v);
            let out = match self {
                Element::N | Element::O | Element::P | Element::S => v + c,
                Element::F | Element::Cl | Element::Br | Element::I => v + c,
                Element::C | Element::H => v - c.abs(),
                Element::B => v - c,
            };
            (out >= 0).then_some(out as u8)
        };
        self.valences().iter().filter_map(|&v| shift(v)).collect()
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the sigma+pi valence sum; aromatic bonds count once
    /// here and the shared pi electron is added per atom.
    pub fn valence_contribution(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    /// Hydrogen count written inside brackets; ignored unless `bracket`.
    pub explicit_h: u8,
    /// Bracket atoms carry a fixed hydrogen count and get no implicit fill.
    pub bracket: bool,
    pub index: usize,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            aromatic: false,
            formal_charge: 0,
            explicit_h: 0,
            bracket: false,
            index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub in_ring: bool,
    pub in_aromatic_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A molecule, or several dot-separated molecules held as one graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: Vec<Vec<usize>>,
    pub source_text: String,
}

impl MolecularGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Heavy (non-hydrogen) atom count.
    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Smallest set of smallest rings, as atom cycles.
    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    /// `(neighbor, bond index)` pairs of atom `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| bi)
    }

    pub fn add_atom(&mut self, mut atom: Atom) -> usize {
        let idx = self.atoms.len();
        atom.index = idx;
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        idx
    }

    /// Adds a bond; rejects self-loops and duplicate bonds.
    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<usize, SmilesError> {
        if a == b {
            return Err(SmilesError::syntax(0, format!("self-bond on atom {a}")));
        }
        if a >= self.atoms.len() || b >= self.atoms.len() {
            return Err(SmilesError::syntax(0, "bond references a missing atom"));
        }
        if self.bond_between(a, b).is_some() {
            return Err(SmilesError::syntax(0, format!("duplicate bond {a}-{b}")));
        }
        let idx = self.bonds.len();
        self.bonds.push(Bond {
            a,
            b,
            order,
            in_ring: false,
            in_aromatic_ring: false,
        });
        self.adjacency[a].push((b, idx));
        self.adjacency[b].push((a, idx));
        Ok(idx)
    }

    pub(crate) fn atom_mut(&mut self, i: usize) -> &mut Atom {
        &mut self.atoms[i]
    }

    pub(crate) fn set_bond_order(&mut self, bond: usize, order: BondOrder) {
        self.bonds[bond].order = order;
    }

    /// Recomputes rings and ring flags. Aromatic flags on atoms are kept.
    pub fn refresh_rings(&mut self) {
        self.rings = rings::sssr(self);
        for bond in &mut self.bonds {
            bond.in_ring = false;
            bond.in_aromatic_ring = false;
        }
        let mut flags = vec![(false, false); self.bonds.len()];
        for ring in &self.rings {
            let ring_bonds: Vec<usize> = ring_bond_indices(self, ring);
            let aromatic = ring_bonds
                .iter()
                .all(|&b| self.bonds[b].order == BondOrder::Aromatic);
            for b in ring_bonds {
                flags[b].0 = true;
                flags[b].1 |= aromatic;
            }
        }
        for (bond, (ring, arom)) in self.bonds.iter_mut().zip(flags) {
            bond.in_ring = ring;
            bond.in_aromatic_ring = arom;
        }
    }

    pub fn is_ring_atom(&self, i: usize) -> bool {
        self.adjacency[i].iter().any(|&(_, b)| self.bonds[b].in_ring)
    }

    /// Sum of bond valence contributions, counting aromatic bonds once.
    pub fn bond_order_sum(&self, i: usize) -> u8 {
        self.adjacency[i]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence_contribution())
            .sum()
    }

    /// Hydrogens an atom would carry if written without brackets, or `None`
    /// when its bonds already exceed every allowed valence.
    pub fn implicit_hydrogens(&self, i: usize) -> Option<u8> {
        let atom = &self.atoms[i];
        let used = self.bond_order_sum(i);
        let valences = atom.element.charged_valences(atom.formal_charge);
        if atom.aromatic {
            // Aromatic atoms use only their default valence; the shared pi
            // electron costs one more unless the atom is a lone-pair donor.
            let default = *valences.first()?;
            if used < default {
                Some(default - used - 1)
            } else if used <= default {
                Some(0)
            } else {
                valences.iter().any(|&v| v >= used).then_some(0)
            }
        } else {
            valences.iter().find(|&&v| v >= used).map(|&v| v - used)
        }
    }

    /// Total hydrogens attached to atom `i` (explicit or implicit).
    pub fn hydrogen_count(&self, i: usize) -> u8 {
        let atom = &self.atoms[i];
        if atom.bracket {
            atom.explicit_h
        } else {
            self.implicit_hydrogens(i).unwrap_or(0)
        }
    }

    /// Checks every atom against its maximum (charge-adjusted) valence.
    pub fn check_valences(&self) -> Result<(), SmilesError> {
        for (i, atom) in self.atoms.iter().enumerate() {
            let ok = if atom.bracket {
                let max = atom
                    .element
                    .charged_valences(atom.formal_charge)
                    .into_iter()
                    .max()
                    .unwrap_or(0);
                self.bond_order_sum(i) + atom.explicit_h <= max
            } else {
                self.implicit_hydrogens(i).is_some()
            };
            if !ok {
                return Err(SmilesError::Valence {
                    atom: i,
                    element: atom.element,
                });
            }
        }
        Ok(())
    }

    /// Every aromatic atom and aromatic bond must lie on an all-aromatic ring.
    pub fn check_aromaticity(&self) -> Result<(), SmilesError> {
        for bond in &self.bonds {
            if bond.order == BondOrder::Aromatic && !bond.in_aromatic_ring {
                return Err(SmilesError::Aromaticity(format!(
                    "aromatic bond {}-{} is not on an aromatic ring",
                    bond.a, bond.b
                )));
            }
        }
        for (i, atom) in self.atoms.iter().enumerate() {
            if atom.aromatic
                && !self.adjacency[i]
                    .iter()
                    .any(|&(_, b)| self.bonds[b].in_aromatic_ring)
            {
                return Err(SmilesError::Aromaticity(format!(
                    "atom {i} is marked aromatic but is not on an aromatic ring"
                )));
            }
        }
        Ok(())
    }

    /// Drops bracket flags that only restate the default hydrogen fill.
    pub(crate) fn normalize_brackets(&mut self) {
        for i in 0..self.atoms.len() {
            let atom = &self.atoms[i];
            if atom.bracket
                && atom.formal_charge == 0
                && atom.element.is_organic_subset()
                && (!atom.aromatic || atom.element.can_be_aromatic())
                && self.implicit_hydrogens(i) == Some(atom.explicit_h)
            {
                self.atoms[i].bracket = false;
                self.atoms[i].explicit_h = 0;
            }
        }
    }

    /// Runs ring perception and the validity checks used after parsing or
    /// editing a graph.
    pub fn sanitize(&mut self) -> Result<(), SmilesError> {
        self.refresh_rings();
        self.check_aromaticity()?;
        self.check_valences()?;
        self.normalize_brackets();
        Ok(())
    }

    /// Connected components as atom index lists, each sorted ascending and
    /// ordered by their smallest atom.
    pub fn component_atoms(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.component_atoms().len() <= 1
    }

    /// The dot-separated parts of this graph as separate molecules.
    pub fn components(&self) -> Vec<MolecularGraph> {
        self.component_atoms()
            .iter()
            .map(|atoms| self.induced_subgraph(atoms))
            .collect()
    }

    /// Subgraph induced by `atoms` (in the given order). Bracket atoms that
    /// lose bonds gain one explicit hydrogen per lost bond order unit; other
    /// atoms are refilled from their default valence.
    pub fn induced_subgraph(&self, atoms: &[usize]) -> MolecularGraph {
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut sub = MolecularGraph::new();
        for &old in atoms {
            let mut atom = self.atoms[old].clone();
            if atom.bracket {
                let lost: u8 = self.adjacency[old]
                    .iter()
                    .filter(|&&(n, _)| !atoms.contains(&n))
                    .map(|&(_, b)| self.bonds[b].order.valence_contribution())
                    .sum();
                atom.explicit_h += lost;
            }
            map[old] = sub.add_atom(atom);
        }
        for bond in &self.bonds {
            let (a, b) = (map[bond.a], map[bond.b]);
            if a != usize::MAX && b != usize::MAX {
                sub.add_bond(a, b, bond.order)
                    .expect("induced subgraph cannot duplicate bonds");
            }
        }
        sub.refresh_rings();
        sub.normalize_brackets();
        sub
    }

    fn to_petgraph(&self) -> UnGraph<(Element, i8, bool, u8), BondOrder> {
        let mut g = UnGraph::with_capacity(self.atoms.len(), self.bonds.len());
        let nodes: Vec<_> = (0..self.atoms.len())
            .map(|i| {
                let a = &self.atoms[i];
                g.add_node((a.element, a.formal_charge, a.aromatic, self.hydrogen_count(i)))
            })
            .collect();
        for bond in &self.bonds {
            g.add_edge(nodes[bond.a], nodes[bond.b], bond.order);
        }
        g
    }
}

fn ring_bond_indices(g: &MolecularGraph, ring: &[usize]) -> Vec<usize> {
    (0..ring.len())
        .filter_map(|k| g.bond_between(ring[k], ring[(k + 1) % ring.len()]))
        .collect()
}

/// True iff an element/charge/aromaticity/hydrogen-count and bond-order
/// preserving isomorphism exists.
pub fn is_isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    if a.atom_count() != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    petgraph::algo::is_isomorphic_matching(&a.to_petgraph(), &b.to_petgraph(), |x, y| x == y, |x, y| x == y)
}

/// Element counts including attached hydrogens.
pub fn molecular_formula(g: &MolecularGraph) -> BTreeMap<Element, usize> {
    let mut counts = BTreeMap::new();
    for (i, atom) in g.atoms().iter().enumerate() {
        *counts.entry(atom.element).or_insert(0) += 1;
        let h = g.hydrogen_count(i) as usize;
        if h > 0 {
            *counts.entry(Element::H).or_insert(0) += h;
        }
    }
    counts
}

/// Hill-order formula string, e.g. `C2H6O`.
pub fn formula_string(g: &MolecularGraph) -> String {
    let counts = molecular_formula(g);
    let mut order: Vec<Element> = Vec::new();
    if counts.contains_key(&Element::C) {
        order.push(Element::C);
        if counts.contains_key(&Element::H) {
            order.push(Element::H);
        }
    }
    let mut rest: Vec<Element> = counts.keys().copied().filter(|e| !order.contains(e)).collect();
    rest.sort_by_key(|e| e.symbol());
    order.extend(rest);
    order
        .into_iter()
        .map(|e| match counts[&e] {
            1 => e.symbol().to_string(),
            n => format!("{}{}", e.symbol(), n),
        })
        .collect()
}

/// Molecular weight in g/mol including implicit hydrogens.
pub fn molecular_weight(g: &MolecularGraph) -> f64 {
    molecular_formula(g)
        .iter()
        .map(|(e, &n)| e.atomic_weight() * n as f64)
        .sum()
}

/// Parses then canonicalizes a SMILES string.
pub fn canonicalize(text: &str) -> Result<String, SmilesError> {
    parse_smiles(text).map(|g| write_smiles(&g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula(s: &str) -> String {
        formula_string(&parse_smiles(s).unwrap())
    }

    #[test]
    fn ethanol_counts() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.heavy_atom_count(), 3);
        assert_eq!(g.bond_count(), 2);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(formula("CCO"), "C2H6O");
    }

    #[test]
    fn benzene_is_aromatic() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic && a.element == Element::C));
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic && b.in_aromatic_ring));
        assert_eq!(g.rings().len(), 1);
        assert_eq!(formula("c1ccccc1"), "C6H6");
    }

    #[test]
    fn acetic_acid() {
        let g = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(g.heavy_atom_count(), 4);
        let doubles = g.bonds().iter().filter(|b| b.order == BondOrder::Double).count();
        let singles = g.bonds().iter().filter(|b| b.order == BondOrder::Single).count();
        assert_eq!((doubles, singles), (1, 2));
        assert_eq!(formula("CC(=O)O"), "C2H4O2");
    }

    #[test]
    fn formula_maps() {
        let methane = molecular_formula(&parse_smiles("C").unwrap());
        assert_eq!(methane[&Element::C], 1);
        assert_eq!(methane[&Element::H], 4);
        let benzene = molecular_formula(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!((benzene[&Element::C], benzene[&Element::H]), (6, 6));
    }

    #[test]
    fn isomorphism_cases() {
        let p = |s| parse_smiles(s).unwrap();
        assert!(is_isomorphic(&p("CCO"), &p("OCC")));
        assert!(!is_isomorphic(&p("CCO"), &p("CCN")));
        assert!(!is_isomorphic(&p("C1CC1"), &p("CCC")));
        assert!(is_isomorphic(&p("C1=CC=CC=C1"), &p("c1ccccc1")));
    }

    #[test]
    fn charged_valence_rules() {
        assert_eq!(Element::N.charged_valences(1), vec![4]);
        assert_eq!(Element::O.charged_valences(-1), vec![1]);
        assert_eq!(Element::C.charged_valences(-1), vec![3]);
        assert_eq!(Element::B.charged_valences(-1), vec![4]);
    }

    #[test]
    fn components_split_dot_smiles() {
        let g = parse_smiles("CCO.c1ccccc1").unwrap();
        assert!(!g.is_connected());
        let parts = g.components();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].atom_count(), 3);
        assert_eq!(parts[1].atom_count(), 6);
    }

    #[test]
    fn molecular_weight_of_water() {
        let w = molecular_weight(&parse_smiles("O").unwrap());
        assert!((w - 18.015).abs() < 1e-9);
    }
}
