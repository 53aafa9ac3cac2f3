//! SMILES reader.
//!
//! Supported: organic-subset atoms, bracket atoms with charge and hydrogen
//! count, branches, ring closures `0-9` and `%nn`, bonds `- = # :`, aromatic
//! lowercase atoms and dot-disconnected components. Stereo marks (`/ \ @`),
//! isotopes and atom classes are accepted and dropped.

use std::collections::HashMap;

use super::{BondOrder, Element, MolecularGraph, SmilesError};
use crate::molgraph::Atom;

#[derive(Debug, Clone, Copy)]
enum PendingBond {
    Explicit(BondOrder),
    /// `/` or `\`: a single bond whose stereo meaning is discarded.
    Directional,
}

struct RawBond {
    a: usize,
    b: usize,
    order: Option<BondOrder>,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<RawBond>,
    branch_stack: Vec<usize>,
    prev: Option<usize>,
    pending: Option<PendingBond>,
    open_rings: HashMap<u32, (usize, Option<PendingBond>, usize)>,
}

/// Parses a SMILES string into a sanitized molecular graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SmilesError::syntax(0, "empty SMILES"));
    }
    let mut parser = Parser {
        text: trimmed.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        branch_stack: Vec::new(),
        prev: None,
        pending: None,
        open_rings: HashMap::new(),
    };
    parser.run()?;
    let mut g = parser.build()?;
    g.source_text = trimmed.to_string();
    Ok(g)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn err(&self, msg: impl Into<String>) -> SmilesError {
        SmilesError::syntax(self.pos, msg)
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let prev = self.prev.ok_or_else(|| self.err("branch without a preceding atom"))?;
                    if self.pending.is_some() {
                        return Err(self.err("bond symbol before branch"));
                    }
                    self.branch_stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    if self.pending.is_some() {
                        return Err(self.err("dangling bond at end of branch"));
                    }
                    let top = self.branch_stack.pop().ok_or_else(|| self.err("unbalanced ')'"))?;
                    // An empty branch "()" leaves prev at the branch point.
                    if self.text[self.pos - 1] == b'(' {
                        return Err(self.err("empty branch"));
                    }
                    self.prev = Some(top);
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(self.err("bond symbol before '.'"));
                    }
                    if !self.branch_stack.is_empty() {
                        return Err(self.err("'.' inside a branch"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() {
                        return Err(self.err("two consecutive bond symbols"));
                    }
                    if self.prev.is_none() {
                        return Err(self.err("bond symbol without a preceding atom"));
                    }
                    self.pending = Some(match c {
                        b'-' => PendingBond::Explicit(BondOrder::Single),
                        b'=' => PendingBond::Explicit(BondOrder::Double),
                        b'#' => PendingBond::Explicit(BondOrder::Triple),
                        b':' => PendingBond::Explicit(BondOrder::Aromatic),
                        _ => PendingBond::Directional,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.push_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.push_atom(atom)?;
                }
            }
        }
        if !self.branch_stack.is_empty() {
            return Err(self.err("unbalanced '('"));
        }
        if self.pending.is_some() {
            return Err(self.err("dangling bond at end of input"));
        }
        if let Some((digit, _)) = self.open_rings.iter().min_by_key(|(d, _)| **d) {
            return Err(self.err(format!("unclosed ring bond {digit}")));
        }
        Ok(())
    }

    fn push_atom(&mut self, atom: Atom) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = self.pending.take().map(resolve_pending);
            self.bonds.push(RawBond { a: prev, b: idx, order });
        } else if self.pending.is_some() {
            return Err(self.err("bond symbol without a preceding atom"));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let prev = self.prev.ok_or_else(|| self.err("ring bond without a preceding atom"))?;
        let digit = if self.peek() == Some(b'%') {
            let d = self.text.get(self.pos + 1..self.pos + 3);
            match d {
                Some([a, b]) if a.is_ascii_digit() && b.is_ascii_digit() => {
                    self.pos += 3;
                    u32::from(a - b'0') * 10 + u32::from(b - b'0')
                }
                _ => return Err(self.err("'%' must be followed by two digits")),
            }
        } else {
            let d = u32::from(self.text[self.pos] - b'0');
            self.pos += 1;
            d
        };
        let bond = self.pending.take();
        match self.open_rings.remove(&digit) {
            Some((other, open_bond, _)) => {
                if other == prev {
                    return Err(SmilesError::syntax(start, "ring bond closes on its own atom"));
                }
                let order = match (open_bond.map(resolve_pending), bond.map(resolve_pending)) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(SmilesError::syntax(start, "conflicting ring bond orders"))
                    }
                    (a, b) => a.or(b),
                };
                self.bonds.push(RawBond { a: other, b: prev, order });
            }
            None => {
                self.open_rings.insert(digit, (prev, bond, start));
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let rest = &self.text[self.pos..];
        let (element, aromatic, len) = match rest {
            [b'C', b'l', ..] => (Element::Cl, false, 2),
            [b'B', b'r', ..] => (Element::Br, false, 2),
            [b'B', ..] => (Element::B, false, 1),
            [b'C', ..] => (Element::C, false, 1),
            [b'N', ..] => (Element::N, false, 1),
            [b'O', ..] => (Element::O, false, 1),
            [b'P', ..] => (Element::P, false, 1),
            [b'S', ..] => (Element::S, false, 1),
            [b'F', ..] => (Element::F, false, 1),
            [b'I', ..] => (Element::I, false, 1),
            [b'b', ..] => (Element::B, true, 1),
            [b'c', ..] => (Element::C, true, 1),
            [b'n', ..] => (Element::N, true, 1),
            [b'o', ..] => (Element::O, true, 1),
            [b'p', ..] => (Element::P, true, 1),
            [b's', ..] => (Element::S, true, 1),
            _ => {
                let shown = String::from_utf8_lossy(&rest[..rest.len().min(2)]).into_owned();
                return Err(self.err(format!("unknown element or character '{shown}'")));
            }
        };
        self.pos += len;
        Ok(Atom {
            element,
            aromatic,
            ..Atom::new(element)
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let close = self.text[self.pos..]
            .iter()
            .position(|&c| c == b']')
            .map(|p| self.pos + p)
            .ok_or_else(|| self.err("unterminated bracket atom"))?;
        let body = &self.text[self.pos + 1..close];
        let origin = self.pos;
        let bad = |msg: &str| SmilesError::syntax(origin, msg.to_string());
        let mut i = 0;
        // Isotope numbers are dropped.
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        let (element, aromatic, len) = bracket_element(&body[i..]).ok_or_else(|| {
            let shown = String::from_utf8_lossy(body).into_owned();
            SmilesError::syntax(origin, format!("unknown element in '[{shown}]'"))
        })?;
        i += len;
        if aromatic && !element.can_be_aromatic() {
            return Err(bad("element cannot be aromatic"));
        }
        // Chirality: '@', '@@', '@TH1', '@SP2', ... all dropped.
        if i < body.len() && body[i] == b'@' {
            while i < body.len() && body[i] == b'@' {
                i += 1;
            }
            while i < body.len() && (body[i].is_ascii_uppercase() && body[i] != b'H' || body[i].is_ascii_digit()) {
                i += 1;
            }
        }
        let mut explicit_h = 0u8;
        if i < body.len() && body[i] == b'H' {
            i += 1;
            explicit_h = 1;
            let start = i;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
            if i > start {
                explicit_h = std::str::from_utf8(&body[start..i])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad hydrogen count"))?;
            }
        }
        let mut charge: i8 = 0;
        if i < body.len() && (body[i] == b'+' || body[i] == b'-') {
            let sign: i8 = if body[i] == b'+' { 1 } else { -1 };
            let symbol = body[i];
            i += 1;
            let start = i;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
            if i > start {
                let mag: i8 = std::str::from_utf8(&body[start..i])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad charge"))?;
                charge = sign * mag;
            } else {
                let mut mag = 1;
                while i < body.len() && body[i] == symbol {
                    mag += 1;
                    i += 1;
                }
                charge = sign * mag;
            }
        }
        // Atom class ":n" is dropped.
        if i < body.len() && body[i] == b':' {
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i != body.len() {
            return Err(bad("unparseable bracket atom"));
        }
        self.pos = close + 1;
        Ok(Atom {
            element,
            aromatic,
            formal_charge: charge,
            explicit_h,
            bracket: true,
            index: 0,
        })
    }

    fn build(self) -> Result<MolecularGraph, SmilesError> {
        let mut g = MolecularGraph::new();
        for atom in self.atoms {
            g.add_atom(atom);
        }
        let mut tentative = Vec::new();
        for raw in &self.bonds {
            let order = match raw.order {
                Some(o) => o,
                None if g.atom(raw.a).aromatic && g.atom(raw.b).aromatic => {
                    tentative.push(g.bond_count());
                    BondOrder::Aromatic
                }
                None => BondOrder::Single,
            };
            g.add_bond(raw.a, raw.b, order)
                .map_err(|_| SmilesError::syntax(0, format!("duplicate bond between atoms {} and {}", raw.a, raw.b)))?;
        }
        g.refresh_rings();
        // An unmarked bond between two aromatic atoms is only aromatic inside
        // a ring (biphenyl-style links are single).
        let mut demoted = false;
        for bi in tentative {
            if !g.bond(bi).in_ring {
                g.set_bond_order(bi, BondOrder::Single);
                demoted = true;
            }
        }
        if demoted {
            g.refresh_rings();
        }
        perceive_aromaticity(&mut g)?;
        g.sanitize()?;
        Ok(g)
    }
}

fn resolve_pending(p: PendingBond) -> BondOrder {
    match p {
        PendingBond::Explicit(o) => o,
        PendingBond::Directional => BondOrder::Single,
    }
}

fn bracket_element(s: &[u8]) -> Option<(Element, bool, usize)> {
    let two = |a: u8, b: u8| s.len() >= 2 && s[0] == a && s[1] == b;
    if two(b'C', b'l') {
        return Some((Element::Cl, false, 2));
    }
    if two(b'B', b'r') {
        return Some((Element::Br, false, 2));
    }
    let first = *s.first()?;
    // Reject unsupported two-letter symbols such as "Si" or "Na" rather than
    // reading them as a one-letter element followed by junk.
    if first.is_ascii_uppercase() && s.get(1).is_some_and(|c| c.is_ascii_lowercase()) {
        return None;
    }
    let (element, aromatic) = match first {
        b'H' => (Element::H, false),
        b'B' => (Element::B, false),
        b'C' => (Element::C, false),
        b'N' => (Element::N, false),
        b'O' => (Element::O, false),
        b'P' => (Element::P, false),
        b'S' => (Element::S, false),
        b'F' => (Element::F, false),
        b'I' => (Element::I, false),
        b'b' => (Element::B, true),
        b'c' => (Element::C, true),
        b'n' => (Element::N, true),
        b'o' => (Element::O, true),
        b'p' => (Element::P, true),
        b's' => (Element::S, true),
        _ => return None,
    };
    Some((element, aromatic, 1))
}

/// Marks kekulized rings aromatic when every ring atom is sp2 or a lone-pair
/// donor and the ring holds 4n+2 pi electrons. Atoms whose hydrogen count
/// would change under the aromatic valence model keep it explicitly.
fn perceive_aromaticity(g: &mut MolecularGraph) -> Result<(), SmilesError> {
    let rings = g.rings().to_vec();
    let mut aromatic_rings = Vec::new();
    for ring in &rings {
        let ring_bonds: Vec<usize> = (0..ring.len())
            .filter_map(|k| g.bond_between(ring[k], ring[(k + 1) % ring.len()]))
            .collect();
        if ring_bonds.iter().all(|&b| g.bond(b).order == BondOrder::Aromatic) {
            continue;
        }
        let mut electrons = 0usize;
        let mut ok = true;
        for &atom in ring {
            match pi_electrons(g, atom) {
                Some(e) => electrons += e,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && electrons % 4 == 2 {
            aromatic_rings.push((ring.clone(), ring_bonds));
        }
    }
    if aromatic_rings.is_empty() {
        return Ok(());
    }
    let before: Vec<u8> = (0..g.atom_count()).map(|i| g.hydrogen_count(i)).collect();
    let mut touched = Vec::new();
    for (ring, bonds) in &aromatic_rings {
        for &a in ring {
            if !g.atom(a).aromatic {
                g.atom_mut(a).aromatic = true;
                touched.push(a);
            }
        }
        for &b in bonds {
            g.set_bond_order(b, BondOrder::Aromatic);
        }
    }
    g.refresh_rings();
    let changed: Vec<usize> = touched
        .into_iter()
        .filter(|&a| !g.atom(a).bracket && g.implicit_hydrogens(a) != Some(before[a]))
        .collect();
    g.lock_hydrogens_to(&changed, &before);
    Ok(())
}

/// Pi electrons an atom donates to a ring, or `None` if it cannot be part of
/// an aromatic ring.
fn pi_electrons(g: &MolecularGraph, atom: usize) -> Option<usize> {
    let a = g.atom(atom);
    let mut ring_double = false;
    for &(_, b) in g.neighbors(atom) {
        let bond = g.bond(b);
        match bond.order {
            BondOrder::Triple => return None,
            BondOrder::Double if bond.in_ring => ring_double = true,
            BondOrder::Double => return None,
            _ => {}
        }
    }
    if ring_double {
        return Some(1);
    }
    let connections = g.degree(atom) + g.hydrogen_count(atom) as usize;
    let lone_pair_donor = a.formal_charge == 0
        && match a.element {
            Element::N | Element::P => connections == 3,
            Element::O | Element::S => connections == 2,
            _ => false,
        };
    if lone_pair_donor {
        return Some(2);
    }
    if a.aromatic {
        return Some(1);
    }
    None
}

impl MolecularGraph {
    fn lock_hydrogens_to(&mut self, which: &[usize], counts: &[u8]) {
        for &i in which {
            let atom = self.atom_mut(i);
            atom.bracket = true;
            atom.explicit_h = counts[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{formula_string, is_isomorphic};

    fn syntax_err(s: &str) -> bool {
        matches!(parse_smiles(s), Err(SmilesError::Syntax { .. }))
    }

    #[test]
    fn syntax_errors() {
        assert!(syntax_err("C("));
        assert!(syntax_err("C)"));
        assert!(syntax_err("C()C"));
        assert!(syntax_err("C1CC"));
        assert!(syntax_err("[Na+]"));
        assert!(syntax_err("X"));
        assert!(syntax_err("C=="));
        assert!(syntax_err("[C"));
        assert!(syntax_err(""));
        assert!(syntax_err("=C"));
        assert!(syntax_err("C1CC=1C#1"));
    }

    #[test]
    fn valence_errors() {
        assert!(matches!(parse_smiles("C(C)(C)(C)(C)C"), Err(SmilesError::Valence { .. })));
        assert!(matches!(parse_smiles("O=O=O"), Err(SmilesError::Valence { .. })));
        assert!(matches!(parse_smiles("FC(F)(F)(F)F"), Err(SmilesError::Valence { .. })));
    }

    #[test]
    fn aromatic_outside_ring_rejected() {
        assert!(matches!(parse_smiles("cC"), Err(SmilesError::Aromaticity(_))));
        assert!(matches!(parse_smiles("C:C"), Err(SmilesError::Aromaticity(_))));
    }

    #[test]
    fn bracket_atoms() {
        let g = parse_smiles("C[N+](C)(C)C").unwrap();
        assert_eq!(g.atom(1).formal_charge, 1);
        assert_eq!(g.hydrogen_count(1), 0);
        let g = parse_smiles("[O-]C=O").unwrap();
        assert_eq!(g.atom(0).formal_charge, -1);
        assert_eq!(formula_string(&parse_smiles("[CH4]").unwrap()), "CH4");
        assert_eq!(formula_string(&parse_smiles("[NH4+]").unwrap()), "H4N");
        assert!(!parse_smiles("[CH4]").unwrap().atom(0).bracket);
    }

    #[test]
    fn stereo_and_isotopes_are_stripped() {
        let a = parse_smiles("F/C=C/F").unwrap();
        let b = parse_smiles("FC=CF").unwrap();
        assert!(is_isomorphic(&a, &b));
        let c = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        let d = parse_smiles("NC(C)C(=O)O").unwrap();
        assert!(is_isomorphic(&c, &d));
        assert!(is_isomorphic(&parse_smiles("[13CH4]").unwrap(), &parse_smiles("C").unwrap()));
    }

    #[test]
    fn ring_closure_forms() {
        let a = parse_smiles("C%10CCCCC%10").unwrap();
        let b = parse_smiles("C1CCCCC1").unwrap();
        assert!(is_isomorphic(&a, &b));
        let c = parse_smiles("C=1CCCCC1").unwrap();
        assert_eq!(c.bonds().iter().filter(|b| b.order == BondOrder::Double).count(), 1);
        // digits may be reused after closing
        let d = parse_smiles("C1CC1C1CC1").unwrap();
        assert_eq!(d.rings().len(), 2);
    }

    #[test]
    fn kekule_rings_are_perceived() {
        let pairs = [
            ("C1=CC=CC=C1", "c1ccccc1"),
            ("C1=CC=NC=C1", "c1ccncc1"),
            ("C1=CNC=C1", "c1cc[nH]c1"),
            ("C1=COC=C1", "c1ccoc1"),
            ("CN1C=CC=C1", "Cn1cccc1"),
            ("C1=CC=C2C=CC=CC2=C1", "c1ccc2ccccc2c1"),
        ];
        for (kek, arom) in pairs {
            let a = parse_smiles(kek).unwrap();
            let b = parse_smiles(arom).unwrap();
            assert!(is_isomorphic(&a, &b), "{kek} vs {arom}");
            assert_eq!(formula_string(&a), formula_string(&b));
        }
    }

    #[test]
    fn non_aromatic_rings_stay_kekule() {
        let g = parse_smiles("C1=CCC=C1").unwrap();
        assert!(g.atoms().iter().all(|a| !a.aromatic));
        let g = parse_smiles("O=C1C=CC=CN1").unwrap();
        assert!(g.atoms().iter().all(|a| !a.aromatic));
        let g = parse_smiles("C1=CC=CC=CC=C1").unwrap();
        assert!(g.atoms().iter().all(|a| !a.aromatic));
    }

    #[test]
    fn biphenyl_link_is_single() {
        let g = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        let link = g.bond_between(5, 6).unwrap();
        assert_eq!(g.bond(link).order, BondOrder::Single);
        assert!(!g.bond(link).in_ring);
    }

    #[test]
    fn pyrrole_hydrogen_preserved() {
        assert_eq!(formula_string(&parse_smiles("c1cc[nH]c1").unwrap()), "C4H5N");
        assert_eq!(formula_string(&parse_smiles("c1ccsc1").unwrap()), "C4H4S");
        assert_eq!(formula_string(&parse_smiles("c1ccncc1").unwrap()), "C5H5N");
    }
}
