use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::molgraph::{molecular_weight, BondOrder, Element, MolecularGraph};

use super::params::{Curve, ParamFile};
use super::CriticError;

pub const DRUGLIKENESS_PARAMS: &str = include_str!("../../params/druglikeness.params");
pub const LOGP_PARAMS: &str = include_str!("../../params/logp.params");

/// The six inputs of the druglikeness estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptors {
    pub mw: f64,
    pub logp: f64,
    pub hbd: usize,
    pub hba: usize,
    pub rotb: usize,
    pub arom: usize,
}

pub const DESCRIPTOR_NAMES: [&str; 6] = ["mw", "logp", "hbd", "hba", "rotb", "arom"];

impl Descriptors {
    pub fn values(&self) -> [f64; 6] {
        [
            self.mw,
            self.logp,
            self.hbd as f64,
            self.hba as f64,
            self.rotb as f64,
            self.arom as f64,
        ]
    }
}

fn is_hetero(e: Element) -> bool {
    !matches!(e, Element::C | Element::H | Element::B)
}

fn is_amide_nitrogen(g: &MolecularGraph, i: usize) -> bool {
    g.neighbors(i).iter().any(|&(c, _)| {
        g.atom(c).element == Element::C
            && g.neighbors(c).iter().any(|&(o, b)| {
                g.atom(o).element == Element::O && g.bond(b).order == BondOrder::Double
            })
    })
}

pub fn h_bond_donors(g: &MolecularGraph) -> usize {
    (0..g.atom_count())
        .filter(|&i| matches!(g.atom(i).element, Element::N | Element::O) && g.hydrogen_count(i) > 0)
        .count()
}

/// Oxygens, plus nitrogens with a free lone pair (not amide, not pyrrole-like,
/// not cationic).
pub fn h_bond_acceptors(g: &MolecularGraph) -> usize {
    (0..g.atom_count())
        .filter(|&i| {
            let a = g.atom(i);
            match a.element {
                Element::O => a.formal_charge <= 0,
                Element::N => {
                    a.formal_charge <= 0
                        && !(a.aromatic && g.hydrogen_count(i) > 0)
                        && !(!a.aromatic && is_amide_nitrogen(g, i))
                }
                _ => false,
            }
        })
        .count()
}

/// Acyclic single bonds between two non-terminal heavy atoms, excluding bonds
/// to triple-bonded (linear) atoms.
pub fn rotatable_bonds(g: &MolecularGraph) -> usize {
    let heavy_degree = |i: usize| {
        g.neighbors(i)
            .iter()
            .filter(|&&(w, _)| g.atom(w).element != Element::H)
            .count()
    };
    let has_triple = |i: usize| g.neighbors(i).iter().any(|&(_, b)| g.bond(b).order == BondOrder::Triple);
    g.bonds()
        .iter()
        .filter(|b| {
            b.order == BondOrder::Single
                && !b.in_ring
                && heavy_degree(b.a) >= 2
                && heavy_degree(b.b) >= 2
                && !has_triple(b.a)
                && !has_triple(b.b)
        })
        .count()
}

pub fn aromatic_rings(g: &MolecularGraph) -> usize {
    g.rings()
        .iter()
        .filter(|r| r.iter().all(|&i| g.atom(i).aromatic))
        .count()
}

/// Crippen-style additive LogP model read from a parameter file.
#[derive(Debug, Clone)]
pub struct LogpModel {
    pub version: u32,
    contributions: BTreeMap<String, f64>,
}

impl LogpModel {
    pub fn from_params(text: &str) -> Result<Self, CriticError> {
        let file = ParamFile::parse(text)?;
        let mut contributions = BTreeMap::new();
        for k in file.entries.keys() {
            contributions.insert(k.clone(), file.number(k)?);
        }
        if !contributions.contains_key("default") {
            return Err(CriticError::Params("logp table needs a default entry".into()));
        }
        Ok(LogpModel {
            version: file.version,
            contributions,
        })
    }

    pub fn builtin() -> &'static LogpModel {
        static MODEL: OnceLock<LogpModel> = OnceLock::new();
        MODEL.get_or_init(|| LogpModel::from_params(LOGP_PARAMS).expect("bundled logp table parses"))
    }

    fn get(&self, key: &str) -> f64 {
        self.contributions
            .get(key)
            .copied()
            .unwrap_or(self.contributions["default"])
    }

    /// Atom type key used to look up the contribution of atom `i`.
    pub fn atom_type(g: &MolecularGraph, i: usize) -> String {
        let a = g.atom(i);
        let hetero_neighbor = g.neighbors(i).iter().any(|&(w, _)| is_hetero(g.atom(w).element));
        let env = if a.aromatic { "aromatic" } else { "aliphatic" };
        match a.element {
            Element::C if hetero_neighbor => format!("C.{env}.hetero"),
            Element::C => format!("C.{env}"),
            Element::N | Element::O if a.formal_charge != 0 => format!("{}.charged", a.element),
            Element::O if g.neighbors(i).iter().any(|&(_, b)| g.bond(b).order == BondOrder::Double) => {
                "O.carbonyl".to_string()
            }
            Element::N | Element::O | Element::S => format!("{}.{env}", a.element),
            e => e.symbol().to_string(),
        }
    }

    /// Sum of atom contributions, added in sorted order so that the result
    /// does not depend on atom numbering.
    pub fn logp(&self, g: &MolecularGraph) -> f64 {
        let mut parts: Vec<f64> = (0..g.atom_count())
            .map(|i| {
                let h = f64::from(g.hydrogen_count(i));
                let h_key = if g.atom(i).element == Element::C { "H.carbon" } else { "H.hetero" };
                self.get(&Self::atom_type(g, i)) + h * self.get(h_key)
            })
            .collect();
        parts.sort_by(f64::total_cmp);
        parts.iter().sum()
    }
}

pub fn logp(g: &MolecularGraph) -> f64 {
    LogpModel::builtin().logp(g)
}

pub fn descriptors(g: &MolecularGraph) -> Descriptors {
    Descriptors {
        mw: molecular_weight(g),
        logp: logp(g),
        hbd: h_bond_donors(g),
        hba: h_bond_acceptors(g),
        rotb: rotatable_bonds(g),
        arom: aromatic_rings(g),
    }
}

/// Desirability curves for the six descriptors, combined by geometric mean.
#[derive(Debug, Clone)]
pub struct DruglikenessModel {
    pub version: u32,
    pub curves: [Curve; 6],
}

impl DruglikenessModel {
    pub fn from_params(text: &str) -> Result<Self, CriticError> {
        let file = ParamFile::parse(text)?;
        let curves = [
            file.curve("mw")?,
            file.curve("logp")?,
            file.curve("hbd")?,
            file.curve("hba")?,
            file.curve("rotb")?,
            file.curve("arom")?,
        ];
        for c in &curves {
            if c.points().iter().any(|&(_, y)| !(0.0..=1.0).contains(&y)) {
                return Err(CriticError::Params("desirabilities must lie in [0, 1]".into()));
            }
        }
        Ok(DruglikenessModel {
            version: file.version,
            curves,
        })
    }

    pub fn builtin() -> &'static DruglikenessModel {
        static MODEL: OnceLock<DruglikenessModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            DruglikenessModel::from_params(DRUGLIKENESS_PARAMS).expect("bundled druglikeness curves parse")
        })
    }

    pub fn desirabilities(&self, d: &Descriptors) -> [f64; 6] {
        let v = d.values();
        std::array::from_fn(|k| self.curves[k].eval(v[k]))
    }

    pub fn score(&self, d: &Descriptors) -> f64 {
        let des = self.desirabilities(d);
        if des.iter().any(|&x| x <= 0.0) {
            return 0.0;
        }
        let mean_log = des.iter().map(|x| x.ln()).sum::<f64>() / des.len() as f64;
        mean_log.exp().clamp(0.0, 1.0)
    }
}

pub fn druglikeness(g: &MolecularGraph) -> f64 {
    DruglikenessModel::builtin().score(&descriptors(g))
}
