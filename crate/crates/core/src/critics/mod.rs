//! Property critics: docking, druglikeness, synthesizability, solubility
//! (LogP) and similarity, plus their normalization onto `[0, 1]`.

mod descriptors;
mod docking;
mod fingerprint;
mod params;
mod sascore;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::{MolecularGraph, SmilesError};

pub use descriptors::{
    aromatic_rings, descriptors, druglikeness, h_bond_acceptors, h_bond_donors, logp, rotatable_bonds, Descriptors,
    DruglikenessModel, LogpModel, DESCRIPTOR_NAMES, DRUGLIKENESS_PARAMS, LOGP_PARAMS,
};
pub use docking::{DockingOracle, HeuristicOracle, SubprocessOracle, DOCKING_BEST, DOCKING_WORST};
pub use fingerprint::{default_fingerprint, fingerprint, tanimoto, Fingerprint, DEFAULT_BITS, DEFAULT_RADIUS};
pub use params::{Curve, ParamFile};
pub use sascore::{SaModel, SaTerms};

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("synthesizability model has no fitted frequency table")]
    Uncalibrated,
    #[error("docking oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("parameter file: {0}")]
    Params(String),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
}

pub const PROPERTY_NAMES: [&str; 5] = ["docking", "druglikeness", "synthesizability", "solubility", "similarity"];

/// Raw critic outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyVector {
    /// Lower is better.
    pub docking: f64,
    pub druglikeness: f64,
    /// 1 (easy) to 10 (hard).
    pub synthesizability: f64,
    /// LogP.
    pub solubility: f64,
    pub similarity: Option<f64>,
}

/// Normalized critic outputs, all in `[0, 1]` and higher-better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedVector {
    pub docking: f64,
    pub druglikeness: f64,
    pub synthesizability: f64,
    pub solubility: f64,
    pub similarity: Option<f64>,
}

impl NormalizedVector {
    /// Four or five components, similarity last.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.docking, self.druglikeness, self.synthesizability, self.solubility];
        v.extend(self.similarity);
        v
    }
}

pub const SOLUBILITY_LOW: f64 = -5.0;
pub const SOLUBILITY_PEAK: f64 = 2.0;
pub const SOLUBILITY_HIGH: f64 = 10.0;

pub fn normalize_docking(score: f64) -> f64 {
    ((DOCKING_WORST - score) / (DOCKING_WORST - DOCKING_BEST)).clamp(0.0, 1.0)
}

pub fn normalize_synthesizability(sa: f64) -> f64 {
    ((10.0 - sa) / 9.0).clamp(0.0, 1.0)
}

/// Tent over LogP: 1 at the peak, 0 at and beyond either end.
pub fn normalize_solubility(logp: f64) -> f64 {
    let v = if logp <= SOLUBILITY_PEAK {
        (logp - SOLUBILITY_LOW) / (SOLUBILITY_PEAK - SOLUBILITY_LOW)
    } else {
        (SOLUBILITY_HIGH - logp) / (SOLUBILITY_HIGH - SOLUBILITY_PEAK)
    };
    v.clamp(0.0, 1.0)
}

fn unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

pub fn normalize(p: &PropertyVector) -> NormalizedVector {
    NormalizedVector {
        docking: unit(normalize_docking(p.docking)),
        druglikeness: unit(p.druglikeness),
        synthesizability: unit(normalize_synthesizability(p.synthesizability)),
        solubility: unit(normalize_solubility(p.solubility)),
        similarity: p.similarity.map(unit),
    }
}

/// The critic ensemble: a fitted synthesizability model and a docking oracle.
pub struct Critics {
    pub sa: SaModel,
    pub oracle: Box<dyn DockingOracle>,
}

impl Critics {
    pub fn new(sa: SaModel, oracle: Box<dyn DockingOracle>) -> Self {
        Critics { sa, oracle }
    }

    /// Properties of each molecule. `references[i]` holds the molecules the
    /// i-th candidate was derived from; similarity is the best Tanimoto over
    /// them, absent when the list is empty.
    pub fn properties(
        &self,
        mols: &[MolecularGraph],
        references: &[Vec<MolecularGraph>],
    ) -> Result<Vec<PropertyVector>, CriticError> {
        let smiles: Vec<String> = mols.iter().map(crate::molgraph::write_smiles).collect();
        let docking = if mols.is_empty() {
            Vec::new()
        } else {
            self.oracle.score_batch(&smiles)?
        };
        let mut out = Vec::with_capacity(mols.len());
        for (i, g) in mols.iter().enumerate() {
            let similarity = match references.get(i) {
                Some(refs) if !refs.is_empty() => {
                    let fp = default_fingerprint(g);
                    let mut best: f64 = 0.0;
                    for r in refs {
                        best = best.max(tanimoto(&fp, &default_fingerprint(r))?);
                    }
                    Some(best)
                }
                _ => None,
            };
            out.push(PropertyVector {
                docking: docking[i],
                druglikeness: druglikeness(g),
                synthesizability: self.sa.score(g)?,
                solubility: logp(g),
                similarity,
            });
        }
        Ok(out)
    }
}
