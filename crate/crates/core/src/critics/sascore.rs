use std::collections::HashMap;
use std::fmt::Write as _;

use crate::molgraph::MolecularGraph;

use super::fingerprint::environments;
use super::params::ParamFile;
use super::CriticError;

const SA_RADIUS: usize = 2;

/// Synthetic-accessibility estimate from environment frequencies fitted on a
/// reference corpus.
///
/// `raw = w_f * mean rarity + w_s * ln(heavy atoms) + ring complexity`, mapped
/// affinely from `[0, raw_max]` onto `[1, 10]`. Rarity of an environment is
/// `1 - ln(1 + count) / ln(1 + max count)`, averaged over the radius 0..=2
/// environments of every atom. Keeping `w_s >= 1.2 * w_f` makes lengthening a
/// chain never lower the score: ten more atoms raise the size term by at least
/// `10 w_s / (n + 10)` while the rarity mean can drop by at most
/// `12 w_f / (n + 10)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaModel {
    pub version: u32,
    pub molecules: usize,
    counts: HashMap<u64, u64>,
    max_count: u64,
    pub w_fragment: f64,
    pub w_size: f64,
    pub raw_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaTerms {
    pub rarity: f64,
    pub size: f64,
    pub rings: f64,
}

impl Default for SaModel {
    fn default() -> Self {
        SaModel {
            version: 1,
            molecules: 0,
            counts: HashMap::new(),
            max_count: 0,
            w_fragment: 1.0,
            w_size: 1.25,
            raw_max: 9.0,
        }
    }
}

impl SaModel {
    /// Counts environments over `molecules`.
    pub fn fit<'a>(molecules: impl IntoIterator<Item = &'a MolecularGraph>) -> Self {
        let mut model = SaModel::default();
        for g in molecules {
            model.molecules += 1;
            for ids in environments(g, SA_RADIUS).ids {
                for id in ids {
                    *model.counts.entry(id).or_default() += 1;
                }
            }
        }
        model.max_count = model.counts.values().copied().max().unwrap_or(0);
        model
    }

    pub fn is_fitted(&self) -> bool {
        self.max_count > 0
    }

    fn rarity(&self, id: u64) -> f64 {
        let c = self.counts.get(&id).copied().unwrap_or(0) as f64;
        (1.0 - (1.0 + c).ln() / (1.0 + self.max_count as f64).ln()).clamp(0.0, 1.0)
    }

    pub fn terms(&self, g: &MolecularGraph) -> Result<SaTerms, CriticError> {
        if !self.is_fitted() {
            return Err(CriticError::Uncalibrated);
        }
        let env = environments(g, SA_RADIUS);
        let mut all: Vec<f64> = env.ids.iter().flatten().map(|&id| self.rarity(id)).collect();
        all.sort_by(f64::total_cmp);
        let rarity = if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 };
        let heavy = g.heavy_atom_count().max(1) as f64;
        Ok(SaTerms {
            rarity,
            size: heavy.ln(),
            rings: ring_complexity(g),
        })
    }

    pub fn score(&self, g: &MolecularGraph) -> Result<f64, CriticError> {
        let t = self.terms(g)?;
        let raw = self.w_fragment * t.rarity + self.w_size * t.size + t.rings;
        Ok((1.0 + 9.0 * raw / self.raw_max).clamp(1.0, 10.0))
    }

    pub fn to_params(&self) -> String {
        let mut out = format!(
            "version = {}\nmolecules = {}\nw_fragment = {}\nw_size = {}\nraw_max = {}\n",
            self.version, self.molecules, self.w_fragment, self.w_size, self.raw_max
        );
        let mut ids: Vec<_> = self.counts.iter().collect();
        ids.sort();
        for (id, c) in ids {
            let _ = writeln!(out, "env.{id:016x} = {c}");
        }
        out
    }

    pub fn from_params(text: &str) -> Result<Self, CriticError> {
        let file = ParamFile::parse(text)?;
        let mut model = SaModel {
            version: file.version,
            molecules: file.number("molecules")? as usize,
            w_fragment: file.number("w_fragment")?,
            w_size: file.number("w_size")?,
            raw_max: file.number("raw_max")?,
            ..SaModel::default()
        };
        for (k, v) in &file.entries {
            if let Some(hex) = k.strip_prefix("env.") {
                let id = u64::from_str_radix(hex, 16).map_err(|_| CriticError::Params(format!("bad key {k}")))?;
                let c = v.parse().map_err(|_| CriticError::Params(format!("bad count for {k}")))?;
                model.counts.insert(id, c);
            }
        }
        model.max_count = model.counts.values().copied().max().unwrap_or(0);
        Ok(model)
    }
}

/// Fused ring pairs (sharing one bond), bridged pairs (sharing more), spiro
/// atoms and macrocycles.
fn ring_complexity(g: &MolecularGraph) -> f64 {
    let rings = g.rings();
    let bonds_of = |r: &[usize]| -> Vec<usize> {
        (0..r.len())
            .filter_map(|k| g.bond_between(r[k], r[(k + 1) % r.len()]))
            .collect()
    };
    let ring_bonds: Vec<Vec<usize>> = rings.iter().map(|r| bonds_of(r)).collect();
    let (mut fused, mut bridged, mut spiro) = (0usize, 0usize, 0usize);
    for i in 0..rings.len() {
        for j in i + 1..rings.len() {
            let shared_bonds = ring_bonds[i].iter().filter(|b| ring_bonds[j].contains(b)).count();
            let shared_atoms = rings[i].iter().filter(|a| rings[j].contains(a)).count();
            match shared_bonds {
                0 if shared_atoms == 1 => spiro += 1,
                0 => {}
                1 => fused += 1,
                _ => bridged += 1,
            }
        }
    }
    let macro_cycles = rings.iter().filter(|r| r.len() > 8).count();
    0.5 * fused as f64
        + (1.0 + bridged as f64).ln()
        + (1.0 + spiro as f64).ln()
        + if macro_cycles > 0 { 2f64.ln() } else { 0.0 }
}
