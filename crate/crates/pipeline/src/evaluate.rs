//! Set-level metrics over generated molecules and side-by-side report tables.

use fragforge_core::critics::{normalize, CriticError, Critics, PropertyVector};
use fragforge_core::molgraph::{parse_smiles, MolecularGraph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of molecules the standard evaluation samples.
pub const DEFAULT_POPULATION: usize = 1280;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no molecules to evaluate")]
    EmptyInput,
    #[error("{molecules} molecules but {references} references")]
    Misaligned { molecules: usize, references: usize },
    #[error("reference {index} is not a valid molecule: {text}")]
    BadReference { index: usize, text: String },
    #[error(transparent)]
    Critic(#[from] CriticError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_evaluated: usize,
    pub n_valid: usize,
    pub validity: f64,
    pub avg_norm_reward: Option<f64>,
    pub avg_top10_norm_reward: Option<f64>,
    /// Molecules averaged for the top-10% figure, boundary ties included.
    pub top10_count: usize,
    pub docking: Option<f64>,
    pub druglikeness: Option<f64>,
    pub synthesizability: Option<f64>,
    pub solubility: Option<f64>,
    pub similarity: Option<f64>,
}

/// Mean of a molecule's normalized property values.
pub fn normalized_reward(p: &PropertyVector) -> f64 {
    let v = normalize(p).to_vec();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over the best `ceil(0.1 n)` values, extended to every value tied
/// with the last one taken. Returns the mean and the count used.
pub fn top_decile_mean(values: &[f64]) -> Option<(f64, usize)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (values.len() as f64 * 0.1).ceil() as usize;
    let cutoff = sorted[k - 1];
    let taken: Vec<f64> = sorted.into_iter().take_while(|&v| v >= cutoff).collect();
    Some((taken.iter().sum::<f64>() / taken.len() as f64, taken.len()))
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Scores `molecules` and summarizes them. `references[i]`, when given, is
/// the molecule the i-th one should stay similar to; without references the
/// report uses the four-objective reward.
pub fn evaluate<S: AsRef<str>>(
    molecules: &[S],
    references: Option<&[S]>,
    critics: &Critics,
) -> Result<MetricsReport, EvalError> {
    if molecules.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(r) = references {
        if r.len() != molecules.len() {
            return Err(EvalError::Misaligned {
                molecules: molecules.len(),
                references: r.len(),
            });
        }
    }
    let mut graphs = Vec::new();
    let mut refs: Vec<Vec<MolecularGraph>> = Vec::new();
    for (i, m) in molecules.iter().enumerate() {
        let Ok(g) = parse_smiles(m.as_ref()) else { continue };
        if g.is_empty() {
            continue;
        }
        graphs.push(g);
        refs.push(match references {
            Some(r) => {
                let text = r[i].as_ref();
                vec![parse_smiles(text).map_err(|_| EvalError::BadReference {
                    index: i,
                    text: text.to_string(),
                })?]
            }
            None => Vec::new(),
        });
    }
    let props = critics.properties(&graphs, &refs)?;
    let rewards: Vec<f64> = props.iter().map(normalized_reward).collect();
    let col = |f: fn(&PropertyVector) -> f64| mean_of(&props.iter().map(f).collect::<Vec<_>>());
    let sims: Vec<f64> = props.iter().filter_map(|p| p.similarity).collect();
    let top = top_decile_mean(&rewards);
    Ok(MetricsReport {
        n_evaluated: molecules.len(),
        n_valid: graphs.len(),
        validity: graphs.len() as f64 / molecules.len() as f64,
        avg_norm_reward: mean_of(&rewards),
        avg_top10_norm_reward: top.map(|t| t.0),
        top10_count: top.map_or(0, |t| t.1),
        docking: col(|p| p.docking),
        druglikeness: col(|p| p.druglikeness),
        synthesizability: col(|p| p.synthesizability),
        solubility: col(|p| p.solubility),
        similarity: mean_of(&sims),
    })
}

const COLUMNS: [&str; 9] = [
    "Model",
    "Validity",
    "Avg Norm Reward",
    "Avg Top 10% Norm Reward",
    "Docking",
    "Druglikeness",
    "Synthesizability",
    "Solubility",
    "Similarity",
];

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Aligned plain-text table with one row per named report.
pub fn report_table(rows: &[(String, MetricsReport)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![COLUMNS.iter().map(|c| c.to_string()).collect()];
    for (name, r) in rows {
        cells.push(vec![
            name.clone(),
            format!("{:.3}", r.validity),
            cell(r.avg_norm_reward),
            cell(r.avg_top10_norm_reward),
            cell(r.docking),
            cell(r.druglikeness),
            cell(r.synthesizability),
            cell(r.solubility),
            cell(r.similarity),
        ]);
    }
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Per-iteration table of an alignment run.
pub fn rae_table(metrics: &[crate::rae::IterationMetrics]) -> String {
    let mut out = format!(
        "{:>4}  {:>8}  {:>7}  {:>6}  {:>10}  {:>10}  {:>10}\n",
        "iter", "validity", "buffer", "expert", "buffer avg", "top80 avg", "dataset avg"
    );
    for m in metrics {
        out.push_str(&format!(
            "{:>4}  {:>8.3}  {:>7}  {:>6}  {:>10.4}  {:>10.4}  {:>10.4}\n",
            m.iteration,
            m.validity,
            m.buffer_size,
            m.expert_added,
            m.buffer_mean_composite,
            m.priority_mean_composite,
            m.dataset_mean_composite
        ));
    }
    out
}
