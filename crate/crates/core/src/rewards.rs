//! Composite and Pareto rewards, the replay buffer and priority selection of
//! the next training set.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critics::{normalize, NormalizedVector, PropertyVector};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Learner,
    Expert,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMolecule {
    pub smiles: String,
    pub properties: PropertyVector,
    pub normalized: NormalizedVector,
    pub composite: f64,
    /// 1 is the non-dominated front.
    pub pareto_rank: usize,
    pub source: Source,
}

impl ScoredMolecule {
    pub fn new(smiles: String, properties: PropertyVector, source: Source) -> Self {
        let normalized = normalize(&properties);
        ScoredMolecule {
            smiles,
            properties,
            normalized,
            composite: composite(&normalized),
            pareto_rank: 1,
            source,
        }
    }
}

/// Sum of the components; with four components (no similarity) each gets
/// weight 0.25 instead.
pub fn composite_score(normalized: &[f64]) -> f64 {
    let sum: f64 = normalized.iter().sum();
    if normalized.len() == 4 {
        0.25 * sum
    } else {
        sum
    }
}

pub fn composite(n: &NormalizedVector) -> f64 {
    composite_score(&n.to_vec())
}

/// `a` is at least as good everywhere and differs somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a != b
}

/// Non-dominated sorting into fronts of point indices, best front first.
/// Indices within a front ascend.
pub fn pareto_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&points[i], &points[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Front number of every point, starting at 1.
pub fn front_ranks(fronts: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut ranks = vec![0; n];
    for (k, front) in fronts.iter().enumerate() {
        for &i in front {
            ranks[i] = k + 1;
        }
    }
    ranks
}

/// Pareto reward: a point in front `j` receives `sum_{i >= j} |P_i|`, so the
/// first front gets the whole population and later fronts strictly less.
pub fn pareto_rewards(fronts: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut rewards = vec![0; n];
    let mut tail = 0;
    for front in fronts.iter().rev() {
        tail += front.len();
        for &i in front {
            rewards[i] = tail;
        }
    }
    rewards
}

/// Objective vectors used for dominance: five components when every molecule
/// has a similarity value, otherwise the four shared ones.
fn objective_vectors(mols: &[ScoredMolecule]) -> Vec<Vec<f64>> {
    let all_similar = mols.iter().all(|m| m.normalized.similarity.is_some());
    mols.iter()
        .map(|m| {
            let mut v = m.normalized.to_vec();
            if !all_similar {
                v.truncate(4);
            }
            v
        })
        .collect()
}

/// Recomputes `pareto_rank` across `mols` and returns their Pareto rewards.
pub fn assign_pareto(mols: &mut [ScoredMolecule]) -> Vec<usize> {
    let n = mols.len();
    let fronts = pareto_fronts(&objective_vectors(mols));
    for (m, r) in mols.iter_mut().zip(front_ranks(&fronts, n)) {
        m.pareto_rank = r;
    }
    pareto_rewards(&fronts, n)
}

/// Deduplicated pool of scored molecules.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    entries: Vec<ScoredMolecule>,
    index: HashMap<String, usize>,
    pub capacity: Option<usize>,
    /// Inserts refused as duplicates or for lack of room.
    pub refused: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: Option<usize>) -> Self {
        ReplayBuffer {
            capacity,
            ..ReplayBuffer::default()
        }
    }

    /// Adds `m` unless its canonical SMILES is already present or the buffer is
    /// full.
    pub fn insert(&mut self, m: ScoredMolecule) -> bool {
        let full = self.capacity.is_some_and(|c| self.entries.len() >= c);
        if full || self.index.contains_key(&m.smiles) {
            self.refused += 1;
            return false;
        }
        self.index.insert(m.smiles.clone(), self.entries.len());
        self.entries.push(m);
        true
    }

    pub fn contains(&self, smiles: &str) -> bool {
        self.index.contains_key(smiles)
    }

    pub fn entries(&self) -> &[ScoredMolecule] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.index.clear();
        self.refused = 0;
    }

    /// Updates every entry's front number and returns the Pareto rewards.
    pub fn rank(&mut self) -> Vec<usize> {
        assign_pareto(&mut self.entries)
    }
}

/// Ranks 1..=n (larger value, larger rank) with ties sharing their average.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Selection weights: within-buffer rank of the Pareto reward plus rank of
/// the composite score.
pub fn priority_weights(buffer: &[ScoredMolecule]) -> Vec<f64> {
    let mut mols = buffer.to_vec();
    let pareto: Vec<f64> = assign_pareto(&mut mols).into_iter().map(|r| r as f64).collect();
    let comp: Vec<f64> = buffer.iter().map(|m| m.composite).collect();
    average_ranks(&pareto)
        .into_iter()
        .zip(average_ranks(&comp))
        .map(|(a, b)| a + b)
        .collect()
}

/// Weighted sampling without replacement (exponential keys); returns all
/// indices, most preferred first.
fn weighted_order(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w.max(f64::MIN_POSITIVE), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

pub const PRIORITY_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub dataset: Vec<ScoredMolecule>,
    /// Leading entries of `dataset` drawn from the buffer by priority.
    pub priority_len: usize,
}

impl Selection {
    pub fn priority(&self) -> &[ScoredMolecule] {
        &self.dataset[..self.priority_len]
    }
}

/// New training set: 80% priority-sampled from `buffer`, 20% uniform from
/// `previous`, unique by SMILES. A short source is backfilled by the other.
pub fn select_dataset(
    buffer: &[ScoredMolecule],
    previous: &[ScoredMolecule],
    target_size: usize,
    rng: &mut impl Rng,
) -> Selection {
    let want_priority = (PRIORITY_FRACTION * target_size as f64).round() as usize;
    let order = weighted_order(&priority_weights(buffer), rng);
    let mut prev_order: Vec<usize> = (0..previous.len()).collect();
    prev_order.shuffle(rng);

    let mut taken: HashSet<&str> = HashSet::new();
    let mut dataset = Vec::with_capacity(target_size);
    let mut buffer_iter = order.into_iter().map(|i| &buffer[i]).peekable();
    while dataset.len() < want_priority {
        let Some(m) = buffer_iter.next() else { break };
        if taken.insert(&m.smiles) {
            dataset.push(m.clone());
        }
    }
    let priority_len = dataset.len();
    let mut prev_iter = prev_order.into_iter().map(|i| &previous[i]);
    while dataset.len() < target_size {
        let Some(m) = prev_iter.next() else { break };
        if taken.insert(&m.smiles) {
            dataset.push(m.clone());
        }
    }
    // Previous dataset ran short: continue down the priority order.
    while dataset.len() < target_size {
        let Some(m) = buffer_iter.next() else { break };
        if taken.insert(&m.smiles) {
            dataset.push(m.clone());
        }
    }
    Selection { dataset, priority_len }
}

pub fn write_scored(path: &Path, mols: &[ScoredMolecule]) -> Result<(), RewardError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for m in mols {
        serde_json::to_writer(&mut out, m).map_err(|e| RewardError::Json { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scored(path: &Path) -> Result<Vec<ScoredMolecule>, RewardError> {
    let reader = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RewardError::Json { line: n + 1, source: e })?);
    }
    Ok(out)
}
