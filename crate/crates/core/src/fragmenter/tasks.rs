use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::molgraph::{write_smiles, MolecularGraph};

use super::cleave::{cleave, heavy_count, side, CleaveOptions};
use super::energy::{annotate_energies, eligible_bonds};
use super::FragmentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Link,
    Merge,
    Grow,
    /// Molecule only, no prompt fragments.
    Plain,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Link, TaskKind::Merge, TaskKind::Grow, TaskKind::Plain];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Link => "link",
            TaskKind::Merge => "merge",
            TaskKind::Grow => "grow",
            TaskKind::Plain => "plain",
        }
    }

    /// Number of prompt fragments this kind carries.
    pub fn arity(self) -> usize {
        match self {
            TaskKind::Link | TaskKind::Merge => 2,
            TaskKind::Grow => 1,
            TaskKind::Plain => 0,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub kind: TaskKind,
    pub prompt_fragments: Vec<String>,
    pub target: String,
}

impl TaskExample {
    pub fn plain(target: impl Into<String>) -> Self {
        TaskExample {
            kind: TaskKind::Plain,
            prompt_fragments: Vec::new(),
            target: target.into(),
        }
    }
}

/// A bridged three-way split of a molecule: `b` touches both cuts, `a` and
/// `c` are the ends, ordered by their lowest atom index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
    /// The two cut bonds (bond indices), ascending.
    pub bonds: (usize, usize),
}

/// Most balanced bridged split: maximizes the smallest part (in heavy atoms),
/// then prefers weaker cut bonds, then lower bond indices. Parts below
/// `min_fragment_atoms` are not allowed.
pub fn best_split(g: &MolecularGraph, opts: &CleaveOptions) -> Option<Split> {
    if g.is_empty() || !g.is_connected() {
        return None;
    }
    let energies = annotate_energies(g, &opts.table);
    let mut candidates = eligible_bonds(g, &energies, opts.cutoff);
    candidates.sort_unstable();
    let mut best: Option<(usize, f64, Split)> = None;
    for (k, &i) in candidates.iter().enumerate() {
        for &j in &candidates[k + 1..] {
            let cut = [i, j];
            let (bi, bj) = (g.bond(i), g.bond(j));
            let parts_i = [side(g, bi.a, &cut), side(g, bi.b, &cut)];
            let parts_j = [side(g, bj.a, &cut), side(g, bj.b, &cut)];
            let Some(mid) = parts_i.iter().find(|p| parts_j.contains(p)) else {
                continue;
            };
            let end_i = parts_i.iter().find(|p| *p != mid).expect("two sides");
            let end_j = parts_j.iter().find(|p| *p != mid).expect("two sides");
            let sizes = [heavy_count(g, end_i), heavy_count(g, mid), heavy_count(g, end_j)];
            let smallest = *sizes.iter().min().expect("three parts");
            if smallest < opts.min_fragment_atoms.max(1) {
                continue;
            }
            let energy = energies[i] + energies[j];
            let better = match &best {
                None => true,
                Some((s, e, _)) => smallest > *s || (smallest == *s && energy < *e),
            };
            if better {
                let (a, c) = if end_i[0] <= end_j[0] {
                    (end_i.clone(), end_j.clone())
                } else {
                    (end_j.clone(), end_i.clone())
                };
                best = Some((
                    smallest,
                    energy,
                    Split {
                        a,
                        b: mid.clone(),
                        c,
                        bonds: (i, j),
                    },
                ));
            }
        }
    }
    best.map(|(_, _, s)| s)
}

fn union(x: &[usize], y: &[usize]) -> Vec<usize> {
    let mut out = [x, y].concat();
    out.sort_unstable();
    out
}

/// Link task: the two end fragments prompt for the whole molecule.
pub fn make_link_example(g: &MolecularGraph, opts: &CleaveOptions) -> Result<TaskExample, FragmentError> {
    let split = best_split(g, opts).ok_or(FragmentError::InsufficientFragments)?;
    Ok(TaskExample {
        kind: TaskKind::Link,
        prompt_fragments: vec![
            write_smiles(&g.induced_subgraph(&split.a)),
            write_smiles(&g.induced_subgraph(&split.c)),
        ],
        target: write_smiles(g),
    })
}

/// Merge task: the two overlapping halves `AB` and `BC` prompt for the whole
/// molecule.
pub fn make_merge_example(g: &MolecularGraph, opts: &CleaveOptions) -> Result<TaskExample, FragmentError> {
    let split = best_split(g, opts).ok_or(FragmentError::InsufficientFragments)?;
    Ok(TaskExample {
        kind: TaskKind::Merge,
        prompt_fragments: vec![
            write_smiles(&g.induced_subgraph(&union(&split.a, &split.b))),
            write_smiles(&g.induced_subgraph(&union(&split.b, &split.c))),
        ],
        target: write_smiles(g),
    })
}

/// Grow task: one randomly chosen cleavage fragment prompts for the whole
/// molecule.
pub fn make_grow_example(
    g: &MolecularGraph,
    opts: &CleaveOptions,
    rng: &mut impl Rng,
) -> Result<TaskExample, FragmentError> {
    if g.is_empty() || !g.is_connected() {
        return Err(FragmentError::InsufficientFragments);
    }
    let set = cleave(g, opts);
    if set.len() < 2 {
        return Err(FragmentError::InsufficientFragments);
    }
    let pick = rng.random_range(0..set.len());
    Ok(TaskExample {
        kind: TaskKind::Grow,
        prompt_fragments: vec![write_smiles(&set.fragments[pick])],
        target: write_smiles(g),
    })
}
