//! Text serialization of training examples and corpus building.
//!
//! Record grammar, one per line:
//!
//! ```text
//! <p1>{f1}<p2>{f2}<L>{target}    link and merge
//! <p1>{f}<L>{target}             grow
//! <L>{target}                    plain
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fragmenter::{
    make_grow_example, make_link_example, make_merge_example, merge_on_mcs, CleaveOptions, FragmentError,
    TaskExample, TaskKind,
};
use crate::molgraph::{parse_smiles, write_smiles};

pub const P1: &str = "<p1>";
pub const P2: &str = "<p2>";
pub const LIGAND: &str = "<L>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record {text:?}: {reason}")]
    Format { text: String, reason: &'static str },
    #[error("mix fractions must be non-negative and sum to 1 (got {0})")]
    Mix(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub kind: TaskKind,
    pub text: String,
    /// Byte offset of the target, just after `<L>`.
    pub prompt_len: usize,
}

impl CorpusRecord {
    pub fn prompt(&self) -> &str {
        &self.text[..self.prompt_len]
    }

    pub fn target(&self) -> &str {
        &self.text[self.prompt_len..]
    }
}

pub fn serialize(e: &TaskExample) -> CorpusRecord {
    let mut text = String::new();
    match e.prompt_fragments.as_slice() {
        [] => {}
        [f] => {
            text.push_str(P1);
            text.push_str(f);
        }
        [f1, f2, ..] => {
            text.push_str(P1);
            text.push_str(f1);
            text.push_str(P2);
            text.push_str(f2);
        }
    }
    text.push_str(LIGAND);
    let prompt_len = text.len();
    text.push_str(&e.target);
    CorpusRecord {
        kind: e.kind,
        text,
        prompt_len,
    }
}

fn format_error(text: &str, reason: &'static str) -> CorpusError {
    CorpusError::Format {
        text: text.to_string(),
        reason,
    }
}

/// Inverse of [`serialize`]. Two-fragment records are link records unless the
/// fragments overlap: merge prompts together hold more heavy atoms than their
/// target, link prompts fewer.
pub fn parse_record(text: &str) -> Result<TaskExample, CorpusError> {
    let (prompt, target) = text
        .split_once(LIGAND)
        .ok_or_else(|| format_error(text, "missing <L>"))?;
    if target.contains('<') {
        return Err(format_error(text, "marker after <L>"));
    }
    if prompt.is_empty() {
        return Ok(TaskExample::plain(target));
    }
    let body = prompt
        .strip_prefix(P1)
        .ok_or_else(|| format_error(text, "prompt must start with <p1>"))?;
    let fragments: Vec<String> = match body.split_once(P2) {
        Some((f1, f2)) => vec![f1.to_string(), f2.to_string()],
        None => vec![body.to_string()],
    };
    if fragments.iter().any(|f| f.is_empty() || f.contains('<')) {
        return Err(format_error(text, "empty or malformed fragment"));
    }
    let kind = match fragments.len() {
        1 => TaskKind::Grow,
        _ if overlapping(&fragments[0], &fragments[1], target) => TaskKind::Merge,
        _ => TaskKind::Link,
    };
    Ok(TaskExample {
        kind,
        prompt_fragments: fragments,
        target: target.to_string(),
    })
}

fn overlapping(f1: &str, f2: &str, target: &str) -> bool {
    let heavy = |s: &str| parse_smiles(s).map(|g| g.heavy_atom_count()).ok();
    match (heavy(f1), heavy(f2), heavy(target)) {
        (Some(a), Some(b), Some(t)) => a + b > t,
        _ => false,
    }
}

/// Fractions of each task kind in a fragment-conditioned corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub link: f64,
    pub merge: f64,
    pub grow: f64,
    pub plain: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            link: 0.4,
            merge: 0.4,
            grow: 0.2,
            plain: 0.0,
        }
    }
}

impl Mix {
    pub fn only(kind: TaskKind) -> Self {
        let mut m = Mix {
            link: 0.0,
            merge: 0.0,
            grow: 0.0,
            plain: 0.0,
        };
        *m.get_mut(kind) = 1.0;
        m
    }

    fn get_mut(&mut self, kind: TaskKind) -> &mut f64 {
        match kind {
            TaskKind::Link => &mut self.link,
            TaskKind::Merge => &mut self.merge,
            TaskKind::Grow => &mut self.grow,
            TaskKind::Plain => &mut self.plain,
        }
    }

    pub fn get(&self, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::Link => self.link,
            TaskKind::Merge => self.merge,
            TaskKind::Grow => self.grow,
            TaskKind::Plain => self.plain,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = TaskKind::ALL.map(|k| self.get(k));
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|&x| x.is_nan() || x < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(CorpusError::Mix(sum));
        }
        Ok(())
    }

    /// Parses `link=0.4,merge=0.4,grow=0.2`; unnamed kinds get 0.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Mix::only(TaskKind::Plain);
        m.plain = 0.0;
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected kind=fraction, got {part:?}"))?;
            let kind: TaskKind = k.trim().parse()?;
            *m.get_mut(kind) = v.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
        }
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }

    fn sample(&self, rng: &mut impl Rng) -> TaskKind {
        let mut roll: f64 = rng.random();
        for k in TaskKind::ALL {
            let w = self.get(k);
            if roll < w {
                return k;
            }
            roll -= w;
        }
        TaskKind::ALL
            .into_iter()
            .rev()
            .find(|&k| self.get(k) > 0.0)
            .unwrap_or(TaskKind::Plain)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub mix: Mix,
    /// Phase 1 writes molecule-only records regardless of `mix`.
    pub phase: u8,
    pub cleave: CleaveOptions,
    /// Whether failed link/merge molecules fall back to grow, then plain.
    pub fallback: bool,
    /// Chance per molecule of an extra merge record gluing it to the previous
    /// molecule on their common substructure.
    pub pair_merge_rate: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            mix: Mix::default(),
            phase: 2,
            cleave: CleaveOptions::default(),
            fallback: true,
            pair_merge_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub molecules: usize,
    pub records: usize,
    pub per_kind: BTreeMap<String, usize>,
    /// Failure reasons keyed as `kind: reason`.
    pub rejections: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn count(&self, kind: TaskKind) -> usize {
        self.per_kind.get(kind.name()).copied().unwrap_or(0)
    }

    fn reject(&mut self, key: String) {
        *self.rejections.entry(key).or_default() += 1;
    }
}

fn reason(e: &FragmentError) -> &'static str {
    match e {
        FragmentError::InsufficientFragments => "insufficient fragments",
        FragmentError::SizeLimit { .. } => "size limit",
        FragmentError::EmptyOverlap => "empty overlap",
        FragmentError::Invalid(_) => "invalid molecule",
    }
}

/// Turns molecules into records in input order. Unparseable molecules are
/// counted and skipped.
pub fn build_corpus<I, S>(
    molecules: I,
    opts: &CorpusOptions,
    rng: &mut impl Rng,
) -> Result<(Vec<CorpusRecord>, CorpusStats), CorpusError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    opts.mix.validate()?;
    let mut stats = CorpusStats::default();
    let mut records = Vec::new();
    let mut previous = None;
    for line in molecules {
        let line = line.as_ref().trim();
        if line.is_empty() {
            continue;
        }
        stats.molecules += 1;
        let g = match parse_smiles(line) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("skipping {line:?}: {e}");
                stats.reject("parse: invalid smiles".into());
                continue;
            }
        };
        let wanted = if opts.phase == 1 { TaskKind::Plain } else { opts.mix.sample(rng) };
        let mut chain = vec![wanted];
        if opts.fallback {
            match wanted {
                TaskKind::Link | TaskKind::Merge => chain.extend([TaskKind::Grow, TaskKind::Plain]),
                TaskKind::Grow => chain.push(TaskKind::Plain),
                TaskKind::Plain => {}
            }
        }
        for kind in chain {
            let made = match kind {
                TaskKind::Link => make_link_example(&g, &opts.cleave),
                TaskKind::Merge => make_merge_example(&g, &opts.cleave),
                TaskKind::Grow => make_grow_example(&g, &opts.cleave, rng),
                TaskKind::Plain => Ok(TaskExample::plain(write_smiles(&g))),
            };
            match made {
                Ok(e) => {
                    records.push(serialize(&e));
                    *stats.per_kind.entry(kind.name().into()).or_default() += 1;
                    break;
                }
                Err(e) => stats.reject(format!("{kind}: {}", reason(&e))),
            }
        }
        if opts.phase != 1 && opts.pair_merge_rate > 0.0 && rng.random_bool(opts.pair_merge_rate.min(1.0)) {
            if let Some(prev) = &previous {
                match merge_on_mcs(prev, &g) {
                    Ok(m) => {
                        records.push(serialize(&TaskExample {
                            kind: TaskKind::Merge,
                            prompt_fragments: vec![write_smiles(prev), write_smiles(&g)],
                            target: write_smiles(&m),
                        }));
                        *stats.per_kind.entry("merge".into()).or_default() += 1;
                    }
                    Err(e) => stats.reject(format!("pair merge: {}", reason(&e))),
                }
            }
        }
        previous = Some(g);
    }
    stats.records = records.len();
    Ok((records, stats))
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}", r.text)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a corpus file, one record per non-empty line.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serialize(&parse_record(line.trim_end())?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::canonicalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(kind: TaskKind, prompts: &[&str], target: &str) -> TaskExample {
        TaskExample {
            kind,
            prompt_fragments: prompts.iter().map(|s| s.to_string()).collect(),
            target: target.into(),
        }
    }

    #[test]
    fn serialize_examples() {
        let r = serialize(&ex(TaskKind::Link, &["C", "C"], "CCOCC"));
        assert_eq!(r.text, "<p1>C<p2>C<L>CCOCC");
        assert_eq!(r.target(), "CCOCC");
        assert_eq!(r.prompt(), "<p1>C<p2>C<L>");
        assert_eq!(serialize(&ex(TaskKind::Grow, &["COC"], "CCOCC")).text, "<p1>COC<L>CCOCC");
        assert_eq!(serialize(&TaskExample::plain("CCO")).text, "<L>CCO");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_record("<p1>C<p2>C<L>CCOCC").unwrap(), ex(TaskKind::Link, &["C", "C"], "CCOCC"));
        assert_eq!(parse_record("<p1>COC<L>CCOCC").unwrap(), ex(TaskKind::Grow, &["COC"], "CCOCC"));
        assert_eq!(
            parse_record("<p1>CCOC<p2>COCC<L>CCOCC").unwrap(),
            ex(TaskKind::Merge, &["CCOC", "COCC"], "CCOCC")
        );
        assert_eq!(parse_record("<L>CCO").unwrap(), TaskExample::plain("CCO"));
        for bad in ["CCO", "<p2>C<L>CC", "<p1><L>CC", "C<L>CC", "<L>C<L>C"] {
            assert!(matches!(parse_record(bad), Err(CorpusError::Format { .. })), "{bad}");
        }
    }

    #[test]
    fn mix_parsing() {
        let m = Mix::parse("link=0.4,merge=0.4,grow=0.2").unwrap();
        assert_eq!(m, Mix::default());
        assert!(Mix::parse("link=0.5").is_err());
        assert!(Mix::parse("link=1.5,grow=-0.5").is_err());
        assert!(Mix::parse("spin=1").is_err());
    }

    #[test]
    fn chains_link_only() {
        let chains: Vec<String> = (1..=100).map(|n| "C".repeat(1 + n % 12)).collect();
        let opts = CorpusOptions {
            mix: Mix::only(TaskKind::Link),
            fallback: false,
            ..CorpusOptions::default()
        };
        let (records, stats) = build_corpus(&chains, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // Chains with at least six carbons admit a split into three parts of two.
        let eligible = chains.iter().filter(|c| c.len() >= 6).count();
        assert_eq!(stats.count(TaskKind::Link), eligible);
        assert_eq!(stats.rejections["link: insufficient fragments"], 100 - eligible);
        assert!(records.iter().all(|r| r.kind == TaskKind::Link));
    }

    #[test]
    fn plain_phase() {
        let opts = CorpusOptions {
            phase: 1,
            ..CorpusOptions::default()
        };
        let (records, _) = build_corpus(["OCC", "c1ccccc1"], &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(records[0].text, format!("<L>{}", canonicalize("CCO").unwrap()));
        assert_eq!(records[1].text, "<L>c1ccccc1");
    }

    #[test]
    fn empty_input() {
        let (records, stats) =
            build_corpus(Vec::<String>::new(), &CorpusOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(records.is_empty());
        assert_eq!(stats, CorpusStats::default());
    }

    #[test]
    fn fallback_and_pair_merges() {
        let opts = CorpusOptions {
            pair_merge_rate: 1.0,
            ..CorpusOptions::default()
        };
        let mols = ["c1ccccc1", "CCc1ccccc1", "c1ccccc1CN", "CCCCCCCCC", "not a molecule"];
        let (records, stats) = build_corpus(mols, &opts, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(stats.molecules, 5);
        assert_eq!(stats.rejections["parse: invalid smiles"], 1);
        assert_eq!(stats.records, records.len());
        for r in &records {
            let e = parse_record(&r.text).unwrap();
            assert_eq!(serialize(&e).text, r.text);
            parse_smiles(&e.target).unwrap();
        }
        assert!(stats.count(TaskKind::Merge) >= 1);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        let records = vec![
            serialize(&ex(TaskKind::Link, &["C", "C"], "CCOCC")),
            serialize(&TaskExample::plain("CCO")),
        ];
        write_corpus(&path, &records).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), records);
    }
}
