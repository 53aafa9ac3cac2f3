//! Expert policies that propose variants of learner molecules.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use fragforge_core::molgraph::{parse_smiles, write_smiles, Atom, BondOrder, Element, MolecularGraph};
use fragforge_lm::{generate, Model, SamplingParams, Vocab};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::RaeError;

/// A learner molecule handed to the experts, with the prompt it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Parent {
    pub smiles: String,
    pub prompt: String,
}

/// Read-only view of the current learner.
#[derive(Clone, Copy)]
pub struct Learner<'a> {
    pub model: &'a Model<f32>,
    pub vocab: &'a Vocab,
}

pub trait ExpertPolicy {
    fn name(&self) -> &str;

    /// Up to `count` variant SMILES per parent. Outputs may be invalid; the
    /// caller filters and counts them.
    fn propose(
        &mut self,
        parents: &[Parent],
        count: usize,
        learner: Option<Learner<'_>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<String>>, RaeError>;
}

const SWAP_ELEMENTS: [Element; 6] = [Element::C, Element::N, Element::O, Element::S, Element::F, Element::Cl];
const APPEND_ELEMENTS: [Element; 5] = [Element::C, Element::N, Element::O, Element::F, Element::Cl];
const MUTATE_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edit {
    Swap { atom: usize, to: Element },
    Toggle { bond: usize },
    Append { atom: usize, element: Element },
}

fn rebuild(g: &MolecularGraph, edit: Edit) -> Option<MolecularGraph> {
    let mut out = MolecularGraph::new();
    for (i, a) in g.atoms().iter().enumerate() {
        let mut atom = a.clone();
        if let Edit::Swap { atom: at, to } = edit {
            if at == i {
                atom.element = to;
            }
        }
        out.add_atom(atom);
    }
    for (bi, b) in g.bonds().iter().enumerate() {
        let order = match (edit, b.order) {
            (Edit::Toggle { bond }, BondOrder::Single) if bond == bi => BondOrder::Double,
            (Edit::Toggle { bond }, BondOrder::Double) if bond == bi => BondOrder::Single,
            (_, o) => o,
        };
        out.add_bond(b.a, b.b, order).ok()?;
    }
    if let Edit::Append { atom, element } = edit {
        let new = out.add_atom(Atom::new(element));
        out.add_bond(atom, new, BondOrder::Single).ok()?;
    }
    out.sanitize().ok()?;
    Some(out)
}

fn random_edit(g: &MolecularGraph, rng: &mut impl Rng) -> Option<Edit> {
    let editable: Vec<usize> = (0..g.atom_count())
        .filter(|&i| {
            let a = g.atom(i);
            !a.bracket && !a.aromatic && a.element != Element::H
        })
        .collect();
    match rng.random_range(0..3) {
        0 => {
            let &atom = editable.choose(rng)?;
            let current = g.atom(atom).element;
            let choices: Vec<Element> = SWAP_ELEMENTS.iter().copied().filter(|&e| e != current).collect();
            Some(Edit::Swap {
                atom,
                to: *choices.choose(rng)?,
            })
        }
        1 => {
            let bonds: Vec<usize> = g
                .bonds()
                .iter()
                .enumerate()
                .filter(|(_, b)| match b.order {
                    BondOrder::Double => true,
                    BondOrder::Single => {
                        editable.contains(&b.a)
                            && editable.contains(&b.b)
                            && g.hydrogen_count(b.a) > 0
                            && g.hydrogen_count(b.b) > 0
                    }
                    _ => false,
                })
                .map(|(i, _)| i)
                .collect();
            Some(Edit::Toggle {
                bond: *bonds.choose(rng)?,
            })
        }
        _ => {
            let sites: Vec<usize> = (0..g.atom_count())
                .filter(|&i| !g.atom(i).bracket && g.hydrogen_count(i) > 0)
                .collect();
            Some(Edit::Append {
                atom: *sites.choose(rng)?,
                element: *APPEND_ELEMENTS.choose(rng)?,
            })
        }
    }
}

/// One random valid edit of `g`: an element swap, a single/double bond
/// toggle or a new substituent atom. Returns the canonical SMILES, never the
/// input's own, or `None` if no valid edit turned up within a bounded
/// number of tries.
pub fn mutate(g: &MolecularGraph, rng: &mut impl Rng) -> Option<String> {
    let original = write_smiles(g);
    for _ in 0..MUTATE_ATTEMPTS {
        let Some(edit) = random_edit(g, rng) else { continue };
        if let Some(edited) = rebuild(g, edit) {
            let s = write_smiles(&edited);
            if s != original {
                return Some(s);
            }
        }
    }
    None
}

/// Random single-edit neighbours.
#[derive(Debug, Default, Clone)]
pub struct MutateExpert;

impl ExpertPolicy for MutateExpert {
    fn name(&self) -> &str {
        "mutate"
    }

    fn propose(
        &mut self,
        parents: &[Parent],
        count: usize,
        _learner: Option<Learner<'_>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<String>>, RaeError> {
        Ok(parents
            .iter()
            .map(|p| match parse_smiles(&p.smiles) {
                Ok(g) => (0..count).filter_map(|_| mutate(&g, rng)).collect(),
                Err(_) => Vec::new(),
            })
            .collect())
    }
}

/// Re-samples the learner at a raised temperature from each parent's prompt.
#[derive(Debug, Clone)]
pub struct HighTempExpert {
    pub params: SamplingParams,
}

impl Default for HighTempExpert {
    fn default() -> Self {
        HighTempExpert {
            params: SamplingParams {
                temperature: 1.5,
                ..SamplingParams::default()
            },
        }
    }
}

impl ExpertPolicy for HighTempExpert {
    fn name(&self) -> &str {
        "hightemp"
    }

    fn propose(
        &mut self,
        parents: &[Parent],
        count: usize,
        learner: Option<Learner<'_>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<String>>, RaeError> {
        let learner = learner.ok_or(RaeError::LearnerRequired("hightemp"))?;
        let prompts: Vec<&str> = parents
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.prompt.as_str(), count))
            .collect();
        let params = SamplingParams {
            seed: rng.random(),
            ..self.params.clone()
        };
        let completions = generate(learner.model, learner.vocab, &prompts, &params)?;
        Ok(completions
            .chunks(count.max(1))
            .take(parents.len())
            .map(|c| c.iter().map(|x| x.text.clone()).collect())
            .collect())
    }
}

/// External expert: per batch, writes `count<TAB>smiles` lines to the
/// program's stdin and reads one line per parent of tab-separated variants.
#[derive(Debug, Clone)]
pub struct SubprocessExpert {
    pub name: String,
    pub program: String,
    pub args: Vec<String>,
}

impl SubprocessExpert {
    pub fn from_command(command: &str) -> Result<Self, RaeError> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| RaeError::Expert("empty expert command".into()))?;
        Ok(SubprocessExpert {
            name: format!("cmd:{program}"),
            program,
            args: parts.collect(),
        })
    }
}

impl ExpertPolicy for SubprocessExpert {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(
        &mut self,
        parents: &[Parent],
        count: usize,
        _learner: Option<Learner<'_>>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<String>>, RaeError> {
        let fail = |e: std::io::Error| RaeError::Expert(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(fail)?;
        let mut input = String::new();
        for p in parents {
            input.push_str(&format!("{count}\t{}\n", p.smiles));
        }
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let stdout = child.stdout.take().expect("piped stdout");
        let mut out = Vec::with_capacity(parents.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(fail)?;
            out.push(
                line.split('\t')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .take(count)
                    .map(String::from)
                    .collect(),
            );
        }
        writer
            .join()
            .map_err(|_| RaeError::Expert("writer thread panicked".into()))?
            .map_err(fail)?;
        let status = child.wait().map_err(fail)?;
        if !status.success() {
            return Err(RaeError::Expert(format!("{} exited with {status}", self.program)));
        }
        if out.len() != parents.len() {
            return Err(RaeError::Expert(format!(
                "{} answered {} lines for {} molecules",
                self.program,
                out.len(),
                parents.len()
            )));
        }
        Ok(out)
    }
}

pub fn builtin_experts() -> Vec<Box<dyn ExpertPolicy>> {
    vec![Box::new(MutateExpert), Box::new(HighTempExpert::default())]
}

/// `mutate`, `hightemp` or `cmd:<command line>`.
pub fn expert_by_name(name: &str) -> Result<Box<dyn ExpertPolicy>, RaeError> {
    match name {
        "mutate" => Ok(Box::new(MutateExpert)),
        "hightemp" => Ok(Box::new(HighTempExpert::default())),
        other => match other.strip_prefix("cmd:") {
            Some(cmd) => Ok(Box::new(SubprocessExpert::from_command(cmd)?)),
            None => Err(RaeError::Expert(format!("unknown expert `{other}`"))),
        },
    }
}
