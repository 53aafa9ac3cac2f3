use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use crate::molgraph::{molecular_weight, parse_smiles, Element, MolecularGraph};

use super::CriticError;

pub const DOCKING_BEST: f64 = -14.0;
pub const DOCKING_WORST: f64 = -6.0;

/// Batched docking scorer: SMILES in, score out (lower is better).
pub trait DockingOracle: Send + Sync {
    fn name(&self) -> &str;
    fn score_batch(&self, smiles: &[String]) -> Result<Vec<f64>, CriticError>;
}

/// Non-physical stand-in for a docking model, for pipeline testing only: a
/// weighted count of rings and heteroatoms plus a weight band, clamped to
/// `[-14, -6]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicOracle;

impl HeuristicOracle {
    pub fn score(g: &MolecularGraph) -> f64 {
        let rings = g.rings().len() as f64;
        let hetero = g
            .atoms()
            .iter()
            .filter(|a| !matches!(a.element, Element::C | Element::H))
            .count() as f64;
        let mw = molecular_weight(g);
        let band = 2.0 * (-((mw - 400.0) / 150.0).powi(2)).exp();
        (DOCKING_WORST - (0.9 * rings + 0.3 * hetero.min(8.0) + band)).clamp(DOCKING_BEST, DOCKING_WORST)
    }
}

impl DockingOracle for HeuristicOracle {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn score_batch(&self, smiles: &[String]) -> Result<Vec<f64>, CriticError> {
        smiles
            .iter()
            .map(|s| Ok(Self::score(&parse_smiles(s)?)))
            .collect()
    }
}

/// Runs an external program once per batch, writing one SMILES per line to
/// its stdin and reading one score per line from its stdout.
#[derive(Debug, Clone)]
pub struct SubprocessOracle {
    pub program: String,
    pub args: Vec<String>,
}

impl SubprocessOracle {
    /// Splits a command line on whitespace.
    pub fn from_command(command: &str) -> Result<Self, CriticError> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| CriticError::OracleUnavailable("empty oracle command".into()))?;
        Ok(SubprocessOracle {
            program,
            args: parts.collect(),
        })
    }
}

impl DockingOracle for SubprocessOracle {
    fn name(&self) -> &str {
        &self.program
    }

    fn score_batch(&self, smiles: &[String]) -> Result<Vec<f64>, CriticError> {
        let unavailable = |e: std::io::Error| CriticError::OracleUnavailable(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(unavailable)?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            for s in smiles {
                writeln!(stdin, "{s}").map_err(unavailable)?;
            }
        }
        let stdout = child.stdout.take().expect("piped stdout");
        let mut scores = Vec::with_capacity(smiles.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(unavailable)?;
            if line.trim().is_empty() {
                continue;
            }
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| CriticError::OracleUnavailable(format!("bad score line {line:?}")))?;
            scores.push(v);
        }
        let status = child.wait().map_err(unavailable)?;
        if !status.success() || scores.len() != smiles.len() {
            return Err(CriticError::OracleUnavailable(format!(
                "{} exited with {status} after {} of {} scores",
                self.program,
                scores.len(),
                smiles.len()
            )));
        }
        Ok(scores)
    }
}
