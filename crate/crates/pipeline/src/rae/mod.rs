//! The reward-ranked alignment loop: finetune the learner on the current
//! dataset, fill a replay buffer with learner and expert molecules, score
//! it, and select the next dataset.

mod experts;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use fragforge_core::corpus::{build_corpus, CorpusError, CorpusOptions, CorpusRecord, Mix};
use fragforge_core::critics::{CriticError, Critics};
use fragforge_core::fragmenter::TaskKind;
use fragforge_core::molgraph::{parse_smiles, write_smiles, MolecularGraph};
use fragforge_core::rewards::{
    pareto_fronts, read_scored, select_dataset, write_scored, ReplayBuffer, RewardError, ScoredMolecule, Source,
};
use fragforge_lm::{finetune, generate, Checkpoint, LossMask, ModelError, SamplingParams, TrainOptions};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experts::{
    builtin_experts, expert_by_name, mutate, ExpertPolicy, HighTempExpert, Learner, MutateExpert, Parent,
    SubprocessExpert,
};

#[derive(Debug, Error)]
pub enum RaeError {
    #[error("invalid RAE config: {0}")]
    Config(String),
    #[error("iteration {iteration}: none of the {generated} generated molecules is valid")]
    NoValidMolecules { iteration: usize, generated: usize },
    #[error("expert `{0}` needs the learner checkpoint")]
    LearnerRequired(&'static str),
    #[error("expert: {0}")]
    Expert(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("state: {0}")]
    State(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss_mask: LossMask,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 1,
            lr: 5e-5,
            batch_size: 16,
            loss_mask: LossMask::TargetOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaeConfig {
    pub iterations: usize,
    pub molecules_per_iteration: usize,
    pub dataset_size: usize,
    pub variants_per_molecule: usize,
    pub experts: Vec<String>,
    pub seed: u64,
    /// Score similarity to each molecule's source and use five objectives
    /// instead of four.
    pub similarity: bool,
    /// Task mix used to turn dataset molecules into finetuning records.
    pub mix: Mix,
    pub sampling: SamplingParams,
    pub finetune: FinetuneConfig,
    /// Pretrained checkpoint directory.
    pub checkpoint: Option<PathBuf>,
    /// Corpus file whose prompts seed generation.
    pub prompts: Option<PathBuf>,
    /// SMILES file the synthesizability model is fitted on.
    pub sa_fit: Option<PathBuf>,
    /// Command line of an external docking oracle.
    pub oracle: Option<String>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RaeConfig {
    fn default() -> Self {
        RaeConfig {
            iterations: 50,
            molecules_per_iteration: 256,
            dataset_size: 256,
            variants_per_molecule: 1,
            experts: vec!["mutate".into(), "hightemp".into()],
            seed: 0,
            similarity: false,
            mix: Mix::default(),
            sampling: SamplingParams {
                max_new_tokens: 64,
                ..SamplingParams::default()
            },
            finetune: FinetuneConfig::default(),
            checkpoint: None,
            prompts: None,
            sa_fit: None,
            oracle: None,
            out_dir: None,
        }
    }
}

impl RaeConfig {
    pub fn from_toml(text: &str) -> Result<Self, RaeError> {
        let c: RaeConfig = toml::from_str(text).map_err(|e| RaeError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), RaeError> {
        if self.iterations == 0 {
            return Err(RaeError::Config("iterations must be at least 1".into()));
        }
        if self.molecules_per_iteration == 0 {
            return Err(RaeError::Config("molecules_per_iteration must be at least 1".into()));
        }
        if self.dataset_size == 0 {
            return Err(RaeError::Config("dataset_size must be at least 1".into()));
        }
        self.mix.validate()?;
        self.sampling.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub generated: usize,
    pub valid: usize,
    pub validity: f64,
    pub learner_unique: usize,
    pub expert_proposed: usize,
    pub expert_invalid: usize,
    pub expert_added: usize,
    pub buffer_size: usize,
    pub buffer_mean_composite: f64,
    pub priority_mean_composite: f64,
    pub dataset_size: usize,
    pub dataset_mean_composite: f64,
    pub mean_docking: f64,
    pub mean_druglikeness: f64,
    pub mean_synthesizability: f64,
    pub mean_solubility: f64,
    pub mean_similarity: Option<f64>,
    pub front_sizes: Vec<usize>,
    pub finetune_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RaeState {
    /// Completed iterations.
    pub iteration: usize,
    pub dataset: Vec<ScoredMolecule>,
    pub buffer: ReplayBuffer,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
}

pub const STATE_FILE: &str = "state.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Serialize, Deserialize)]
struct StateMarker {
    iteration: usize,
    dir: String,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Stage-specific random stream for one iteration.
fn stage_rng(seed: u64, iteration: usize, stage: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(iteration as u64 * 8 + stage);
    r
}

const STAGE_FINETUNE: u64 = 0;
const STAGE_GENERATE: u64 = 1;
const STAGE_EXPERTS: u64 = 2;
const STAGE_SELECT: u64 = 3;
const STAGE_SEED: u64 = 4;

pub struct Rae<'a> {
    pub config: RaeConfig,
    prompts: &'a [CorpusRecord],
    critics: &'a Critics,
    experts: Vec<Box<dyn ExpertPolicy>>,
}

struct Candidate {
    smiles: String,
    graph: MolecularGraph,
    references: Vec<MolecularGraph>,
    source: Source,
}

impl<'a> Rae<'a> {
    /// `prompts` is the pool generation prompts are drawn from; each
    /// record's target doubles as the similarity reference.
    pub fn new(
        config: RaeConfig,
        prompts: &'a [CorpusRecord],
        critics: &'a Critics,
        experts: Vec<Box<dyn ExpertPolicy>>,
    ) -> Result<Self, RaeError> {
        config.validate()?;
        if prompts.is_empty() {
            return Err(RaeError::Config("the prompt pool is empty".into()));
        }
        Ok(Rae {
            config,
            prompts,
            critics,
            experts,
        })
    }

    /// Experts named in the config.
    pub fn configured_experts(config: &RaeConfig) -> Result<Vec<Box<dyn ExpertPolicy>>, RaeError> {
        config.experts.iter().map(|n| expert_by_name(n)).collect()
    }

    fn score(&self, cands: Vec<Candidate>) -> Result<Vec<ScoredMolecule>, RaeError> {
        let graphs: Vec<MolecularGraph> = cands.iter().map(|c| c.graph.clone()).collect();
        let refs: Vec<Vec<MolecularGraph>> = cands
            .iter()
            .map(|c| if self.config.similarity { c.references.clone() } else { Vec::new() })
            .collect();
        let props = self.critics.properties(&graphs, &refs)?;
        Ok(cands
            .into_iter()
            .zip(props)
            .map(|(c, p)| ScoredMolecule::new(c.smiles, p, c.source))
            .collect())
    }

    /// Starting state: the dataset holds distinct prompt-pool targets.
    pub fn initial_state(&self, checkpoint: Checkpoint) -> Result<RaeState, RaeError> {
        let mut rng = stage_rng(self.config.seed, 0, STAGE_SEED);
        let mut order: Vec<&CorpusRecord> = self.prompts.iter().collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut seen = HashSet::new();
        let mut cands = Vec::new();
        for r in order {
            if cands.len() >= self.config.dataset_size {
                break;
            }
            let Ok(g) = parse_smiles(r.target()) else { continue };
            let smiles = write_smiles(&g);
            if seen.insert(smiles.clone()) {
                cands.push(Candidate {
                    smiles,
                    references: vec![g.clone()],
                    graph: g,
                    source: Source::Seed,
                });
            }
        }
        Ok(RaeState {
            iteration: 0,
            dataset: self.score(cands)?,
            buffer: ReplayBuffer::new(None),
            checkpoint,
            metrics: Vec::new(),
        })
    }

    /// Finetuning records built from dataset molecules.
    fn dataset_records(&self, dataset: &[ScoredMolecule], rng: &mut ChaCha8Rng) -> Result<Vec<String>, RaeError> {
        let opts = CorpusOptions {
            mix: self.config.mix,
            ..CorpusOptions::default()
        };
        let (records, _) = build_corpus(dataset.iter().map(|m| m.smiles.as_str()), &opts, rng)?;
        Ok(records.into_iter().map(|r| r.text).collect())
    }

    pub fn run_iteration(&mut self, state: &mut RaeState) -> Result<IterationMetrics, RaeError> {
        let it = state.iteration + 1;
        let c = self.config.clone();

        // Stage 1: finetune on the current dataset, then sample the learner.
        state.buffer.clear();
        let mut rng = stage_rng(c.seed, it, STAGE_FINETUNE);
        let texts = self.dataset_records(&state.dataset, &mut rng)?;
        let opts = TrainOptions {
            epochs: c.finetune.epochs,
            lr: c.finetune.lr,
            batch_size: c.finetune.batch_size,
            loss_mask: c.finetune.loss_mask,
            seed: c.seed ^ it as u64,
            ..TrainOptions::default()
        };
        let (tuned, report) = finetune(&state.checkpoint, &texts, &opts)?;
        state.checkpoint = tuned;
        let finetune_loss = report.epoch_losses.last().copied();

        let mut rng = stage_rng(c.seed, it, STAGE_GENERATE);
        let chosen: Vec<&CorpusRecord> = (0..c.molecules_per_iteration)
            .map(|_| self.prompts.choose(&mut rng).expect("non-empty pool"))
            .collect();
        let prompt_texts: Vec<&str> = chosen.iter().map(|r| r.prompt()).collect();
        let params = SamplingParams {
            seed: rand::Rng::random(&mut rng),
            ..c.sampling.clone()
        };
        let completions = generate(&state.checkpoint.model, &state.checkpoint.vocab, &prompt_texts, &params)?;

        let mut seen: HashSet<String> = HashSet::new();
        let mut cands = Vec::new();
        let mut parents = Vec::new();
        let mut valid = 0;
        for (comp, rec) in completions.iter().zip(&chosen) {
            let Ok(g) = parse_smiles(&comp.text) else { continue };
            if g.is_empty() {
                continue;
            }
            valid += 1;
            let smiles = write_smiles(&g);
            if !seen.insert(smiles.clone()) {
                continue;
            }
            let references: Vec<MolecularGraph> = parse_smiles(rec.target()).into_iter().collect();
            parents.push((
                Parent {
                    smiles: smiles.clone(),
                    prompt: rec.prompt().to_string(),
                },
                references.clone(),
            ));
            cands.push(Candidate {
                smiles,
                graph: g,
                references,
                source: Source::Learner,
            });
        }
        if valid == 0 {
            return Err(RaeError::NoValidMolecules {
                iteration: it,
                generated: completions.len(),
            });
        }
        let learner_unique = cands.len();

        // Stage 2: expert exploration.
        let mut rng = stage_rng(c.seed, it, STAGE_EXPERTS);
        let (mut proposed, mut invalid) = (0, 0);
        let only_parents: Vec<Parent> = parents.iter().map(|p| p.0.clone()).collect();
        let learner = Learner {
            model: &state.checkpoint.model,
            vocab: &state.checkpoint.vocab,
        };
        for expert in &mut self.experts {
            let out = expert.propose(&only_parents, c.variants_per_molecule, Some(learner), &mut rng)?;
            for ((parent, refs), variants) in parents.iter().zip(out) {
                for v in variants {
                    proposed += 1;
                    let g = match parse_smiles(&v) {
                        Ok(g) if !g.is_empty() => g,
                        _ => {
                            invalid += 1;
                            continue;
                        }
                    };
                    let smiles = write_smiles(&g);
                    if smiles == parent.smiles || !seen.insert(smiles.clone()) {
                        continue;
                    }
                    cands.push(Candidate {
                        smiles,
                        graph: g,
                        references: refs.clone(),
                        source: Source::Expert,
                    });
                }
            }
            log::debug!("expert {} done", expert.name());
        }
        let expert_added = cands.len() - learner_unique;

        // Stage 3: score, rank and select.
        for m in self.score(cands)? {
            state.buffer.insert(m);
        }
        state.buffer.rank();
        let entries = state.buffer.entries();
        let mut rng = stage_rng(c.seed, it, STAGE_SELECT);
        let selection = select_dataset(entries, &state.dataset, c.dataset_size, &mut rng);
        let points: Vec<Vec<f64>> = entries.iter().map(|m| m.normalized.to_vec()).collect();
        let front_sizes = if points.iter().all(|p| p.len() == points[0].len()) {
            pareto_fronts(&points).iter().map(Vec::len).collect()
        } else {
            Vec::new()
        };
        let sims: Vec<f64> = entries.iter().filter_map(|m| m.properties.similarity).collect();
        let metrics = IterationMetrics {
            iteration: it,
            generated: completions.len(),
            valid,
            validity: valid as f64 / completions.len() as f64,
            learner_unique,
            expert_proposed: proposed,
            expert_invalid: invalid,
            expert_added,
            buffer_size: entries.len(),
            buffer_mean_composite: mean(entries.iter().map(|m| m.composite)),
            priority_mean_composite: mean(selection.priority().iter().map(|m| m.composite)),
            dataset_size: selection.dataset.len(),
            dataset_mean_composite: mean(selection.dataset.iter().map(|m| m.composite)),
            mean_docking: mean(entries.iter().map(|m| m.properties.docking)),
            mean_druglikeness: mean(entries.iter().map(|m| m.properties.druglikeness)),
            mean_synthesizability: mean(entries.iter().map(|m| m.properties.synthesizability)),
            mean_solubility: mean(entries.iter().map(|m| m.properties.solubility)),
            mean_similarity: (!sims.is_empty()).then(|| mean(sims.iter().copied())),
            front_sizes,
            finetune_loss,
        };
        log::info!(
            "iteration {it}: validity {:.3}, buffer {}, dataset mean composite {:.4}",
            metrics.validity,
            metrics.buffer_size,
            metrics.dataset_mean_composite
        );
        state.dataset = selection.dataset;
        state.iteration = it;
        state.metrics.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs until `config.iterations` are complete. With `out_dir`, state is
    /// persisted after every iteration, and `resume` picks up from the last
    /// persisted one.
    pub fn run(&mut self, checkpoint: Checkpoint, out_dir: Option<&Path>, resume: bool) -> Result<RaeState, RaeError> {
        let mut state = match out_dir {
            Some(dir) if resume && dir.join(STATE_FILE).exists() => load_state(dir)?,
            _ => self.initial_state(checkpoint)?,
        };
        if let Some(dir) = out_dir {
            if state.iteration == 0 {
                save_state(dir, &state)?;
            }
        }
        while state.iteration < self.config.iterations {
            self.run_iteration(&mut state)?;
            if let Some(dir) = out_dir {
                save_state(dir, &state)?;
            }
        }
        Ok(state)
    }
}

fn iteration_dir(iteration: usize) -> String {
    format!("iter-{iteration:04}")
}

/// Writes the state into a fresh iteration directory, then atomically points
/// the state marker at it and removes the previous directory.
pub fn save_state(dir: &Path, state: &RaeState) -> Result<(), RaeError> {
    fs::create_dir_all(dir)?;
    let name = iteration_dir(state.iteration);
    let target = dir.join(&name);
    if target.exists() {
        fs::remove_dir_all(&target)?;
    }
    fs::create_dir_all(&target)?;
    state.checkpoint.save(&target.join("checkpoint"))?;
    write_scored(&target.join("dataset.jsonl"), &state.dataset)?;
    write_scored(&target.join("buffer.jsonl"), state.buffer.entries())?;
    let mut lines = String::new();
    for m in &state.metrics {
        lines.push_str(&serde_json::to_string(m).map_err(|e| RaeError::State(e.to_string()))?);
        lines.push('\n');
    }
    fs::write(target.join(METRICS_FILE), &lines)?;
    fs::write(dir.join(METRICS_FILE), &lines)?;

    let previous = fs::read_to_string(dir.join(STATE_FILE))
        .ok()
        .and_then(|s| serde_json::from_str::<StateMarker>(&s).ok());
    let marker = StateMarker {
        iteration: state.iteration,
        dir: name.clone(),
    };
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string(&marker).map_err(|e| RaeError::State(e.to_string()))?)?;
    fs::rename(&tmp, dir.join(STATE_FILE))?;
    if let Some(prev) = previous {
        if prev.dir != name {
            let _ = fs::remove_dir_all(dir.join(prev.dir));
        }
    }
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<RaeState, RaeError> {
    let marker: StateMarker = serde_json::from_str(&fs::read_to_string(dir.join(STATE_FILE))?)
        .map_err(|e| RaeError::State(format!("{STATE_FILE}: {e}")))?;
    let base = dir.join(&marker.dir);
    let checkpoint = Checkpoint::load(&base.join("checkpoint"))?;
    let dataset = read_scored(&base.join("dataset.jsonl"))?;
    let mut buffer = ReplayBuffer::new(None);
    for m in read_scored(&base.join("buffer.jsonl"))? {
        buffer.insert(m);
    }
    let mut metrics = Vec::new();
    for (i, line) in fs::read_to_string(base.join(METRICS_FILE))?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        metrics.push(
            serde_json::from_str(line).map_err(|e| RaeError::State(format!("{METRICS_FILE} line {}: {e}", i + 1)))?,
        );
    }
    Ok(RaeState {
        iteration: marker.iteration,
        dataset,
        buffer,
        checkpoint,
        metrics,
    })
}

/// Prompt records restricted to fragment-conditioned kinds, falling back to
/// all records if none are conditioned.
pub fn prompt_pool(records: &[CorpusRecord]) -> Vec<CorpusRecord> {
    let conditioned: Vec<CorpusRecord> = records.iter().filter(|r| r.kind != TaskKind::Plain).cloned().collect();
    if conditioned.is_empty() {
        records.to_vec()
    } else {
        conditioned
    }
}
