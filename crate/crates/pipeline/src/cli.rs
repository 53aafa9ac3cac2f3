//! Command-line front end: one subcommand per pipeline stage.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fragforge_core::corpus::{build_corpus, read_corpus, write_corpus, CorpusOptions, Mix};
use fragforge_core::critics::{Critics, DockingOracle, HeuristicOracle, SaModel, SubprocessOracle};
use fragforge_core::fragmenter::{cleave, CleaveOptions};
use fragforge_core::molgraph::{parse_smiles, write_smiles};
use fragforge_core::rewards::{assign_pareto, ScoredMolecule, Source};
use fragforge_lm::{generate, train_bpe, Checkpoint, LossMask, ModelConfig, SamplingParams, TrainOptions, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::evaluate::{evaluate, report_table, MetricsReport};
use crate::rae::{prompt_pool, Rae, RaeConfig};

pub const ORACLE_ENV: &str = "FRAGFORGE_ORACLE";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed input. Exit code 2.
    Input(String),
    /// Anything that failed after the inputs were accepted. Exit code 3.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

fn input<E: Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn internal<E: Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fragforge", version, about = "Fragment-conditioned molecule generation with reward-ranked alignment")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML config file (model settings for pretrain, loop settings for rae).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory; stdout when a file is omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cleave molecules into fragments (JSON lines).
    Fragment(FragmentArgs),
    /// Turn molecules into fragment-conditioned training records.
    BuildCorpus(BuildCorpusArgs),
    /// Learn a BPE vocabulary from a corpus.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train (or continue training) the language model.
    Pretrain(PretrainArgs),
    /// Complete fragment prompts with the model.
    Generate(GenerateArgs),
    /// Score molecules with every critic (JSON lines).
    Score(ScoreArgs),
    /// Run the alignment loop.
    Rae(RaeArgs),
    /// Summary metrics over a set of molecules.
    Evaluate(EvaluateArgs),
    /// Side-by-side table of evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FragmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub max_fragments: usize,
    #[arg(long, default_value_t = 2)]
    pub min_atoms: usize,
    /// Bonds at or above this energy (kcal/mol) are kept.
    #[arg(long, default_value_t = 90.0)]
    pub cutoff: f64,
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Task mix, e.g. `link=0.4,merge=0.4,grow=0.2`.
    #[arg(long)]
    pub mix: Option<String>,
    /// 1 writes molecule-only records.
    #[arg(long, default_value_t = 2)]
    pub phase: u8,
    #[arg(long, default_value_t = 0.0)]
    pub pair_merge_rate: f64,
    /// Also fit the synthesizability model on the input and write it here.
    #[arg(long)]
    pub sa_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub vocab_size: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file; required unless continuing from --init.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 24)]
    pub batch_size: usize,
    /// `full` or `target_only`.
    #[arg(long, default_value = "target_only")]
    pub loss_mask: LossMask,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 15)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub top_p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prompt ending in `<L>`; repeatable.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Corpus file whose record prompts are completed.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Completions per prompt.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct CriticArgs {
    /// Synthesizability parameter file (see build-corpus --sa-out).
    #[arg(long)]
    pub sa_model: Option<PathBuf>,
    /// SMILES file to fit the synthesizability model on.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Reference molecules, one per input line, for similarity.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub critics: CriticArgs,
}

#[derive(Debug, Args)]
pub struct RaeArgs {
    /// Continue from the last completed iteration in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub critics: CriticArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics files written by `evaluate`.
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(internal)?;
            }
            fs::write(p, text).map_err(|e| internal(format!("{}: {e}", p.display())))
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(internal),
    }
}

fn json_line<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string(v).map(|s| s + "\n").map_err(internal)
}

fn require_out(out: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    out.clone().ok_or_else(|| input(format!("{what} needs --out")))
}

/// Docking oracle from the environment, else the built-in heuristic.
pub fn oracle_from_env() -> CliResult<Box<dyn DockingOracle>> {
    match std::env::var(ORACLE_ENV) {
        Ok(cmd) if !cmd.trim().is_empty() => Ok(Box::new(SubprocessOracle::from_command(&cmd).map_err(input)?)),
        _ => Ok(Box::new(HeuristicOracle)),
    }
}

fn fit_sa(path: &Path) -> CliResult<SaModel> {
    let graphs: Vec<_> = read_lines(path)?
        .iter()
        .filter_map(|l| parse_smiles(l).ok())
        .collect();
    if graphs.is_empty() {
        return Err(input(format!("{}: no valid molecules to fit on", path.display())));
    }
    Ok(SaModel::fit(&graphs))
}

fn critics(args: &CriticArgs) -> CliResult<Critics> {
    let sa = match (&args.sa_model, &args.fit) {
        (Some(p), _) => SaModel::from_params(&fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?)
            .map_err(input)?,
        (None, Some(p)) => fit_sa(p)?,
        (None, None) => return Err(input("synthesizability needs --sa-model or --fit")),
    };
    Ok(Critics::new(sa, oracle_from_env()?))
}

pub fn run(cli: Cli) -> CliResult {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Fragment(a) => {
            let opts = CleaveOptions {
                cutoff: a.cutoff,
                max_fragments: a.max_fragments,
                min_fragment_atoms: a.min_atoms,
                ..CleaveOptions::default()
            };
            #[derive(Serialize)]
            struct Row {
                smiles: String,
                fragments: Vec<String>,
                cut_bonds: Vec<(usize, usize)>,
            }
            let mut text = String::new();
            let mut skipped = 0;
            for line in read_lines(&a.input)? {
                let Ok(g) = parse_smiles(&line) else {
                    log::warn!("skipping invalid SMILES {line:?}");
                    skipped += 1;
                    continue;
                };
                let fs = cleave(&g, &opts);
                text.push_str(&json_line(&Row {
                    smiles: write_smiles(&g),
                    fragments: fs.fragments.iter().map(write_smiles).collect(),
                    cut_bonds: fs.cut_bonds,
                })?);
            }
            if skipped > 0 {
                eprintln!("skipped {skipped} invalid molecules");
            }
            emit(out, &text)
        }
        Command::BuildCorpus(a) => {
            let mols = read_lines(&a.input)?;
            let mix = match &a.mix {
                Some(m) => Mix::parse(m).map_err(input)?,
                None => Mix::default(),
            };
            let opts = CorpusOptions {
                mix,
                phase: a.phase,
                pair_merge_rate: a.pair_merge_rate,
                ..CorpusOptions::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let (records, stats) = build_corpus(&mols, &opts, &mut rng).map_err(input)?;
            let path = require_out(&cli.out, "build-corpus")?;
            write_corpus(&path, &records).map_err(internal)?;
            if let Some(sa_path) = &a.sa_out {
                let graphs: Vec<_> = mols.iter().filter_map(|l| parse_smiles(l).ok()).collect();
                fs::write(sa_path, SaModel::fit(&graphs).to_params()).map_err(internal)?;
            }
            eprintln!(
                "{} molecules -> {} records {:?}; rejections {:?}",
                stats.molecules, stats.records, stats.per_kind, stats.rejections
            );
            Ok(())
        }
        Command::TrainTokenizer(a) => {
            let records = read_lines(&a.input)?;
            let vocab = train_bpe(&records, a.vocab_size).map_err(input)?;
            emit(out, &vocab.to_text())
        }
        Command::Pretrain(a) => {
            let dir = require_out(&cli.out, "pretrain")?;
            let records = read_corpus(&a.corpus).map_err(input)?;
            let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
            let opts = TrainOptions {
                epochs: a.epochs,
                lr: a.lr,
                batch_size: a.batch_size,
                loss_mask: a.loss_mask,
                seed: cli.seed,
                out_dir: Some(dir.clone()),
                ..TrainOptions::default()
            };
            let (ckpt, report) = match &a.init {
                Some(init) => {
                    let base = Checkpoint::load(init).map_err(input)?;
                    fragforge_lm::finetune(&base, &texts, &opts).map_err(internal)?
                }
                None => {
                    let vocab_path = a.vocab.as_ref().ok_or_else(|| input("pretrain needs --vocab or --init"))?;
                    let vocab = Vocab::load(vocab_path).map_err(input)?;
                    let mut config = match &cli.config {
                        Some(p) => toml::from_str::<ModelConfig>(&fs::read_to_string(p).map_err(input)?).map_err(input)?,
                        None => ModelConfig::default(),
                    };
                    config.seed = cli.seed;
                    fragforge_lm::train_clm(&texts, &vocab, config, &opts).map_err(internal)?
                }
            };
            ckpt.save(&dir).map_err(internal)?;
            eprintln!(
                "{} steps, epoch losses {:?}, {} records skipped",
                report.steps.len(),
                report.epoch_losses,
                report.skipped
            );
            Ok(())
        }
        Command::Generate(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint).map_err(input)?;
            let mut prompts = a.prompt.clone();
            if let Some(p) = &a.prompts {
                prompts.extend(read_corpus(p).map_err(input)?.iter().map(|r| r.prompt().to_string()));
            }
            if prompts.is_empty() {
                return Err(input("generate needs --prompt or --prompts"));
            }
            let all: Vec<&str> = prompts
                .iter()
                .flat_map(|p| std::iter::repeat_n(p.as_str(), a.n))
                .collect();
            let params = SamplingParams {
                top_k: a.sampling.top_k,
                top_p: a.sampling.top_p,
                temperature: a.sampling.temperature,
                max_new_tokens: a.sampling.max_new_tokens,
                seed: cli.seed,
            };
            params.validate().map_err(input)?;
            let completions = generate(&ckpt.model, &ckpt.vocab, &all, &params).map_err(|e| match e {
                fragforge_lm::ModelError::Input(_) | fragforge_lm::ModelError::ContextOverflow { .. } => input(e),
                other => internal(other),
            })?;
            let text: String = completions.iter().map(|c| format!("{}\n", c.text)).collect();
            emit(out, &text)
        }
        Command::Score(a) => {
            let critics = critics(&a.critics)?;
            let mols = read_lines(&a.input)?;
            let refs = match &a.reference {
                Some(p) => Some(read_lines(p)?),
                None => None,
            };
            if let Some(r) = &refs {
                if r.len() != mols.len() {
                    return Err(input(format!("{} molecules but {} references", mols.len(), r.len())));
                }
            }
            let mut graphs = Vec::new();
            let mut ref_graphs = Vec::new();
            for (i, m) in mols.iter().enumerate() {
                let Ok(g) = parse_smiles(m) else {
                    log::warn!("skipping invalid SMILES {m:?}");
                    continue;
                };
                graphs.push(g);
                ref_graphs.push(match &refs {
                    Some(r) => vec![parse_smiles(&r[i]).map_err(|e| input(format!("reference {}: {e}", i + 1)))?],
                    None => Vec::new(),
                });
            }
            let props = critics.properties(&graphs, &ref_graphs).map_err(internal)?;
            let mut scored: Vec<ScoredMolecule> = graphs
                .iter()
                .zip(props)
                .map(|(g, p)| ScoredMolecule::new(write_smiles(g), p, Source::Learner))
                .collect();
            assign_pareto(&mut scored);
            let mut text = String::new();
            for m in &scored {
                text.push_str(&json_line(m)?);
            }
            emit(out, &text)
        }
        Command::Rae(a) => {
            let path = cli.config.as_ref().ok_or_else(|| input("rae needs --config"))?;
            let mut config = RaeConfig::from_toml(&fs::read_to_string(path).map_err(input)?).map_err(input)?;
            if cli.seed != 0 {
                config.seed = cli.seed;
            }
            if let Some(o) = &cli.out {
                config.out_dir = Some(o.clone());
            }
            let base = path.parent().unwrap_or(Path::new("."));
            let resolve = |p: &Option<PathBuf>, what: &str| -> CliResult<PathBuf> {
                let p = p.as_ref().ok_or_else(|| input(format!("rae config needs `{what}`")))?;
                Ok(if p.is_relative() { base.join(p) } else { p.clone() })
            };
            let ckpt = Checkpoint::load(&resolve(&config.checkpoint, "checkpoint")?).map_err(input)?;
            let records = read_corpus(&resolve(&config.prompts, "prompts")?).map_err(input)?;
            let pool = prompt_pool(&records);
            let sa = fit_sa(&resolve(&config.sa_fit, "sa_fit")?)?;
            let oracle: Box<dyn DockingOracle> = match &config.oracle {
                Some(cmd) => Box::new(SubprocessOracle::from_command(cmd).map_err(input)?),
                None => oracle_from_env()?,
            };
            let critics = Critics::new(sa, oracle);
            let out_dir = resolve(&config.out_dir, "out_dir")?;
            let experts = Rae::configured_experts(&config).map_err(input)?;
            let mut rae = Rae::new(config, &pool, &critics, experts).map_err(input)?;
            let state = rae.run(ckpt, Some(&out_dir), a.resume).map_err(internal)?;
            print!("{}", crate::evaluate::rae_table(&state.metrics));
            Ok(())
        }
        Command::Evaluate(a) => {
            let critics = critics(&a.critics)?;
            let mols = read_lines(&a.input)?;
            let refs = match &a.reference {
                Some(p) => Some(read_lines(p)?),
                None => None,
            };
            let report = evaluate(&mols, refs.as_deref(), &critics).map_err(|e| match e {
                crate::evaluate::EvalError::Critic(c) => internal(c),
                other => input(other),
            })?;
            let text = serde_json::to_string_pretty(&report).map_err(internal)? + "\n";
            emit(out, &text)
        }
        Command::Report(a) => {
            let mut rows = Vec::new();
            for p in &a.metrics {
                let text = fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
                let r: MetricsReport =
                    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", p.display())))?;
                let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
                rows.push((name, r));
            }
            emit(out, &report_table(&rows))
        }
    }
}
