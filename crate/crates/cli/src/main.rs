//! `ketod`: ingest → augment → build → train → generate → evaluate → report.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "ketod", version, about = "Knowledge-embedded task-oriented dialogue toolkit")]
struct Cli {
    /// JSON file whose keys override command-line flags: flat, nested under the
    /// subcommand name, or a run manifest written by the same subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory for relative input paths.
    #[arg(long, global = true, env = "KETOD_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Base directory for relative output paths.
    #[arg(long, global = true, env = "KETOD_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Import a corpus and knowledge base, validate, and split.
    Ingest(IngestArgs),
    /// Extract templates from the training split and generate knowledge-embedded dialogues.
    Augment(AugmentArgs),
    /// Serialize context/target pairs and build the vocabulary for one mode.
    Build(BuildArgs),
    /// Train a transformer on built pairs.
    Train(TrainArgs),
    /// Greedy-decode responses for a source file.
    Generate(GenerateArgs),
    /// Score hypotheses against references (BLEU, entity F1).
    Evaluate(EvaluateArgs),
    /// Emit a comparison table from result rows and optional Likert data.
    Report(ReportArgs),
    /// Emit (and optionally run) the batch-size × learning-rate training matrix.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Dialogue history only.
    Plain,
    /// History plus `<DTA>` KB rows.
    Kb,
    /// Knowledge-embedded augmented training data.
    Ke,
    /// Augmented training data and KB rows.
    KeKb,
}

impl Mode {
    pub fn uses_kb_rows(self) -> bool {
        matches!(self, Mode::Kb | Mode::KeKb)
    }

    pub fn uses_augmentation(self) -> bool {
        matches!(self, Mode::Ke | Mode::KeKb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Small,
    Large,
    Tiny,
}

impl From<ModelName> for ketod_model::Preset {
    fn from(m: ModelName) -> Self {
        match m {
            ModelName::Small => ketod_model::Preset::Small,
            ModelName::Large => ketod_model::Preset::Large,
            ModelName::Tiny => ketod_model::Preset::Tiny,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Gold {
    /// Entities of the reference response.
    Response,
    /// Entities of the KB rows attached to the source context.
    Kb,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Corpus: native JSONL, the raw release JSON, or a directory of split files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Knowledge base: JSONL, positional rows, raw release JSON, or its directory.
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Split sizes `train,valid,test`; defaults to 406,135,135 for a 676-dialogue corpus, else 60/20/20.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AugmentArgs {
    /// Output directory of `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9728)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw replacement records that agree with the source on area, food and price range.
    #[arg(long)]
    pub respect_constraints: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BuildArgs {
    /// Output directory of `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of `augment` (needed by the `ke` modes).
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Plain)]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub max_src_len: usize,
    /// Attach every KB row when the dialogue states no constraint.
    #[arg(long)]
    pub all_rows_without_constraints: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Output directory of `build`.
    #[arg(long)]
    pub built: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelName::Small)]
    pub model: ModelName,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 6.25e-5)]
    pub lr: f64,
    /// Epoch budget (default 30 unless `--steps` is given).
    #[arg(long, conflicts_with = "steps")]
    pub epochs: Option<usize>,
    /// Optimizer-step budget.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Single-threaded execution with a fixed reduction order.
    #[arg(long)]
    pub strict_deterministic: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub tie_embeddings: bool,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 64)]
    pub max_decode_len: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// One rendered context per line.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long)]
    pub hyp: PathBuf,
    /// References, one per line.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = F1Gold::Response)]
    pub f1_against: F1Gold,
    /// Source contexts (needed with `--f1-against kb`).
    #[arg(long)]
    pub src: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReportArgs {
    /// JSON array of `{label, bleu, f1[, likert]}` or `label<TAB>bleu<TAB>f1[<TAB>likert]` lines.
    #[arg(long)]
    pub rows: Option<PathBuf>,
    /// System-level Likert means, `label<TAB>mean` per line.
    #[arg(long)]
    pub likert_means: Option<PathBuf>,
    /// Per-example Likert scores, `id score [annotator]` per line.
    #[arg(long)]
    pub likert: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GridArgs {
    /// Output directory of `build`.
    #[arg(long)]
    pub built: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelName::Small, ModelName::Large])]
    pub models: Vec<ModelName>,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16])]
    pub batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-5, 1e-4])]
    pub lrs: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Also emit the reference seq2seq cell per model (lr 6.25e-5; small: batch 8, 100k steps; large: batch 16, 50k steps).
    #[arg(long)]
    pub seq2seq: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train every cell instead of only writing its manifest.
    #[arg(long)]
    pub run: bool,
    #[arg(long)]
    pub strict_deterministic: bool,
}

/// Overlays config-file keys onto parsed flags.
fn apply_config<A: Serialize + DeserializeOwned>(args: A, command: &str, config: Option<&Value>) -> Result<A> {
    let Some(config) = config else {
        return Ok(args);
    };
    let Value::Object(root) = config else {
        bail!("config file must hold a JSON object");
    };
    // a run manifest replays its recorded arguments
    let overrides = match (root.get(command), root.get("command"), root.get("config")) {
        (Some(Value::Object(nested)), _, _) => nested,
        (_, Some(Value::String(c)), Some(Value::Object(recorded))) if c == command => recorded,
        _ => root,
    };
    let mut value = serde_json::to_value(&args)?;
    let Value::Object(fields) = &mut value else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, v) in overrides {
        let key = key.replace('-', "_");
        if fields.contains_key(&key) {
            fields.insert(key, v.clone());
        } else if !matches!(v, Value::Object(_)) {
            log::warn!("config key `{key}` does not apply to `{command}`");
        }
    }
    serde_json::from_value(value).with_context(|| format!("applying config overrides to `{command}`"))
}

pub struct Roots {
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Roots {
    pub fn input(&self, p: &Path) -> PathBuf {
        match &self.data {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn output(&self, p: &Path) -> PathBuf {
        match &self.output {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let config: Option<Value> = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let roots = Roots {
        data: cli.data_root,
        output: cli.output_root,
    };
    let config = config.as_ref();
    match cli.command {
        Command::Ingest(a) => commands::ingest(&apply_config(a, "ingest", config)?, &roots),
        Command::Augment(a) => commands::augment(&apply_config(a, "augment", config)?, &roots),
        Command::Build(a) => commands::build(&apply_config(a, "build", config)?, &roots),
        Command::Train(a) => commands::train(&apply_config(a, "train", config)?, &roots),
        Command::Generate(a) => commands::generate(&apply_config(a, "generate", config)?, &roots),
        Command::Evaluate(a) => commands::evaluate(&apply_config(a, "evaluate", config)?, &roots),
        Command::Report(a) => commands::report(&apply_config(a, "report", config)?, &roots),
        Command::Grid(a) => commands::grid(&apply_config(a, "grid", config)?, &roots),
    }
}
