use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use euphem_core::classifier::Variant;

pub const DEFAULT_CACHE: &str = "imagery-cache";

#[derive(Debug, Parser)]
#[command(name = "euphem", version, about = "Euphemism detection with literal descriptions and imagery")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a raw examples file, select sentences and assign folds.
    Prepare(PrepareArgs),
    /// Generate and encode imagery for every lexicon term and description.
    Imagery(ImageryArgs),
    /// Cross-validated fine-tuning; writes checkpoints and a metrics file.
    Train(TrainArgs),
    /// F1 on a labeled file, from predictions or checkpoints.
    Evaluate(EvaluateArgs),
    /// Score examples with one or more checkpoints.
    Predict(PredictArgs),
    /// Paired t-test between two metrics files.
    Significance(SignificanceArgs),
    /// Markdown results report.
    Report(ReportArgs),
    /// Run the curation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LmBackend {
    TinyBase,
    TinyLarge,
}

impl LmBackend {
    pub fn name(self) -> &'static str {
        match self {
            LmBackend::TinyBase => "tiny-base",
            LmBackend::TinyLarge => "tiny-large",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImageBackend {
    Stub,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Ensemble {
    Mean,
    Vote,
}

impl From<Ensemble> for euphem_core::metrics::EnsembleMethod {
    fn from(e: Ensemble) -> Self {
        match e {
            Ensemble::Mean => Self::MeanProbability,
            Ensemble::Vote => Self::MajorityVote,
        }
    }
}

#[derive(Debug, Args)]
pub struct LexiconArg {
    /// Lexicon JSON; the bundled lexicon when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImagerySettings {
    #[arg(long, default_value_t = 9)]
    pub k: usize,
    /// Generation seed shared by all texts.
    #[arg(long = "imagery-seed", default_value_t = 0)]
    pub imagery_seed: u64,
    #[arg(long = "image-backend", value_enum, default_value = "stub")]
    pub image_backend: ImageBackend,
    #[arg(long = "encoder", value_enum, default_value = "stub")]
    pub encoder: ImageBackend,
    #[arg(long, default_value_t = euphem_core::experiments::DEFAULT_IMAGERY_DIM)]
    pub dim: usize,
    /// L2-normalize mean embeddings.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw examples (JSON Lines).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub lexicon: LexiconArg,
    /// Output directory for examples.jsonl and folds.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = euphem_core::corpus::DEFAULT_N_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// The file has no labels (test split); no folds are written.
    #[arg(long)]
    pub unlabeled: bool,
    /// Accept pet_ids missing from the lexicon.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct ImageryArgs {
    #[command(flatten)]
    pub lexicon: LexiconArg,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: ImagerySettings,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled examples, raw or prepared.
    #[arg(long)]
    pub data: PathBuf,
    /// folds.json written by `prepare`.
    #[arg(long)]
    pub folds: PathBuf,
    #[command(flatten)]
    pub lexicon: LexiconArg,
    #[arg(long, value_parser = clap::value_parser!(Variant))]
    pub variant: Variant,
    #[arg(long, value_enum)]
    pub backend: Option<LmBackend>,
    /// Imagery cache written by `imagery`; read by desc_imag only.
    #[arg(long, default_value = DEFAULT_CACHE)]
    pub imagery: PathBuf,
    /// Unlabeled examples scored by every fold model.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Train only this fold.
    #[arg(long)]
    pub fold: Option<usize>,
    /// JSON training config; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub ensemble: Option<Ensemble>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// Directory of checkpoint files (every *.json inside).
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[command(flatten)]
    pub lexicon: LexiconArg,
    /// Imagery cache; read by desc_imag checkpoints only.
    #[arg(long, default_value = DEFAULT_CACHE)]
    pub imagery: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub ensemble: Ensemble,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// JSON Lines output with id, p_hat, y_hat.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Labeled examples, raw or prepared.
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions written by `predict`; otherwise the checkpoints are run.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct SignificanceArgs {
    /// Metrics file of the first system.
    #[arg(long)]
    pub a: PathBuf,
    /// Metrics file of the second system.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics files, one table row each.
    #[arg(long, required = true, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
    /// Significance result files.
    #[arg(long, num_args = 1..)]
    pub significance: Vec<PathBuf>,
    /// Test labels (labeled examples file) for the test column.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub lexicon: LexiconArg,
    /// Imagery cache whose contact sheets are shown.
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    /// pet_ids for the imagery section (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub pets: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub lexicon: LexiconArg,
    /// Snapshot and audit log directory.
    #[arg(long = "state-dir")]
    pub state_dir: PathBuf,
    /// Labeled examples used for counts and re-scoring.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Imagery cache directory for previews.
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    #[command(flatten)]
    pub settings: ImagerySettings,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}
