use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "dpr", version, about = "Dense and sparse passage retrieval pipeline")]
pub struct Cli {
    /// Raise log verbosity (repeatable).
    #[arg(long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Write the synthetic synonym-gap corpus and question sets.
    Synth(SynthArgs),
    /// Chunk a JSONL corpus into a passage store.
    Ingest(IngestArgs),
    /// Build the BM25 index over a passage store.
    BuildSparse(BuildSparseArgs),
    /// Resolve positives and mine negatives for a QA file.
    BuildDataset(BuildDatasetArgs),
    /// Train the dual encoder on a training set.
    Train(TrainArgs),
    /// Encode every passage with the passage tower.
    Embed(EmbedArgs),
    /// Build an HNSW graph over passage vectors.
    BuildDense(BuildDenseArgs),
    /// Retrieve the top k passages for every question.
    Retrieve(RetrieveArgs),
    /// Top-k retrieval accuracy of a retrieval file.
    Eval(EvalArgs),
    /// Exact vs HNSW search throughput.
    Bench(BenchArgs),
    /// Train and evaluate every cell of the ablation grid.
    Ablate(AblateArgs),
    /// Accuracy as a function of training-set size.
    Curve(CurveArgs),
    /// Train the extractive reader on retrieved passages.
    TrainReader(TrainReaderArgs),
    /// Extract an answer for every question from its retrieved passages.
    Answer(AnswerArgs),
    /// Run every stage from corpus to answers.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel stages.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON file overriding synonym-task settings.
    #[arg(long)]
    pub synth_config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TokenizerArgs {
    #[arg(long, default_value_t = 100)]
    pub chunk_size: usize,
    /// Keep the original case of tokens.
    #[arg(long)]
    pub keep_case: bool,
    /// File with one stopword per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct Bm25Args {
    #[arg(long, default_value_t = 0.9)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.4)]
    pub b: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildSparseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    pub bm25: Bm25Args,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Positives {
    Gold,
    Distant,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildDatasetArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    /// BM25 index file.
    #[arg(long)]
    pub index: PathBuf,
    /// QA pairs as JSONL.
    #[arg(long)]
    pub qa: PathBuf,
    /// Negatives per example, e.g. `random=0,bm25=1,gold_other=0`.
    #[arg(long, default_value = "bm25=1")]
    pub negatives: String,
    #[arg(long, value_enum, default_value_t = Positives::Gold)]
    pub positives: Positives,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Dot,
    Cosine,
    #[value(alias = "l2")]
    NegL2,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Nll,
    Triplet,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    InBatch,
    Explicit,
}

/// Encoder training overrides; unset flags fall back to `--train-config`
/// and then to the built-in defaults.
#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    /// JSON training config used as the base.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<Loss>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, value_enum)]
    pub similarity: Option<Similarity>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Negatives used per example, e.g. `bm25=1`.
    #[arg(long)]
    pub negatives: Option<String>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    /// Training set JSONL from build-dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    /// Model directory from train.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct HnswArgs {
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub ef_construction: usize,
    #[arg(long, default_value_t = 128)]
    pub ef_search: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildDenseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Vector file from embed.
    #[arg(long)]
    pub vectors: PathBuf,
    #[command(flatten)]
    pub hnsw: HnswArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sparse,
    Dense,
    Hybrid,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    Hnsw,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long, value_enum, default_value_t = Kind::Dense)]
    pub kind: Kind,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = retrieval_core::retrieval::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Candidates taken from each side before hybrid reranking.
    #[arg(long, default_value_t = retrieval_core::retrieval::DEFAULT_POOL)]
    pub pool: usize,
    #[arg(long, value_enum, default_value_t = Backend::Exact)]
    pub backend: Backend,
    /// BM25 index file (sparse and hybrid).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Model directory (dense and hybrid).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Vector file (dense and hybrid).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// HNSW file (backend hnsw).
    #[arg(long)]
    pub hnsw: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// Retrieval JSONL, one record per question in QA order.
    #[arg(long)]
    pub retrieval: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 20, 100])]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Vector file to search; random Gaussian vectors are used otherwise.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Size of the random vector set.
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Random Gaussian queries.
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Seconds each backend is timed for.
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Backend::Exact, Backend::Hnsw])]
    pub backends: Vec<Backend>,
    #[command(flatten)]
    pub hnsw: HnswArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Training QA pairs (with gold contexts).
    #[arg(long)]
    pub train_qa: PathBuf,
    /// Held-out QA pairs used for evaluation.
    #[arg(long)]
    pub eval_qa: PathBuf,
    #[command(flatten)]
    pub bm25: Bm25Args,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// JSON list of grid cells; the built-in grid otherwise.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 300, 1000])]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct ReaderFlags {
    #[arg(long)]
    pub reader_epochs: Option<usize>,
    #[arg(long)]
    pub reader_batch_size: Option<usize>,
    #[arg(long)]
    pub reader_lr: Option<f64>,
    /// Passages per question during reader training.
    #[arg(long)]
    pub reader_passages: Option<usize>,
    #[arg(long)]
    pub max_span_len: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainReaderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// Retrieval JSONL for the same questions, in order.
    #[arg(long)]
    pub retrieval: PathBuf,
    /// Retrieved passages considered per question.
    #[arg(long, default_value_t = 100)]
    pub top: usize,
    #[command(flatten)]
    pub reader: ReaderFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct AnswerArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: PathBuf,
    /// QA pairs or questions; exact match is reported when answers exist.
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub retrieval: PathBuf,
    /// Reader directory from train-reader.
    #[arg(long)]
    pub reader: PathBuf,
    /// Retrieved passages the reader chooses from.
    #[arg(long, default_value_t = 8)]
    pub top: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub train_qa: PathBuf,
    #[arg(long)]
    pub eval_qa: PathBuf,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[command(flatten)]
    pub bm25: Bm25Args,
    /// Negatives mined per training example.
    #[arg(long, default_value = "bm25=1")]
    pub dataset_negatives: String,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub hnsw: HnswArgs,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = retrieval_core::retrieval::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[command(flatten)]
    pub reader: ReaderFlags,
}
