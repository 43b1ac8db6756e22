use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use retrieval_core::corpus::{
    read_documents, read_json, read_jsonl, tokenize, write_json, write_jsonl, PassageStore, TokenizerConfig,
};
use retrieval_core::dense_index::{embed_store, gaussian_vectors, HnswIndex, HnswParams, VectorStore};
use retrieval_core::dual_encoder::{train, BatchMode, EncodedExample, EncoderParams, LossName, ModelSidecar, SimilarityKind, TrainConfig};
use retrieval_core::evalbench::{
    ablation_sweep, default_ablation_grid, exact_match, fingerprint, sample_efficiency_curve, throughput_bench,
    top_k_accuracy, write_csv, AblationCell, BenchConfig, BenchCsvRow, Experiment,
};
use retrieval_core::qa_dataset::{
    build_training_set, read_qa_pairs, read_training_set, write_training_set, NegativeSpec, PositiveMode, QAPair,
};
use retrieval_core::reader::{
    answer_question, build_reader_examples, train_reader, PredictionRecord, ReaderConfig, ReaderParams,
};
use retrieval_core::retrieval::{write_retrieval, DenseBackend, DenseSide, RetrievalRecord, Retriever, RetrieverKind};
use retrieval_core::sparse_index::{Bm25Params, InvertedIndex};
use retrieval_core::synth::{synonym_task, SynonymTaskConfig};
use retrieval_core::vocab::Vocab;
use retrieval_core::{PassageId, RankedList};

use crate::args::*;
use crate::UsageError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const BM25_FILE: &str = "bm25.bin";
pub const TRAIN_SET_FILE: &str = "train_set.jsonl";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const ENCODER_SIDECAR: &str = "encoder.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const HNSW_FILE: &str = "hnsw.bin";
pub const RETRIEVAL_FILE: &str = "retrieval.jsonl";
pub const READER_FILE: &str = "reader.bin";
pub const READER_SIDECAR: &str = "reader.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            anyhow::bail!("missing input {}", p.display());
        }
    }
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_resolved<A: Serialize>(out: &Path, args: &A, resolved: serde_json::Value) -> Result<()> {
    let value = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "resolved": resolved,
    });
    write_json(&out.join(RESOLVED_CONFIG), &value)?;
    Ok(())
}

/// `random=7,bm25=1,gold_other=0`; omitted kinds are zero.
pub fn parse_negatives(s: &str) -> Result<NegativeSpec> {
    let mut spec = NegativeSpec::default();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (kind, count) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("negatives entry {part:?} is not kind=count")))?;
        let count: usize = count
            .parse()
            .map_err(|_| usage(format!("negatives count {count:?} is not a non-negative integer")))?;
        match kind {
            "random" => spec.random = count,
            "bm25" => spec.bm25 = count,
            "gold_other" | "gold" => spec.gold_other = count,
            _ => return Err(usage(format!("unknown negative kind {kind:?}"))),
        }
    }
    Ok(spec)
}

fn check_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    // A second call fails harmlessly when the pool is already set up.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::BuildSparse(a) => build_sparse(a),
        Command::BuildDataset(a) => build_dataset(a),
        Command::Train(a) => train_cmd(a),
        Command::Embed(a) => embed(a),
        Command::BuildDense(a) => build_dense(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
        Command::Curve(a) => curve(a),
        Command::TrainReader(a) => train_reader_cmd(a),
        Command::Answer(a) => answer(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn start<A: Serialize>(common: &Common, inputs: &[&Path], args: &A, resolved: serde_json::Value) -> Result<()> {
    check_threads(common.threads)?;
    prepare_out(&common.out)?;
    write_resolved(&common.out, args, resolved)?;
    require(inputs)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg: SynonymTaskConfig = match &a.synth_config {
        Some(p) => {
            require(&[p])?;
            read_json(p)?
        }
        None => SynonymTaskConfig::default(),
    };
    cfg.seed = a.common.seed;
    start(&a.common, &[], a, json!({ "synth": cfg }))?;
    let task = synonym_task(&cfg)?;
    let out = &a.common.out;
    write_jsonl(&out.join("corpus.jsonl"), &task.documents)?;
    write_jsonl(&out.join("train.jsonl"), &task.train)?;
    write_jsonl(&out.join("test.jsonl"), &task.test)?;
    log::info!(
        "{} documents, {} train and {} test questions",
        task.documents.len(),
        task.train.len(),
        task.test.len()
    );
    Ok(())
}

fn tokenizer_config(t: &TokenizerArgs) -> Result<TokenizerConfig> {
    let mut cfg = TokenizerConfig { lowercase: !t.keep_case, ..Default::default() };
    if let Some(p) = &t.stopwords {
        require(&[p])?;
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.stopwords = text
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(|w| if cfg.lowercase { w.to_lowercase() } else { w.to_string() })
            .collect::<BTreeSet<_>>();
    }
    Ok(cfg)
}

fn do_ingest(corpus: &Path, t: &TokenizerArgs, out: &Path) -> Result<PassageStore> {
    if t.chunk_size == 0 {
        return Err(usage("--chunk-size must be at least 1"));
    }
    let docs = read_documents(corpus)?;
    let store = PassageStore::from_documents(&docs, t.chunk_size, tokenizer_config(t)?)?;
    store.save(out)?;
    log::info!("{} documents -> {} passages", docs.len(), store.len());
    Ok(store)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let tok = tokenizer_config(&a.tokenizer)?;
    start(&a.common, &[&a.corpus], a, json!({ "chunk_size": a.tokenizer.chunk_size, "tokenizer": tok }))?;
    do_ingest(&a.corpus, &a.tokenizer, &a.common.out)?;
    Ok(())
}

fn bm25_params(b: &Bm25Args) -> Result<Bm25Params> {
    let p = Bm25Params { k1: b.k1, b: b.b };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn build_sparse(a: &BuildSparseArgs) -> Result<()> {
    let params = bm25_params(&a.bm25)?;
    start(&a.common, &[&a.store], a, json!({ "bm25": params }))?;
    let store = PassageStore::load(&a.store)?;
    let t = Instant::now();
    let index = InvertedIndex::build(&store, params)?;
    index.save(&a.common.out.join(BM25_FILE))?;
    log::info!("indexed {} terms in {:.2}s", index.num_terms(), t.elapsed().as_secs_f64());
    Ok(())
}

fn positive_mode(p: Positives) -> PositiveMode {
    match p {
        Positives::Gold => PositiveMode::Gold,
        Positives::Distant => PositiveMode::Distant,
    }
}

fn do_build_dataset(
    store: &PassageStore,
    index: &InvertedIndex,
    pairs: &[QAPair],
    spec: &NegativeSpec,
    mode: PositiveMode,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (examples, report) = build_training_set(pairs, store, index, spec, mode, seed)?;
    write_training_set(&out.join(TRAIN_SET_FILE), &examples)?;
    write_json(&out.join("build_report.json"), &report)?;
    Ok(())
}

fn build_dataset(a: &BuildDatasetArgs) -> Result<()> {
    let spec = parse_negatives(&a.negatives)?;
    start(
        &a.common,
        &[&a.store, &a.index, &a.qa],
        a,
        json!({ "negatives": spec, "positives": a.positives, "seed": a.common.seed }),
    )?;
    let store = PassageStore::load(&a.store)?;
    let index = InvertedIndex::load(&a.index)?;
    let pairs = read_qa_pairs(&a.qa)?;
    do_build_dataset(&store, &index, &pairs, &spec, positive_mode(a.positives), a.common.seed, &a.common.out)
}

fn train_config(flags: &TrainFlags, seed: u64) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &flags.train_config {
        Some(p) => {
            require(&[p])?;
            read_json(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = flags.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = flags.epochs {
        c.epochs = v;
    }
    if let Some(v) = flags.lr {
        c.lr = v;
    }
    if let Some(v) = flags.warmup_frac {
        c.warmup_frac = v;
    }
    if let Some(v) = flags.loss {
        c.loss = match v {
            Loss::Nll => LossName::Nll,
            Loss::Triplet => LossName::Triplet,
        };
    }
    if let Some(v) = flags.margin {
        c.margin = v;
    }
    if let Some(v) = flags.similarity {
        c.similarity = match v {
            Similarity::Dot => SimilarityKind::Dot,
            Similarity::Cosine => SimilarityKind::Cosine,
            Similarity::NegL2 => SimilarityKind::NegL2,
        };
    }
    if let Some(v) = flags.mode {
        c.mode = match v {
            Mode::InBatch => BatchMode::InBatch,
            Mode::Explicit => BatchMode::Explicit,
        };
    }
    if let Some(v) = &flags.negatives {
        c.negatives = parse_negatives(v)?;
    }
    if let Some(v) = flags.dropout {
        c.dropout = v;
    }
    if let Some(v) = flags.dim {
        c.dim = v;
    }
    if let Some(v) = flags.embed_dim {
        c.embed_dim = v;
    }
    c.seed = seed;
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn question_tokens<'a>(store: &PassageStore, questions: impl Iterator<Item = &'a str>) -> Vec<Vec<String>> {
    questions.map(|q| tokenize(store.tokenizer(), q)).collect()
}

fn do_train(store: &PassageStore, dataset: &Path, config: &TrainConfig, out: &Path) -> Result<()> {
    let examples = read_training_set(dataset)?;
    if examples.is_empty() {
        anyhow::bail!("training set {} is empty", dataset.display());
    }
    let qtok = question_tokens(store, examples.iter().map(|e| e.question.as_str()));
    let vocab = Vocab::build(store.passages(), qtok.iter().map(|t| t.as_slice()));
    let encoded = examples
        .iter()
        .map(|e| EncodedExample::from_example(e, store, &vocab))
        .collect::<retrieval_core::Result<Vec<_>>>()?;
    let params = EncoderParams::<f32>::init(vocab.len(), config.embed_dim, config.dim, config.seed);
    let t = Instant::now();
    let outcome = train(params, &encoded, config)?;
    log::info!("trained {} steps in {:.1}s", outcome.steps, t.elapsed().as_secs_f64());
    outcome.params.save(&out.join(ENCODER_FILE))?;
    vocab.save(&out.join(VOCAB_FILE))?;
    let sidecar = ModelSidecar {
        config: config.clone(),
        vocab_size: vocab.len(),
        embed_dim: config.embed_dim,
        dim: config.dim,
        train_examples: encoded.len(),
        final_loss: outcome.loss_trace.last().copied(),
        loss_trace: outcome.loss_trace,
    };
    write_json(&out.join(ENCODER_SIDECAR), &sidecar)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let config = train_config(&a.train, a.common.seed)?;
    start(&a.common, &[&a.store, &a.dataset], a, json!({ "train": config }))?;
    let store = PassageStore::load(&a.store)?;
    do_train(&store, &a.dataset, &config, &a.common.out)
}

struct Model {
    params: EncoderParams<f32>,
    vocab: Vocab,
}

fn load_model(dir: &Path) -> Result<Model> {
    require(&[&dir.join(ENCODER_FILE), &dir.join(VOCAB_FILE)])?;
    let params = EncoderParams::<f32>::load(&dir.join(ENCODER_FILE))?;
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != params.vocab_size() {
        anyhow::bail!(
            "vocabulary of {} tokens does not match model vocabulary of {}",
            vocab.len(),
            params.vocab_size()
        );
    }
    Ok(Model { params, vocab })
}

fn do_embed(store: &PassageStore, model: &Model, out: &Path) -> Result<f64> {
    let t = Instant::now();
    let vectors = embed_store(&model.params, &model.vocab, store)?;
    let embed_s = t.elapsed().as_secs_f64();
    vectors.save(&out.join(VECTORS_FILE))?;
    write_json(
        &out.join("embed_report.json"),
        &json!({ "passages": vectors.len(), "dim": vectors.dim(), "embed_s": embed_s }),
    )?;
    Ok(embed_s)
}

fn embed(a: &EmbedArgs) -> Result<()> {
    start(&a.common, &[&a.store, &a.model], a, json!({}))?;
    let store = PassageStore::load(&a.store)?;
    let model = load_model(&a.model)?;
    do_embed(&store, &model, &a.common.out)?;
    Ok(())
}

fn hnsw_params(h: &HnswArgs, seed: u64) -> Result<HnswParams> {
    let p = HnswParams {
        m: h.m,
        ef_construction: h.ef_construction,
        ef_search: h.ef_search,
        seed,
        ..Default::default()
    };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn do_build_dense(vectors: &VectorStore, params: HnswParams, out: &Path) -> Result<()> {
    let t = Instant::now();
    let index = HnswIndex::build(vectors, params)?;
    index.save(&out.join(HNSW_FILE))?;
    write_json(
        &out.join("hnsw_report.json"),
        &json!({ "nodes": index.len(), "max_level": index.max_level(), "build_s": t.elapsed().as_secs_f64() }),
    )?;
    Ok(())
}

fn build_dense(a: &BuildDenseArgs) -> Result<()> {
    let params = hnsw_params(&a.hnsw, a.common.seed)?;
    start(&a.common, &[&a.vectors], a, json!({ "hnsw": params }))?;
    let vectors = VectorStore::load(&a.vectors)?;
    do_build_dense(&vectors, params, &a.common.out)
}

fn retriever_kind(kind: Kind, backend: Backend, lambda: f64, pool: usize) -> Result<RetrieverKind> {
    let backend = match backend {
        Backend::Exact => DenseBackend::Exact,
        Backend::Hnsw => DenseBackend::Hnsw,
    };
    let k = match kind {
        Kind::Sparse => RetrieverKind::Sparse,
        Kind::Dense => RetrieverKind::Dense { backend },
        Kind::Hybrid => RetrieverKind::Hybrid { lambda, pool_n: pool, backend },
    };
    k.validate().map_err(|e| usage(e.to_string()))?;
    Ok(k)
}

struct Indexes {
    sparse: Option<InvertedIndex>,
    model: Option<Model>,
    vectors: Option<VectorStore>,
    hnsw: Option<HnswIndex>,
}

fn do_retrieve(store: &PassageStore, ix: &Indexes, pairs: &[QAPair], kind: RetrieverKind, k: usize) -> Result<Vec<RetrievalRecord>> {
    let dense = match (&ix.model, &ix.vectors) {
        (Some(m), Some(v)) => Some(DenseSide { params: &m.params, vocab: &m.vocab, vectors: v, hnsw: ix.hnsw.as_ref() }),
        _ => None,
    };
    let retriever = Retriever { tokenizer: store.tokenizer(), sparse: ix.sparse.as_ref(), dense };
    pairs
        .iter()
        .map(|p| Ok(RetrievalRecord::new(&p.question, &retriever.retrieve(kind, &p.question, k)?)))
        .collect()
}

fn retrieve(a: &RetrieveArgs) -> Result<()> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let kind = retriever_kind(a.kind, a.backend, a.lambda, a.pool)?;
    let needs_sparse = matches!(kind, RetrieverKind::Sparse | RetrieverKind::Hybrid { .. });
    let needs_dense = !matches!(kind, RetrieverKind::Sparse);
    let needs_hnsw = matches!(a.backend, Backend::Hnsw) && needs_dense;
    let missing = |flag: &str| usage(format!("--kind {:?} needs {flag}", a.kind).to_lowercase());
    let index = if needs_sparse { Some(a.index.as_ref().ok_or_else(|| missing("--index"))?) } else { None };
    let model = if needs_dense { Some(a.model.as_ref().ok_or_else(|| missing("--model"))?) } else { None };
    let vectors = if needs_dense { Some(a.vectors.as_ref().ok_or_else(|| missing("--vectors"))?) } else { None };
    let hnsw = if needs_hnsw { Some(a.hnsw.as_ref().ok_or_else(|| missing("--hnsw"))?) } else { None };
    let mut inputs: Vec<&Path> = vec![&a.store, &a.qa];
    inputs.extend([index, model, vectors, hnsw].into_iter().flatten().map(PathBuf::as_path));
    start(&a.common, &inputs, a, json!({ "retriever": kind, "k": a.k }))?;

    let store = PassageStore::load(&a.store)?;
    let pairs = read_qa_pairs(&a.qa)?;
    let ix = Indexes {
        sparse: index.map(|p| InvertedIndex::load(p)).transpose()?,
        model: model.map(|p| load_model(p)).transpose()?,
        vectors: vectors.map(|p| VectorStore::load(p)).transpose()?,
        hnsw: hnsw.map(|p| HnswIndex::load(p)).transpose()?,
    };
    let records = do_retrieve(&store, &ix, &pairs, kind, a.k)?;
    write_retrieval(&a.common.out.join(RETRIEVAL_FILE), &records)?;
    Ok(())
}

fn read_retrieval(path: &Path, pairs: &[QAPair]) -> Result<Vec<RankedList>> {
    let records: Vec<RetrievalRecord> = read_jsonl(path)?;
    if records.len() != pairs.len() {
        anyhow::bail!("{} retrieval records for {} questions", records.len(), pairs.len());
    }
    if let Some(i) = records.iter().zip(pairs).position(|(r, p)| r.question != p.question) {
        anyhow::bail!("retrieval record {} is for a different question than the QA file", i + 1);
    }
    Ok(records.iter().map(RetrievalRecord::ranked_list).collect())
}

#[derive(Serialize)]
struct EvalCsvRow {
    k: usize,
    accuracy: f64,
}

fn do_eval(store: &PassageStore, pairs: &[QAPair], lists: &[RankedList], ks: &[usize], out: &Path, stem: &str) -> Result<()> {
    let report = top_k_accuracy(lists, pairs, store, ks)?;
    write_json(&out.join(format!("{stem}.json")), &report)?;
    let rows: Vec<EvalCsvRow> = report.accuracy.iter().map(|(&k, &accuracy)| EvalCsvRow { k, accuracy }).collect();
    write_csv(&out.join(format!("{stem}.csv")), &rows)?;
    for r in &rows {
        log::info!("{stem} top-{}: {:.4}", r.k, r.accuracy);
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(usage("--ks must list positive cutoffs"));
    }
    start(&a.common, &[&a.store, &a.qa, &a.retrieval], a, json!({ "ks": a.ks }))?;
    let store = PassageStore::load(&a.store)?;
    let pairs = read_qa_pairs(&a.qa)?;
    let lists = read_retrieval(&a.retrieval, &pairs)?;
    do_eval(&store, &pairs, &lists, &a.ks, &a.common.out, "eval")
}

fn bench(a: &BenchArgs) -> Result<()> {
    let config = BenchConfig {
        k: a.k,
        warmup_batches: 1,
        duration_s: a.duration,
        threads: a.common.threads,
        hnsw: hnsw_params(&a.hnsw, a.common.seed)?,
    };
    if a.k == 0 || a.queries == 0 || a.backends.is_empty() {
        return Err(usage("--k, --queries and --backends must be non-empty"));
    }
    let inputs: Vec<&Path> = a.vectors.iter().map(PathBuf::as_path).collect();
    start(&a.common, &inputs, a, json!({ "bench": config }))?;
    let vectors = match &a.vectors {
        Some(p) => VectorStore::load(p)?,
        None => gaussian_vectors(a.count, a.dim, a.common.seed)?,
    };
    let queries = gaussian_vectors(a.queries, vectors.dim(), a.common.seed.wrapping_add(1))?;
    let queries: Vec<Vec<f32>> = (0..queries.len()).map(|i| queries.vector(i).to_vec()).collect();
    let backends: Vec<DenseBackend> = a
        .backends
        .iter()
        .map(|b| match b {
            Backend::Exact => DenseBackend::Exact,
            Backend::Hnsw => DenseBackend::Hnsw,
        })
        .collect();
    let reports = throughput_bench(&vectors, &queries, &backends, &config, 0.0)?;
    let rows: Vec<BenchCsvRow> = reports.iter().map(BenchCsvRow::from).collect();
    write_csv(&a.common.out.join("bench.csv"), &rows)?;
    write_json(&a.common.out.join("bench.json"), &reports)?;
    for r in &reports {
        log::info!("{}: {:.1} q/s", r.backend, r.qps);
    }
    Ok(())
}

fn load_experiment(e: &ExperimentArgs) -> Result<Experiment> {
    let store = PassageStore::load(&e.store)?;
    let train = read_qa_pairs(&e.train_qa)?;
    let test = read_qa_pairs(&e.eval_qa)?;
    Ok(Experiment::new(store, bm25_params(&e.bm25)?, train, test)?)
}

fn experiment_inputs(e: &ExperimentArgs) -> [&Path; 3] {
    [&e.store, &e.train_qa, &e.eval_qa]
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let base = train_config(&a.train, a.common.seed)?;
    let cells: Vec<AblationCell> = match &a.grid {
        Some(p) => {
            require(&[p])?;
            read_json(p)?
        }
        None => default_ablation_grid(),
    };
    let mut inputs = experiment_inputs(&a.experiment).to_vec();
    inputs.extend(a.grid.as_deref());
    start(&a.common, &inputs, a, json!({ "train": base, "cells": cells }))?;
    let exp = load_experiment(&a.experiment)?;
    let widest = cells.iter().fold(NegativeSpec::default(), |acc, c| NegativeSpec {
        random: acc.random.max(c.negatives.random),
        bm25: acc.bm25.max(c.negatives.bm25),
        gold_other: acc.gold_other.max(c.negatives.gold_other),
    });
    let (pool, report) = exp.training_pool(PositiveMode::Gold, &widest, a.common.seed)?;
    log::info!("training pool: {report}");
    let bm25 = exp.evaluate_bm25()?;
    let rows = ablation_sweep(&exp, &pool, &base, &cells);
    write_csv(&a.common.out.join("ablation.csv"), &rows)?;
    write_json(&a.common.out.join("ablation.json"), &json!({ "bm25": bm25, "rows": rows }))?;
    Ok(())
}

fn curve(a: &CurveArgs) -> Result<()> {
    let base = train_config(&a.train, a.common.seed)?;
    start(&a.common, &experiment_inputs(&a.experiment), a, json!({ "train": base, "sizes": a.sizes }))?;
    let exp = load_experiment(&a.experiment)?;
    let (pool, report) = exp.training_pool(PositiveMode::Gold, &base.negatives, a.common.seed)?;
    log::info!("training pool: {report}");
    let rows = sample_efficiency_curve(&exp, &pool, &base, &a.sizes)?;
    write_csv(&a.common.out.join("curve.csv"), &rows)?;
    write_json(&a.common.out.join("curve.json"), &rows)?;
    Ok(())
}

fn reader_config(f: &ReaderFlags, seed: u64) -> Result<ReaderConfig> {
    let d = ReaderConfig::default();
    let c = ReaderConfig {
        epochs: f.reader_epochs.unwrap_or(d.epochs),
        batch_size: f.reader_batch_size.unwrap_or(d.batch_size),
        lr: f.reader_lr.unwrap_or(d.lr),
        passages: f.reader_passages.unwrap_or(d.passages),
        max_span_len: f.max_span_len.unwrap_or(d.max_span_len),
        hidden: f.hidden.unwrap_or(d.hidden),
        seed,
        ..d
    };
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn candidates(lists: &[RankedList], top: usize) -> Vec<Vec<PassageId>> {
    lists
        .iter()
        .map(|l| l.iter().take(top).map(|s| s.pid).collect())
        .collect()
}

fn do_train_reader(store: &PassageStore, pairs: &[QAPair], lists: &[RankedList], top: usize, config: &ReaderConfig, out: &Path) -> Result<()> {
    let qtok = question_tokens(store, pairs.iter().map(|p| p.question.as_str()));
    let vocab = Vocab::build(store.passages(), qtok.iter().map(|t| t.as_slice()));
    let (examples, dropped) = build_reader_examples(store, &vocab, pairs, &candidates(lists, top), config.max_span_len)?;
    log::info!("reader examples: {} kept, {dropped} without an answer-bearing passage", examples.len());
    let params = ReaderParams::<f32>::init(vocab.len(), config.hidden, config.seed);
    let outcome = train_reader(params, &examples, config)?;
    outcome.params.save(&out.join(READER_FILE))?;
    vocab.save(&out.join(VOCAB_FILE))?;
    write_json(
        &out.join(READER_SIDECAR),
        &json!({ "config": config, "examples": examples.len(), "dropped": dropped, "loss_trace": outcome.loss_trace }),
    )?;
    Ok(())
}

fn train_reader_cmd(a: &TrainReaderArgs) -> Result<()> {
    if a.top == 0 {
        return Err(usage("--top must be at least 1"));
    }
    let config = reader_config(&a.reader, a.common.seed)?;
    start(&a.common, &[&a.store, &a.qa, &a.retrieval], a, json!({ "reader": config, "top": a.top }))?;
    let store = PassageStore::load(&a.store)?;
    let pairs = read_qa_pairs(&a.qa)?;
    let lists = read_retrieval(&a.retrieval, &pairs)?;
    do_train_reader(&store, &pairs, &lists, a.top, &config, &a.common.out)
}

fn do_answer(store: &PassageStore, reader_dir: &Path, pairs: &[QAPair], lists: &[RankedList], top: usize, out: &Path) -> Result<()> {
    require(&[&reader_dir.join(READER_FILE), &reader_dir.join(VOCAB_FILE), &reader_dir.join(READER_SIDECAR)])?;
    let params = ReaderParams::<f32>::load(&reader_dir.join(READER_FILE))?;
    let vocab = Vocab::load(&reader_dir.join(VOCAB_FILE))?;
    let sidecar: serde_json::Value = read_json(&reader_dir.join(READER_SIDECAR))?;
    let config: ReaderConfig = serde_json::from_value(sidecar["config"].clone()).context("reader sidecar config")?;
    let cands = candidates(lists, top);
    let preds: Vec<PredictionRecord> = pairs
        .iter()
        .zip(&cands)
        .map(|(p, c)| answer_question(&params, store, &vocab, &p.question, c, config.max_span_len))
        .collect::<retrieval_core::Result<_>>()?;
    write_jsonl(&out.join(PREDICTIONS_FILE), &preds)?;
    let texts: Vec<&str> = preds.iter().map(|p| p.text.as_str()).collect();
    let em = exact_match(&texts, pairs)?;
    write_json(&out.join("answer_report.json"), &json!({ "questions": pairs.len(), "exact_match": em, "top": top }))?;
    log::info!("exact match {em:.4} over {} questions", pairs.len());
    Ok(())
}

fn answer(a: &AnswerArgs) -> Result<()> {
    if a.top == 0 {
        return Err(usage("--top must be at least 1"));
    }
    start(&a.common, &[&a.store, &a.qa, &a.retrieval, &a.reader], a, json!({ "top": a.top }))?;
    let store = PassageStore::load(&a.store)?;
    let pairs = read_qa_pairs(&a.qa)?;
    let lists = read_retrieval(&a.retrieval, &pairs)?;
    do_answer(&store, &a.reader, &pairs, &lists, a.top, &a.common.out)
}

fn stage(out: &Path, name: &str) -> Result<PathBuf> {
    let dir = out.join(name);
    prepare_out(&dir)?;
    Ok(dir)
}

/// Ingest, index, mine, train, embed, build the graph, retrieve with every
/// retriever, evaluate, then train and apply the reader on hybrid results.
fn pipeline(a: &PipelineArgs) -> Result<()> {
    let seed = a.common.seed;
    let spec = parse_negatives(&a.dataset_negatives)?;
    let bm25 = bm25_params(&a.bm25)?;
    let train_cfg = train_config(&a.train, seed)?;
    let hnsw = hnsw_params(&a.hnsw, seed)?;
    let hybrid = retriever_kind(Kind::Hybrid, Backend::Hnsw, a.lambda, retrieval_core::retrieval::DEFAULT_POOL)?;
    let reader_cfg = reader_config(&a.reader, seed)?;
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    start(
        &a.common,
        &[&a.corpus, &a.train_qa, &a.eval_qa],
        a,
        json!({
            "bm25": bm25,
            "negatives": spec,
            "train": train_cfg,
            "hnsw": hnsw,
            "hybrid": hybrid,
            "reader": reader_cfg,
        }),
    )?;
    let out = &a.common.out;
    let store_dir = stage(out, "store")?;
    let store = do_ingest(&a.corpus, &a.tokenizer, &store_dir)?;
    let train_pairs = read_qa_pairs(&a.train_qa)?;
    let eval_pairs = read_qa_pairs(&a.eval_qa)?;

    let index_dir = stage(out, "index")?;
    let index = InvertedIndex::build(&store, bm25)?;
    index.save(&index_dir.join(BM25_FILE))?;

    let data_dir = stage(out, "dataset")?;
    do_build_dataset(&store, &index, &train_pairs, &spec, PositiveMode::Gold, seed, &data_dir)?;

    let model_dir = stage(out, "model")?;
    do_train(&store, &data_dir.join(TRAIN_SET_FILE), &train_cfg, &model_dir)?;
    let model = load_model(&model_dir)?;
    do_embed(&store, &model, &index_dir)?;
    let vectors = VectorStore::load(&index_dir.join(VECTORS_FILE))?;
    do_build_dense(&vectors, hnsw, &index_dir)?;
    let ix = Indexes {
        sparse: Some(index),
        model: Some(model),
        vectors: Some(vectors),
        hnsw: Some(HnswIndex::load(&index_dir.join(HNSW_FILE))?),
    };

    let ks: Vec<usize> = retrieval_core::evalbench::DEFAULT_KS.to_vec();
    let mut hybrid_lists = Vec::new();
    for (name, kind) in [
        ("sparse", RetrieverKind::Sparse),
        ("dense", RetrieverKind::Dense { backend: DenseBackend::Hnsw }),
        ("hybrid", hybrid),
    ] {
        let dir = stage(out, &format!("retrieve-{name}"))?;
        let records = do_retrieve(&store, &ix, &eval_pairs, kind, a.k)?;
        write_retrieval(&dir.join(RETRIEVAL_FILE), &records)?;
        let lists: Vec<RankedList> = records.iter().map(RetrievalRecord::ranked_list).collect();
        do_eval(&store, &eval_pairs, &lists, &ks, &dir, "eval")?;
        if name == "hybrid" {
            hybrid_lists = lists;
        }
    }

    let train_lists: Vec<RankedList> = do_retrieve(&store, &ix, &train_pairs, hybrid, a.k)?
        .iter()
        .map(RetrievalRecord::ranked_list)
        .collect();
    let reader_dir = stage(out, "reader")?;
    do_train_reader(&store, &train_pairs, &train_lists, a.k, &reader_cfg, &reader_dir)?;
    let answers_dir = stage(out, "answers")?;
    do_answer(&store, &reader_dir, &eval_pairs, &hybrid_lists, reader_cfg.passages, &answers_dir)?;

    let manifest: Vec<String> = [
        index_dir.join(BM25_FILE),
        index_dir.join(VECTORS_FILE),
        index_dir.join(HNSW_FILE),
        model_dir.join(ENCODER_FILE),
        reader_dir.join(READER_FILE),
    ]
    .iter()
    .map(|p| -> Result<String> {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(format!("{}  {}", fingerprint(&[bytes]), p.strip_prefix(out).unwrap_or(p).display()))
    })
    .collect::<Result<_>>()?;
    fs::write(out.join("artifacts.sha256"), manifest.join("\n") + "\n").context("writing artifact manifest")?;
    Ok(())
}
