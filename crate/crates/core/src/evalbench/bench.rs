use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense_index::{HnswIndex, HnswParams, VectorStore};
use crate::error::{Error, Result};
use crate::retrieval::DenseBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: String,
    pub qps: f64,
    pub build_s: f64,
    pub embed_s: f64,
    pub hardware: String,
}

/// The CSV view: exactly `backend,qps,build_s,embed_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCsvRow {
    pub backend: String,
    pub qps: f64,
    pub build_s: f64,
    pub embed_s: f64,
}

impl From<&BenchReport> for BenchCsvRow {
    fn from(r: &BenchReport) -> Self {
        BenchCsvRow {
            backend: r.backend.clone(),
            qps: r.qps,
            build_s: r.build_s,
            embed_s: r.embed_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub k: usize,
    pub warmup_batches: usize,
    pub duration_s: f64,
    pub threads: usize,
    pub hnsw: HnswParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            k: 10,
            warmup_batches: 1,
            duration_s: 2.0,
            threads: 1,
            hnsw: HnswParams::default(),
        }
    }
}

fn hardware_note(threads: usize) -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{threads} worker threads; {cores} logical cores; {}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Wall-clock queries per second for each backend over the whole query set.
/// The query set is run as one batch at a time until `duration_s` has
/// elapsed, and always at least once after warmup.
pub fn throughput_bench(
    vectors: &VectorStore,
    queries: &[Vec<f32>],
    backends: &[DenseBackend],
    config: &BenchConfig,
    embed_s: f64,
) -> Result<Vec<BenchReport>> {
    if queries.is_empty() {
        return Err(Error::invalid("throughput bench needs at least one query"));
    }
    if config.threads == 0 || !(config.duration_s >= 0.0) {
        return Err(Error::invalid("bench threads must be ≥ 1 and duration ≥ 0"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut reports = Vec::new();
    for &backend in backends {
        let (hnsw, build_s) = match backend {
            DenseBackend::Exact => (None, 0.0),
            DenseBackend::Hnsw => {
                let t = Instant::now();
                let idx = HnswIndex::build(vectors, config.hnsw)?;
                (Some(idx), t.elapsed().as_secs_f64())
            }
        };
        let run_batch = || {
            pool.install(|| {
                queries.par_iter().for_each(|q| {
                    let r = match &hnsw {
                        Some(h) => h.search(vectors, q, config.k),
                        None => vectors.exact_search(q, config.k),
                    };
                    std::hint::black_box(r);
                })
            })
        };
        for _ in 0..config.warmup_batches {
            run_batch();
        }
        let start = Instant::now();
        let mut batches = 0usize;
        loop {
            run_batch();
            batches += 1;
            if start.elapsed().as_secs_f64() >= config.duration_s {
                break;
            }
        }
        let elapsed = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        let name = match backend {
            DenseBackend::Exact => "exact",
            DenseBackend::Hnsw => "hnsw",
        };
        let qps = (batches * queries.len()) as f64 / elapsed;
        log::info!("{name}: {qps:.1} q/s over {batches} batches");
        reports.push(BenchReport {
            backend: name.to_string(),
            qps,
            build_s,
            embed_s,
            hardware: hardware_note(config.threads),
        });
    }
    Ok(reports)
}
