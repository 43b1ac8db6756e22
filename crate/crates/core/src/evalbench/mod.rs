//! Metrics, experiment sweeps and throughput measurement.

mod bench;
mod experiment;
mod metrics;

use sha2::{Digest, Sha256};

pub use bench::{throughput_bench, BenchConfig, BenchCsvRow, BenchReport};
pub use experiment::{
    ablation_sweep, default_ablation_grid, sample_efficiency_curve, write_csv, AblationCell, AblationRow, CurveRow,
    Experiment,
};
pub use metrics::{contains_answer, exact_match, normalize_answer, top_k_accuracy, EvalReport, DEFAULT_KS};

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn fingerprint<P: AsRef<[u8]>>(parts: &[P]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}
