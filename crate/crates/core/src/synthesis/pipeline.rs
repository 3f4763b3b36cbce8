//! End-to-end synthesis over a corpus, resumable from `records.jsonl`.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use super::{export_sft_dataset, load_corpus, synthesize_one, DatasetSummary, SynthesisConfig, SynthesisRecord};
use crate::backend::ChatBackend;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub workers: usize,
    /// Process at most this many images, drawn with `seed`.
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { workers: 4, limit: None, seed: 0 }
    }
}

/// Reads finished records; a torn final line from an interrupted run is
/// ignored.
pub fn read_records(path: &Path) -> std::io::Result<Vec<SynthesisRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str::<SynthesisRecord>(line) {
            Ok(r) if r.filter_status.is_some() => out.push(r),
            Ok(_) => tracing::warn!(line = i + 1, "unfiltered record ignored"),
            Err(e) => tracing::warn!(line = i + 1, error = %e, "unreadable record ignored"),
        }
    }
    Ok(out)
}

/// Synthesizes a dataset from the images under `corpus_dir` into `out_dir`
/// (`records.jsonl`, `samples.jsonl`, `summary`). Keys already present in
/// `records.jsonl` are not regenerated.
pub fn run_synthesis(
    corpus_dir: &Path,
    teacher: &dyn ChatBackend,
    config: &SynthesisConfig,
    options: &PipelineOptions,
    out_dir: &Path,
) -> Result<DatasetSummary, String> {
    config.validate()?;
    let mut images = load_corpus(corpus_dir)?;
    if let Some(n) = options.limit.filter(|&n| n < images.len()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(options.seed);
        images.shuffle(&mut rng);
        images.truncate(n);
        images.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    }
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let records_path = out_dir.join("records.jsonl");
    let mut records = read_records(&records_path).map_err(|e| format!("{}: {e}", records_path.display()))?;
    let done: BTreeSet<String> = records.iter().map(|r| r.key.clone()).collect();

    let pending: Vec<_> = images
        .iter()
        .flat_map(|img| (0..config.questions_per_image).map(move |q| (img, q)))
        .filter(|(img, q)| !done.contains(&img.key(*q)))
        .collect();
    tracing::info!(images = images.len(), resumed = done.len(), pending = pending.len(), "synthesis");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let (tx, rx) = mpsc::channel::<SynthesisRecord>();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(|e| format!("{}: {e}", records_path.display()))?;

    let fresh = std::thread::scope(|s| {
        let writer = s.spawn(move || -> std::io::Result<Vec<SynthesisRecord>> {
            let mut file = file;
            let mut got = Vec::new();
            for r in rx {
                let mut line = serde_json::to_string(&r).expect("record serializes");
                line.push('\n');
                file.write_all(line.as_bytes())?;
                file.flush()?;
                got.push(r);
            }
            Ok(got)
        });
        pool.install(|| {
            pending.par_iter().for_each_with(tx, |tx, (img, q)| {
                let _ = tx.send(synthesize_one(img, *q, teacher, config));
            })
        });
        writer.join().expect("writer thread")
    })
    .map_err(|e| format!("{}: {e}", records_path.display()))?;

    records.extend(fresh);
    export_sft_dataset(&records, &config.dialogue, corpus_dir, out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))
}
