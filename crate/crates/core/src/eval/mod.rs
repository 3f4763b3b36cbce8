//! Evaluation: benchmarks, run matrices, accuracy reports and the
//! three-setting error breakdown.
//!
//! Output layout under the matrix directory:
//!
//! ```text
//! <out>/<setting>/<task>.transcript
//! <out>/<setting>/verdicts.jsonl
//! <out>/report.txt  report.json  breakdown.csv
//! ```
//!
//! Completed transcripts with a matching config fingerprint are reused, so a
//! rerun only executes pairs that are missing or previously aborted.

pub mod benchmark;
pub mod breakdown;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatBackend;
use crate::orchestrator::{run_collaborative, run_single, RunError, StoreError, TranscriptStore};
use crate::types::{DialogueConfig, ExtractionMethod, Letter, Mode, TaskInstance, Transcript, Verdict};

pub use benchmark::{load_benchmark, Benchmark, BenchmarkError, TaskFilter};
pub use breakdown::{error_breakdown, Breakdown, BreakdownError, VerdictMap};

/// Footnote carried by every report.
pub const SCORING_NOTE: &str = "Answers that cannot be extracted, and runs that failed, are scored as incorrect.";

#[derive(Clone)]
pub enum Binding {
    Single(Arc<dyn ChatBackend>),
    Pair { perceiver: Arc<dyn ChatBackend>, reasoner: Arc<dyn ChatBackend> },
}

#[derive(Clone)]
pub struct Setting {
    pub name: String,
    pub mode: Mode,
    pub binding: Binding,
    pub config: DialogueConfig,
}

#[derive(Clone)]
pub struct RunMatrix {
    pub tasks: Vec<TaskInstance>,
    pub settings: Vec<Setting>,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Setting names whose joint correctness is broken down, in code order.
    pub breakdown: Option<[String; 3]>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid run matrix: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Breakdown(#[from] BreakdownError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

impl RunMatrix {
    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |m: String| Err(EvalError::Invalid(m));
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.settings {
            let name_ok = !s.name.is_empty() && s.name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
            if !name_ok {
                return invalid(format!("setting name {:?} must be nonempty [A-Za-z0-9._-]", s.name));
            }
            if !seen.insert(s.name.as_str()) {
                return invalid(format!("duplicate setting name {:?}", s.name));
            }
            match (&s.binding, s.mode) {
                (Binding::Pair { .. }, Mode::Collaborative) | (Binding::Single(_), Mode::SingleTextOnly | Mode::SingleMultimodal) => {}
                (Binding::Single(_), _) => return invalid(format!("setting {} is collaborative and needs a perceiver and a reasoner", s.name)),
                (Binding::Pair { .. }, _) => return invalid(format!("setting {} is single-model but binds two endpoints", s.name)),
            }
            s.config.validate().map_err(|e| EvalError::Invalid(format!("setting {}: {e}", s.name)))?;
        }
        if let Some(names) = &self.breakdown {
            for n in names {
                if !seen.contains(n.as_str()) {
                    return invalid(format!("breakdown refers to unknown setting {n:?}"));
                }
            }
        }
        let dups = crate::types::duplicate_ids(&self.tasks);
        if !dups.is_empty() {
            return invalid(format!("duplicate task ids {dups:?}"));
        }
        Ok(())
    }
}

fn failed(task: &TaskInstance, setting: &Setting, why: String) -> Transcript {
    let mut t = Transcript::new(&task.id, setting.mode, setting.config.fingerprint());
    t.aborted = Some(why);
    t.verdict = Some(Verdict::abstain("").scored(task.gold));
    t
}

/// Runs one (setting, task) pair, or restores it from the store.
fn run_pair(setting: &Setting, task: &TaskInstance, store: &TranscriptStore) -> Result<Transcript, StoreError> {
    let fingerprint = setting.config.fingerprint();
    match store.read(&setting.name, &task.id) {
        Ok(Some(t)) if t.is_complete() && t.config_fingerprint == fingerprint && t.mode == setting.mode => return Ok(t),
        Ok(_) => {}
        Err(e) => tracing::warn!(error = %e, "stored transcript unreadable; rerunning"),
    }
    let result = match &setting.binding {
        Binding::Single(b) => run_single(task, b.as_ref(), setting.mode, &setting.config),
        Binding::Pair { perceiver, reasoner } => run_collaborative(task, perceiver.as_ref(), reasoner.as_ref(), &setting.config),
    };
    let transcript = match result {
        Ok(t) => t,
        Err(RunError::Backend { source, partial }) => {
            tracing::warn!(setting = %setting.name, task = %task.id, error = %source, "run aborted");
            *partial
        }
        Err(e) => failed(task, setting, e.to_string()),
    };
    store.write(&setting.name, &transcript)?;
    Ok(transcript)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub name: String,
    pub mode: Mode,
    pub total: usize,
    pub answered: usize,
    pub correct: usize,
    pub aborted: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub extracted: Option<Letter>,
    pub method: ExtractionMethod,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub gold: Option<Letter>,
    pub results: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub settings: Vec<SettingSummary>,
    pub tasks: Vec<TaskRow>,
    pub breakdown: Option<Breakdown>,
    pub notes: Vec<String>,
}

/// One line of `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub task_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

pub fn load_verdicts(path: &Path) -> Result<VerdictMap, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = VerdictMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: VerdictLine = serde_json::from_str(line).map_err(|e| EvalError::Store(StoreError::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        }))?;
        out.insert(v.task_id, v.verdict);
    }
    Ok(out)
}

/// Executes every (task, setting) pair and writes transcripts, per-setting
/// verdicts and the report files. Individual failures are scored as
/// abstentions; only storage errors abort the matrix.
pub fn run_matrix(matrix: &RunMatrix) -> Result<EvalReport, EvalError> {
    matrix.validate()?;
    let store = TranscriptStore::new(&matrix.out_dir);
    let pairs: Vec<(&Setting, &TaskInstance)> =
        matrix.settings.iter().flat_map(|s| matrix.tasks.iter().map(move |t| (s, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(matrix.workers.max(1))
        .build()
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let transcripts: Vec<Transcript> =
        pool.install(|| pairs.par_iter().map(|(s, t)| run_pair(s, t, &store)).collect::<Result<_, _>>())?;

    let mut by_setting: BTreeMap<&str, BTreeMap<String, &Transcript>> = BTreeMap::new();
    for ((s, _), t) in pairs.iter().zip(&transcripts) {
        by_setting.entry(s.name.as_str()).or_default().insert(t.task_id.clone(), t);
    }
    for s in &matrix.settings {
        let mut out = String::new();
        for (id, t) in by_setting.get(s.name.as_str()).into_iter().flatten() {
            let line = VerdictLine { task_id: id.clone(), verdict: t.verdict.clone().expect("scored"), aborted: t.aborted.clone() };
            out.push_str(&serde_json::to_string(&line).expect("verdict serializes"));
            out.push('\n');
        }
        let dir = matrix.out_dir.join(crate::orchestrator::store::file_stem(&s.name));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("verdicts.jsonl");
        fs::write(&path, out).map_err(io_err(&path))?;
    }

    let report = build_report(matrix, &by_setting)?;
    write_report(&report, &matrix.out_dir)?;
    Ok(report)
}

fn build_report(matrix: &RunMatrix, by_setting: &BTreeMap<&str, BTreeMap<String, &Transcript>>) -> Result<EvalReport, EvalError> {
    let mut settings = Vec::new();
    let mut rows: BTreeMap<String, TaskRow> = matrix
        .tasks
        .iter()
        .map(|t| (t.id.clone(), TaskRow { task_id: t.id.clone(), gold: t.gold, results: BTreeMap::new() }))
        .collect();
    let mut maps: BTreeMap<&str, VerdictMap> = BTreeMap::new();
    for s in &matrix.settings {
        let runs = by_setting.get(s.name.as_str()).cloned().unwrap_or_default();
        let mut sum = SettingSummary { name: s.name.clone(), mode: s.mode, total: runs.len(), answered: 0, correct: 0, aborted: 0, accuracy: 0.0 };
        for (id, t) in &runs {
            let v = t.verdict.as_ref().expect("scored");
            sum.answered += v.extracted.is_some() as usize;
            sum.correct += v.is_correct() as usize;
            sum.aborted += t.aborted.is_some() as usize;
            rows.get_mut(id).expect("known task").results.insert(
                s.name.clone(),
                Cell { extracted: v.extracted, method: v.method, correct: v.is_correct(), aborted: t.aborted.is_some() },
            );
            maps.entry(s.name.as_str()).or_default().insert(id.clone(), v.clone());
        }
        if sum.total > 0 {
            sum.accuracy = sum.correct as f64 / sum.total as f64;
        }
        settings.push(sum);
    }
    let breakdown = match &matrix.breakdown {
        Some([a, b, c]) => {
            let get = |n: &String| maps.get(n.as_str()).cloned().unwrap_or_default();
            let (ma, mb, mc) = (get(a), get(b), get(c));
            Some(error_breakdown([a, b, c], [&ma, &mb, &mc])?)
        }
        None => None,
    };
    Ok(EvalReport { settings, tasks: rows.into_values().collect(), breakdown, notes: vec![SCORING_NOTE.into()] })
}

impl EvalReport {
    /// True when pairs were run and every one of them failed.
    pub fn all_aborted(&self) -> bool {
        let total: usize = self.settings.iter().map(|s| s.total).sum();
        total > 0 && self.settings.iter().all(|s| s.aborted == s.total)
    }

    pub fn accuracy_table(&self) -> String {
        let mut out = String::new();
        let width = self.settings.iter().map(|s| s.name.len()).max().unwrap_or(0).max(7);
        let _ = writeln!(
            out,
            "{:<width$}  {:<17}  {:>5}  {:>8}  {:>7}  {:>7}  {:>8}",
            "setting", "mode", "total", "answered", "correct", "aborted", "accuracy"
        );
        for s in &self.settings {
            let _ = writeln!(
                out,
                "{:<width$}  {:<17}  {:>5}  {:>8}  {:>7}  {:>7}  {:>8.4}",
                s.name,
                s.mode.as_str(),
                s.total,
                s.answered,
                s.correct,
                s.aborted,
                s.accuracy
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = self.accuracy_table();
        if let Some(b) = &self.breakdown {
            out.push('\n');
            out.push_str(&b.to_string());
        }
        for n in &self.notes {
            let _ = write!(out, "\n* {n}\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let write = |name: &str, data: String| {
        let p = out_dir.join(name);
        fs::write(&p, data).map_err(io_err(&p))
    };
    write("report.txt", report.to_text())?;
    write("report.json", report.to_json())?;
    if let Some(b) = &report.breakdown {
        write("breakdown.csv", b.to_csv())?;
    }
    Ok(())
}
