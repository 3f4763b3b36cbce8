//! Benchmark loading.
//!
//! Adapters map a line-delimited JSON file onto [`TaskInstance`]s. Image
//! paths are resolved against the file's directory and stored relative to it.
//!
//! * `jsonl`: `{"id", "question", "options": [..], "images": [..], "answer": "B", "meta": {..}}`
//! * `mmmu`: `id`, `question`, `options` (a JSON array or a Python list
//!   literal), `answer` (letter), `image_1`..`image_7`, `question_type`,
//!   `subfield`, `topic_difficulty`, `img_type`. The subject is taken from
//!   the id (`validation_Art_1` gives `Art`). Open questions are skipped.
//! * `mathvista`: `pid`, `question`, `image`, `choices`, `answer` (option
//!   text), `question_type`, `metadata`. Free-form questions are skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::types::{duplicate_ids, validate_task, AnswerOption, ImageRef, Letter, TaskInstance, MAX_OPTIONS};

pub const FORMATS: [&str; 3] = ["jsonl", "mmmu", "mathvista"];

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Format { row: usize, message: String },
    #[error("unknown benchmark format {0:?} (known: jsonl, mmmu, mathvista)")]
    UnknownFormat(String),
    #[error("duplicate task ids: {0:?}")]
    DuplicateIds(Vec<String>),
    #[error("bad filter expression {0:?}; expected key=value|value,key=value")]
    Filter(String),
}

#[derive(Debug, Clone, Default)]
pub struct Benchmark {
    pub tasks: Vec<TaskInstance>,
    /// Directory that task image refs are relative to.
    pub image_root: PathBuf,
    /// Rows dropped because an image file was missing.
    pub missing_images: usize,
    /// Rows the adapter does not cover, such as open-ended questions.
    pub skipped_rows: usize,
}

/// Selects tasks by metadata, e.g. `subject=Clinical_Medicine|Basic_Medical_Science`.
/// Clauses separated by `,` must all hold.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskFilter {
    clauses: Vec<(String, Vec<String>)>,
}

impl TaskFilter {
    pub fn parse(expr: &str) -> Result<Self, BenchmarkError> {
        let mut clauses = Vec::new();
        for clause in expr.split(',').map(str::trim).filter(|c| !c.is_empty()) {
            let (key, values) = clause.split_once('=').ok_or_else(|| BenchmarkError::Filter(expr.into()))?;
            let values: Vec<String> = values.split('|').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if key.trim().is_empty() || values.is_empty() {
                return Err(BenchmarkError::Filter(expr.into()));
            }
            clauses.push((key.trim().to_string(), values));
        }
        Ok(TaskFilter { clauses })
    }

    pub fn matches(&self, task: &TaskInstance) -> bool {
        self.clauses
            .iter()
            .all(|(k, vs)| task.meta.get(k).is_some_and(|v| vs.iter().any(|x| x == v)))
    }
}

/// Loads `path` (a file, or a directory holding `tasks.jsonl`) with the
/// named adapter.
pub fn load_benchmark(path: &Path, format: &str, filter: Option<&TaskFilter>) -> Result<Benchmark, BenchmarkError> {
    let adapter: fn(usize, &Value) -> Result<Option<Row>, String> = match format {
        "jsonl" => native_row,
        "mmmu" => mmmu_row,
        "mathvista" => mathvista_row,
        other => return Err(BenchmarkError::UnknownFormat(other.into())),
    };
    let file = if path.is_dir() { path.join("tasks.jsonl") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|source| BenchmarkError::Io { path: file.display().to_string(), source })?;
    let image_root = file.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut bench = Benchmark { image_root, ..Benchmark::default() };
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fmt_err = |message: String| BenchmarkError::Format { row, message };
        let value: Value = serde_json::from_str(line).map_err(|e| fmt_err(e.to_string()))?;
        let Some(r) = adapter(row, &value).map_err(fmt_err)? else {
            bench.skipped_rows += 1;
            continue;
        };
        let task = r.into_task().map_err(fmt_err)?;
        if let Some(v) = validate_task(&task).first() {
            return Err(fmt_err(v.to_string()));
        }
        if let Some(missing) = task.images.iter().find(|img| !bench.image_root.join(img.as_str()).is_file()) {
            tracing::warn!(row, image = missing.as_str(), "image not found; row skipped");
            bench.missing_images += 1;
            continue;
        }
        if filter.is_none_or(|f| f.matches(&task)) {
            bench.tasks.push(task);
        }
    }
    let dups = duplicate_ids(&bench.tasks);
    if !dups.is_empty() {
        return Err(BenchmarkError::DuplicateIds(dups));
    }
    Ok(bench)
}

/// Adapter output before validation.
struct Row {
    id: String,
    question: String,
    options: Vec<String>,
    images: Vec<String>,
    answer: Option<String>,
    meta: BTreeMap<String, String>,
}

impl Row {
    fn into_task(self) -> Result<TaskInstance, String> {
        if self.options.len() > MAX_OPTIONS {
            return Err(format!("{} options; at most {MAX_OPTIONS} supported", self.options.len()));
        }
        let gold = match self.answer.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(a) => {
                let mut chars = a.chars();
                match (chars.next().and_then(Letter::new), chars.next()) {
                    (Some(l), None) => Some(l),
                    _ => return Err(format!("answer {a:?} is not an option letter")),
                }
            }
        };
        Ok(TaskInstance {
            id: self.id,
            question: self.question,
            options: self
                .options
                .into_iter()
                .enumerate()
                .map(|(i, text)| AnswerOption { letter: Letter::from_index(i).unwrap(), text })
                .collect(),
            images: self.images.into_iter().map(ImageRef).collect(),
            gold,
            meta: self.meta,
        })
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a str, String> {
    v.get(name).and_then(Value::as_str).ok_or_else(|| format!("missing string field {name:?}"))
}

fn id_field(v: &Value, name: &str) -> Result<String, String> {
    match v.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(format!("missing field {name:?}")),
    }
}

fn string_meta(v: Option<&Value>) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    if let Some(Value::Object(map)) = v {
        for (k, v) in map {
            match v {
                Value::String(s) => meta.insert(k.clone(), s.clone()),
                Value::Number(_) | Value::Bool(_) => meta.insert(k.clone(), v.to_string()),
                _ => None,
            };
        }
    }
    meta
}

#[derive(Deserialize)]
struct NativeRow {
    id: String,
    question: String,
    options: Vec<String>,
    #[serde(default)]
    images: Vec<String>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

fn native_row(_: usize, v: &Value) -> Result<Option<Row>, String> {
    let r: NativeRow = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    Ok(Some(Row { id: r.id, question: r.question, options: r.options, images: r.images, answer: r.answer, meta: r.meta }))
}

fn mmmu_row(_: usize, v: &Value) -> Result<Option<Row>, String> {
    if v.get("question_type").and_then(Value::as_str) == Some("open") {
        return Ok(None);
    }
    let id = id_field(v, "id")?;
    let options = match v.get("options") {
        Some(Value::Array(items)) => items.iter().map(|x| x.as_str().map(String::from).ok_or("non-string option")).collect::<Result<_, _>>()?,
        Some(Value::String(s)) => parse_py_list(s)?,
        _ => return Err("missing field \"options\"".into()),
    };
    let mut images = Vec::new();
    for n in 1..=7 {
        match v.get(format!("image_{n}")) {
            Some(Value::String(p)) => images.push(p.clone()),
            Some(Value::Object(o)) => {
                if let Some(p) = o.get("path").and_then(Value::as_str) {
                    images.push(p.to_string());
                }
            }
            _ => {}
        }
    }
    let mut meta = BTreeMap::new();
    let parts: Vec<&str> = id.split('_').collect();
    if parts.len() >= 3 {
        meta.insert("split".into(), parts[0].to_string());
        meta.insert("subject".into(), parts[1..parts.len() - 1].join("_"));
    }
    for key in ["subfield", "topic_difficulty", "img_type", "question_type"] {
        if let Some(s) = v.get(key).and_then(Value::as_str) {
            meta.insert(key.into(), s.to_string());
        }
    }
    Ok(Some(Row {
        id,
        question: field(v, "question")?.to_string(),
        options,
        images,
        answer: Some(field(v, "answer")?.to_string()),
        meta,
    }))
}

fn mathvista_row(_: usize, v: &Value) -> Result<Option<Row>, String> {
    let choices = match v.get("choices") {
        Some(Value::Array(c)) if !c.is_empty() => c,
        _ => return Ok(None),
    };
    if v.get("question_type").and_then(Value::as_str).is_some_and(|t| t != "multi_choice") {
        return Ok(None);
    }
    let options: Vec<String> = choices
        .iter()
        .map(|c| match c {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .collect();
    let answer = match v.get("answer") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing field \"answer\"".into()),
    };
    let index = options
        .iter()
        .position(|o| o.trim() == answer.trim())
        .ok_or_else(|| format!("answer {answer:?} is not among the choices"))?;
    let mut meta = string_meta(v.get("metadata"));
    if let Some(t) = v.get("question_type").and_then(Value::as_str) {
        meta.insert("question_type".into(), t.into());
    }
    Ok(Some(Row {
        id: id_field(v, "pid")?,
        question: field(v, "question")?.to_string(),
        options,
        images: vec![field(v, "image")?.to_string()],
        answer: Some(Letter::from_index(index).ok_or("too many choices")?.to_string()),
        meta,
    }))
}

/// Parses a Python list-of-strings literal such as `['a', "b's"]`.
fn parse_py_list(s: &str) -> Result<Vec<String>, String> {
    if let Ok(v) = serde_json::from_str::<Vec<String>>(s) {
        return Ok(v);
    }
    let bad = || format!("cannot parse options list {s:?}");
    let mut chars = s.trim().chars().peekable();
    if chars.next() != Some('[') {
        return Err(bad());
    }
    let mut out = Vec::new();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let quote = match chars.next() {
            Some(']') if out.is_empty() => break,
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(bad()),
        };
        let mut item = String::new();
        loop {
            match chars.next().ok_or_else(bad)? {
                '\\' => match chars.next().ok_or_else(bad)? {
                    'n' => item.push('\n'),
                    't' => item.push('\t'),
                    c => item.push(c),
                },
                c if c == quote => break,
                c => item.push(c),
            }
        }
        out.push(item);
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.next() {
            Some(',') => continue,
            Some(']') => break,
            _ => return Err(bad()),
        }
    }
    Ok(out)
}
