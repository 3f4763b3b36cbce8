//! Transcript files: `<root>/<run-id>/<task-id>.transcript`, one JSON record
//! per line. The first line is a header, then one line per message, then the
//! extraction exchange, the verdict and an optional abort marker.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ChatMessage, Mode, Transcript, Verdict};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header { task_id: String, mode: Mode, config_fingerprint: String },
    Message(ChatMessage),
    ExtractionRequest(ChatMessage),
    ExtractionReply(ChatMessage),
    Verdict(Verdict),
    Aborted { reason: String },
}

pub fn to_jsonl(t: &Transcript) -> String {
    let mut lines = vec![Line::Header {
        task_id: t.task_id.clone(),
        mode: t.mode,
        config_fingerprint: t.config_fingerprint.clone(),
    }];
    lines.extend(t.turns.iter().cloned().map(Line::Message));
    lines.extend(t.extraction_request.clone().map(Line::ExtractionRequest));
    lines.extend(t.extraction_reply.clone().map(Line::ExtractionReply));
    lines.extend(t.verdict.clone().map(Line::Verdict));
    lines.extend(t.aborted.clone().map(|reason| Line::Aborted { reason }));
    let mut out = String::new();
    for l in &lines {
        out.push_str(&serde_json::to_string(l).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str, path: &str) -> Result<Transcript, StoreError> {
    let err = |line: usize, message: String| StoreError::Format { path: path.to_string(), line, message };
    let mut transcript: Option<Transcript> = None;
    for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line: Line = serde_json::from_str(raw).map_err(|e| err(i + 1, e.to_string()))?;
        if let Line::Header { task_id, mode, config_fingerprint } = line {
            if transcript.is_some() {
                return Err(err(i + 1, "duplicate header".into()));
            }
            transcript = Some(Transcript::new(task_id, mode, config_fingerprint));
            continue;
        }
        let t = transcript.as_mut().ok_or_else(|| err(i + 1, "record before header".into()))?;
        match line {
            Line::Header { .. } => unreachable!(),
            Line::Message(m) => t.turns.push(m),
            Line::ExtractionRequest(m) => t.extraction_request = Some(m),
            Line::ExtractionReply(m) => t.extraction_reply = Some(m),
            Line::Verdict(v) => t.verdict = Some(v),
            Line::Aborted { reason } => t.aborted = Some(reason),
        }
    }
    transcript.ok_or_else(|| err(0, "empty transcript file".into()))
}

/// Keeps file names portable; anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TranscriptStore {
    root: PathBuf,
}

impl TranscriptStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        TranscriptStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, run_id: &str, task_id: &str) -> PathBuf {
        self.root.join(file_stem(run_id)).join(format!("{}.transcript", file_stem(task_id)))
    }

    pub fn write(&self, run_id: &str, transcript: &Transcript) -> Result<PathBuf, StoreError> {
        let path = self.path(run_id, &transcript.task_id);
        let io = |source| StoreError::Io { path: path.display().to_string(), source };
        fs::create_dir_all(path.parent().unwrap()).map_err(io)?;
        let tmp = path.with_extension("transcript.tmp");
        fs::write(&tmp, to_jsonl(transcript)).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(path)
    }

    /// `Ok(None)` when no transcript has been stored for the pair.
    pub fn read(&self, run_id: &str, task_id: &str) -> Result<Option<Transcript>, StoreError> {
        let path = self.path(run_id, task_id);
        match fs::read_to_string(&path) {
            Ok(text) => from_jsonl(&text, &path.display().to_string()).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StoreError::Io { path: path.display().to_string(), source }),
        }
    }
}

/// Human-readable rendering for inspection.
pub fn render_pretty(t: &Transcript) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "task {}  mode {:?}  config {}", t.task_id, t.mode, t.config_fingerprint);
    let mut block = |label: &str, m: &ChatMessage| {
        let _ = writeln!(out, "\n[{label}]");
        if !m.images.is_empty() {
            let refs: Vec<_> = m.images.iter().map(|i| i.as_str()).collect();
            let _ = writeln!(out, "(images: {})", refs.join(", "));
        }
        if let Some(th) = &m.thinking_text {
            let _ = writeln!(out, "(thinking, {} tokens)", crate::backend::count_tokens(th));
        }
        let _ = writeln!(out, "{}", m.text);
    };
    for m in &t.turns {
        block(&format!("{:?}", m.speaker).to_lowercase(), m);
    }
    if let Some(m) = &t.extraction_request {
        block("orchestrator / extraction", m);
    }
    if let Some(m) = &t.extraction_reply {
        block("perceiver / final", m);
    }
    if let Some(v) = &t.verdict {
        let letter = v.extracted.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        let correct = match v.correct {
            Some(true) => "correct",
            Some(false) => "incorrect",
            None => "unscored",
        };
        let _ = writeln!(out, "\nverdict: {letter} ({:?}, {correct})", v.method);
    }
    if let Some(reason) = &t.aborted {
        let _ = writeln!(out, "ABORTED: {reason}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ExtractionMethod, ImageRef, Letter, Speaker};
    use proptest::prelude::*;

    fn sample() -> Transcript {
        let mut t = Transcript::new("val/Art 1", Mode::Collaborative, "abcd");
        t.turns.push(ChatMessage::orchestrator("hi"));
        let mut p = ChatMessage::new(Speaker::Perceiver, "desc\nline two");
        p.token_count = Some(3);
        t.turns.push(p);
        let mut r = ChatMessage::new(Speaker::Reasoner, "ok");
        r.thinking_text = Some("hmm".into());
        t.turns.push(r);
        t.extraction_request = Some(ChatMessage::orchestrator("final"));
        t.extraction_reply = Some(ChatMessage::new(Speaker::Perceiver, "Answer: A"));
        t.verdict = Some(Verdict {
            extracted: Letter::new('A'),
            raw_final_text: "Answer: A".into(),
            method: ExtractionMethod::StrictPattern,
            correct: Some(true),
        });
        t
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(dir.path());
        let t = sample();
        let path = store.write("run-1", &t).unwrap();
        assert!(path.ends_with("run-1/val_Art_1.transcript"));
        assert_eq!(store.read("run-1", &t.task_id).unwrap(), Some(t));
        assert_eq!(store.read("run-1", "missing").unwrap(), None);
    }

    #[test]
    fn one_record_per_line() {
        let text = to_jsonl(&sample());
        assert_eq!(text.lines().count(), 1 + 3 + 1 + 1 + 1);
        assert!(text.lines().next().unwrap().starts_with(r#"{"record":"header""#));
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(from_jsonl("", "x").is_err());
        assert!(from_jsonl(r#"{"record":"verdict"}"#, "x").is_err());
        let msg = r#"{"record":"message","speaker":"perceiver","text":"x"}"#;
        assert!(matches!(from_jsonl(msg, "x"), Err(StoreError::Format { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(texts in proptest::collection::vec(".{0,30}", 0..6), aborted in any::<bool>()) {
            let mut t = Transcript::new("t", Mode::SingleMultimodal, "fp");
            for (i, s) in texts.iter().enumerate() {
                let mut m = ChatMessage::new(if i % 2 == 0 { Speaker::Perceiver } else { Speaker::Reasoner }, s.clone());
                m.images = vec![ImageRef::new(format!("{i}.png"))];
                t.turns.push(m);
            }
            if aborted {
                t.aborted = Some("boom".into());
            }
            prop_assert_eq!(from_jsonl(&to_jsonl(&t), "x").unwrap(), t);
        }
    }
}
