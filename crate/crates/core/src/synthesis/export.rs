//! Turns kept records into perceiver training samples.
//!
//! Each perceiver reply in the retained dialogue, including the reply to the
//! final-answer request, becomes one sample whose context is exactly the
//! perceiver view that produced it.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FilterStatus, SynthesisRecord};
use crate::backend::{make_perceiver_view, AgentView, EntryKind, ViewError};
use crate::types::{DialogueConfig, ImageRef, Speaker, TaskInstance, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftPosition {
    Initial,
    FollowUp,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    /// `system`, `user` or `assistant`, from the perceiver's side.
    pub role: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub record_key: String,
    /// Position of the target among the perceiver's replies, from 0.
    pub index: usize,
    pub position: SftPosition,
    pub context: Vec<SftMessage>,
    pub target: String,
}

impl SftSample {
    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.context.iter().flat_map(|m| m.images.iter())
    }
}

fn context(view: &AgentView) -> Vec<SftMessage> {
    let mut out = Vec::new();
    if let Some(s) = &view.system_prompt {
        out.push(SftMessage { role: "system".into(), text: s.clone(), images: vec![] });
    }
    for e in &view.history {
        let role = if e.kind == EntryKind::Own { "assistant" } else { "user" };
        out.push(SftMessage { role: role.into(), text: e.text.clone(), images: e.images.clone() });
    }
    out
}

/// One sample per perceiver reply of `transcript`, in dialogue order.
pub fn decompose(
    key: &str,
    task: &TaskInstance,
    transcript: &Transcript,
    config: &DialogueConfig,
) -> Result<Vec<SftSample>, ViewError> {
    let prompts = &config.prompt_set;
    let mut samples = Vec::new();
    let mut prefix = Transcript::new(&transcript.task_id, transcript.mode, &transcript.config_fingerprint);
    for m in &transcript.turns {
        if m.speaker == Speaker::Perceiver {
            let view = make_perceiver_view(task, &prefix, prompts, config)?;
            let position = if samples.is_empty() { SftPosition::Initial } else { SftPosition::FollowUp };
            samples.push(SftSample {
                record_key: key.to_string(),
                index: samples.len(),
                position,
                context: context(&view),
                target: m.text.clone(),
            });
        }
        prefix.turns.push(m.clone());
    }
    if let (Some(request), Some(reply)) = (&transcript.extraction_request, &transcript.extraction_reply) {
        let mut view = make_perceiver_view(task, &prefix, prompts, config)?;
        view.push(EntryKind::Injected, &request.text, &[]);
        samples.push(SftSample {
            record_key: key.to_string(),
            index: samples.len(),
            position: SftPosition::Final,
            context: context(&view),
            target: reply.text.clone(),
        });
    }
    samples.retain(|s| !s.target.trim().is_empty());
    Ok(samples)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub kept: usize,
    pub dropped_text_answerable: usize,
    pub dropped_no_correct_conversation: usize,
    pub dropped_generation_failed: usize,
    pub samples: usize,
    /// Samples skipped because an image could not be found.
    pub skipped_samples: usize,
}

impl DatasetSummary {
    pub fn count(&mut self, status: Option<FilterStatus>) {
        self.records += 1;
        match status {
            Some(FilterStatus::Kept) => self.kept += 1,
            Some(FilterStatus::DroppedTextAnswerable) => self.dropped_text_answerable += 1,
            Some(FilterStatus::DroppedNoCorrectConversation) => self.dropped_no_correct_conversation += 1,
            Some(FilterStatus::DroppedGenerationFailed) | None => self.dropped_generation_failed += 1,
        }
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("records", self.records),
            ("kept", self.kept),
            ("dropped_text_answerable", self.dropped_text_answerable),
            ("dropped_no_correct_conversation", self.dropped_no_correct_conversation),
            ("dropped_generation_failed", self.dropped_generation_failed),
            ("samples", self.samples),
            ("skipped_samples", self.skipped_samples),
        ];
        for (name, n) in rows {
            writeln!(f, "{name:<32} {n}")?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(data)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

/// Writes `samples.jsonl`, `records.jsonl` and `summary` under `out_dir`.
/// Records are sorted by key. Image refs stay relative; a sample whose image
/// is missing under `image_root` is skipped and counted.
pub fn export_sft_dataset(
    records: &[SynthesisRecord],
    config: &DialogueConfig,
    image_root: &Path,
    out_dir: &Path,
) -> std::io::Result<DatasetSummary> {
    fs::create_dir_all(out_dir)?;
    let mut sorted: Vec<&SynthesisRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));

    let mut summary = DatasetSummary::default();
    let mut samples_out = String::new();
    let mut records_out = String::new();
    for r in sorted {
        summary.count(r.filter_status);
        records_out.push_str(&serde_json::to_string(r).expect("record serializes"));
        records_out.push('\n');
        if r.filter_status != Some(FilterStatus::Kept) {
            continue;
        }
        let (Some(task), Some(conv)) = (&r.question, r.retained()) else {
            tracing::warn!(key = %r.key, "kept record without question or retained conversation");
            continue;
        };
        let samples = match decompose(&r.key, task, conv, config) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(key = %r.key, error = %e, "retained conversation does not decompose");
                continue;
            }
        };
        for s in samples {
            if let Some(missing) = s.images().find(|i| !image_root.join(i.as_str()).is_file()) {
                tracing::warn!(key = %r.key, image = missing.as_str(), "image not found; sample skipped");
                summary.skipped_samples += 1;
                continue;
            }
            samples_out.push_str(&serde_json::to_string(&s).expect("sample serializes"));
            samples_out.push('\n');
            summary.samples += 1;
        }
    }
    write_atomic(&out_dir.join("samples.jsonl"), samples_out.as_bytes())?;
    write_atomic(&out_dir.join("records.jsonl"), records_out.as_bytes())?;
    write_atomic(&out_dir.join("summary"), summary.to_string().as_bytes())?;
    Ok(summary)
}
