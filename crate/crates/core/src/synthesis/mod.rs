//! Training-data synthesis for the perceiver.
//!
//! For each corpus image a teacher model writes a multiple-choice question,
//! answers it without and with the image (the latter becomes the label), and
//! role-plays both sides of the dialogue up to a sampling budget. Questions
//! the teacher can answer from text alone, or for which no sampled dialogue
//! reaches the label, are dropped. Retained dialogues are exported as
//! perceiver training samples.

pub mod corpus;
pub mod export;
pub mod parse;
pub mod pipeline;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentView, BackendError, ChatBackend, EntryKind, GenerationParams, ViewEntry, ViewRole};
use crate::orchestrator::{run_collaborative, run_single, RunError};
use crate::types::{DialogueConfig, ImageRef, Letter, Mode, TaskInstance, Transcript, Verdict};

pub use corpus::{load_corpus, CorpusImage};
pub use export::{decompose, export_sft_dataset, DatasetSummary, SftMessage, SftPosition, SftSample};
pub use parse::parse_question_block;
pub use pipeline::{run_synthesis, PipelineOptions};

/// Reconstructed question-generation instruction; editable through config.
pub const QUESTION_PROMPT: &str = "Look at the image and write one challenging multiple-choice question that requires reasoning about the image and cannot be answered without seeing it. Give between 4 and 10 answer options with exactly one correct option. Reply in exactly this format:\n\n### QUESTION\n<question text>\n### OPTIONS\nA. <option>\nB. <option>\nC. <option>\nD. <option>\n### END";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Maximum role-played conversations per question.
    pub budget: u32,
    pub sampling_temperature: f64,
    /// Extra attempts after an unparseable question reply.
    pub question_retries: u32,
    pub questions_per_image: u32,
    pub question_prompt: String,
    /// Used for the two single-model answers; conversations use the same
    /// settings at `sampling_temperature`.
    pub dialogue: DialogueConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            budget: 8,
            sampling_temperature: 0.7,
            question_retries: 2,
            questions_per_image: 1,
            question_prompt: QUESTION_PROMPT.into(),
            dialogue: DialogueConfig::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.budget == 0 {
            return Err("synthesis budget must be at least 1".into());
        }
        if self.questions_per_image == 0 {
            return Err("questions_per_image must be at least 1".into());
        }
        if self.question_prompt.trim().is_empty() {
            return Err("question prompt is empty".into());
        }
        self.dialogue.validate()
    }

    /// Config for the `index`-th sampled conversation.
    pub fn conversation_config(&self, index: u32) -> DialogueConfig {
        DialogueConfig {
            temperature: self.sampling_temperature,
            sample_index: index,
            ..self.dialogue.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterStatus {
    Kept,
    DroppedTextAnswerable,
    DroppedNoCorrectConversation,
    DroppedGenerationFailed,
}

impl fmt::Display for FilterStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterStatus::Kept => "kept",
            FilterStatus::DroppedTextAnswerable => "dropped_text_answerable",
            FilterStatus::DroppedNoCorrectConversation => "dropped_no_correct_conversation",
            FilterStatus::DroppedGenerationFailed => "dropped_generation_failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    /// Image hash prefix plus question index; the resume key.
    pub key: String,
    pub image_refs: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Absent when question generation failed. Its gold is the multimodal
    /// answer once that is known.
    pub question: Option<TaskInstance>,
    pub answer_text_only: Option<Verdict>,
    pub answer_multimodal: Option<Verdict>,
    pub conversations: Vec<Transcript>,
    pub retained_conversation_index: Option<usize>,
    /// Unset until [`filter_record`] runs.
    pub filter_status: Option<FilterStatus>,
    pub reason: String,
}

impl SynthesisRecord {
    pub fn new(key: impl Into<String>, image_refs: Vec<ImageRef>) -> Self {
        SynthesisRecord {
            key: key.into(),
            image_refs,
            category: None,
            question: None,
            answer_text_only: None,
            answer_multimodal: None,
            conversations: Vec::new(),
            retained_conversation_index: None,
            filter_status: None,
            reason: String::new(),
        }
    }

    /// The label: the teacher's answer with the image in view.
    pub fn gold(&self) -> Option<Letter> {
        self.answer_multimodal.as_ref().and_then(|v| v.extracted)
    }

    pub fn retained(&self) -> Option<&Transcript> {
        self.conversations.get(self.retained_conversation_index?)
    }

    fn note(&mut self, msg: impl AsRef<str>) {
        if !self.reason.is_empty() {
            self.reason.push_str("; ");
        }
        self.reason.push_str(msg.as_ref());
    }

    fn fail(mut self, msg: impl AsRef<str>) -> Self {
        self.note(msg);
        self.filter_status = Some(FilterStatus::DroppedGenerationFailed);
        self
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("teacher endpoint {0} does not support vision")]
    NoVision(String),
    #[error("no parseable question after {attempts} attempt(s): {last}")]
    Parse { attempts: u32, last: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Asks the teacher for a question about `image_refs`. `question_index`
/// separates several questions over the same images; each attempt uses its
/// own sample index so retries are not served the same reply.
pub fn generate_question(
    key: &str,
    image_refs: &[ImageRef],
    question_index: u32,
    teacher: &dyn ChatBackend,
    config: &SynthesisConfig,
) -> Result<TaskInstance, GenerationError> {
    if !teacher.endpoint().supports_vision {
        return Err(GenerationError::NoVision(teacher.endpoint().name.clone()));
    }
    let attempts = config.question_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        let view = AgentView {
            role: ViewRole::Single,
            system_prompt: None,
            history: vec![ViewEntry {
                kind: EntryKind::Injected,
                text: config.question_prompt.clone(),
                images: image_refs.to_vec(),
            }],
            params: GenerationParams {
                max_tokens: config.dialogue.max_tokens_per_turn,
                temperature: config.sampling_temperature,
                thinking_token_cap: config.dialogue.thinking_token_cap,
                sample_index: question_index * attempts + attempt,
                seed: config.dialogue.seed,
            },
        };
        let reply = teacher.complete(&view)?;
        match parse_question_block(&reply.text, key) {
            Ok(mut task) => {
                task.images = image_refs.to_vec();
                return Ok(task);
            }
            Err(e) => {
                tracing::debug!(key, attempt, error = %e, "unparseable question reply");
                last = e;
            }
        }
    }
    Err(GenerationError::Parse { attempts, last })
}

/// Collects the three settings for a generated question: text-only answer,
/// multimodal answer (the label), then up to `budget` sampled dialogues with
/// the teacher in both roles, stopping at the first that reaches the label.
///
/// Failures are written to `reason`; the record is returned either way.
pub fn generate_settings(mut record: SynthesisRecord, question: TaskInstance, teacher: &dyn ChatBackend, config: &SynthesisConfig) -> SynthesisRecord {
    let text_only = run_single(&question, teacher, Mode::SingleTextOnly, &config.dialogue);
    let multimodal = run_single(&question, teacher, Mode::SingleMultimodal, &config.dialogue);
    record.question = Some(question);
    let (text_only, multimodal) = match (text_only, multimodal) {
        (Ok(t), Ok(m)) => (t, m),
        (Err(e), _) => return record.fail(format!("text-only answer failed: {e}")),
        (_, Err(e)) => return record.fail(format!("multimodal answer failed: {e}")),
    };
    let mm = multimodal.verdict.expect("complete run has a verdict");
    let Some(gold) = mm.extracted else {
        record.answer_multimodal = Some(mm);
        return record.fail("multimodal answer could not be extracted");
    };
    let question = record.question.as_mut().unwrap();
    question.gold = Some(gold);
    let question = question.clone();
    record.answer_multimodal = Some(mm.scored(Some(gold)));
    record.answer_text_only = text_only.verdict.map(|v| v.scored(Some(gold)));

    for i in 0..config.budget {
        match run_collaborative(&question, teacher, teacher, &config.conversation_config(i)) {
            Ok(t) => {
                let correct = t.verdict.as_ref().is_some_and(Verdict::is_correct);
                record.conversations.push(t);
                if correct {
                    record.retained_conversation_index = Some(record.conversations.len() - 1);
                    break;
                }
            }
            Err(RunError::Backend { source, partial }) => {
                record.note(format!("conversation {i} aborted: {source}"));
                record.conversations.push(*partial);
            }
            Err(e) => {
                record.note(format!("conversation {i} could not run: {e}"));
                break;
            }
        }
    }
    record
}

/// Assigns the filter status. Text-answerable questions are dropped first,
/// then questions without a dialogue reaching the label. The retained index
/// is recomputed from the conversation verdicts.
pub fn filter_record(mut record: SynthesisRecord) -> SynthesisRecord {
    if record.filter_status == Some(FilterStatus::DroppedGenerationFailed) {
        record.retained_conversation_index = None;
        return record;
    }
    let (Some(text_only), Some(gold)) = (record.answer_text_only.as_ref(), record.gold()) else {
        record.retained_conversation_index = None;
        return record.fail("single-setting answers missing");
    };
    record.retained_conversation_index = record
        .conversations
        .iter()
        .position(|t| t.aborted.is_none() && t.verdict.as_ref().is_some_and(|v| v.extracted == Some(gold)));
    let status = if text_only.extracted == Some(gold) {
        record.note(format!("answered {gold} without the image"));
        FilterStatus::DroppedTextAnswerable
    } else if record.retained_conversation_index.is_none() {
        record.note(format!("none of {} conversation(s) reached {gold}", record.conversations.len()));
        FilterStatus::DroppedNoCorrectConversation
    } else {
        FilterStatus::Kept
    };
    record.filter_status = Some(status);
    record
}

/// Runs all three stages for one question over one image.
pub fn synthesize_one(
    image: &CorpusImage,
    question_index: u32,
    teacher: &dyn ChatBackend,
    config: &SynthesisConfig,
) -> SynthesisRecord {
    let key = image.key(question_index);
    let refs = vec![ImageRef::new(&image.rel_path)];
    let mut record = SynthesisRecord::new(&key, refs.clone());
    record.category = image.category.clone();
    let question = match generate_question(&key, &refs, question_index, teacher, config) {
        Ok(mut q) => {
            if let Some(c) = &image.category {
                q.meta.insert("category".into(), c.clone());
            }
            q
        }
        Err(e) => return record.fail(e.to_string()),
    };
    filter_record(generate_settings(record, question, teacher, config))
}
