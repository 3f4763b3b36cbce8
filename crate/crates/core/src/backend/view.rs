//! Per-agent projections of a transcript.
//!
//! The perceiver sees the task (question, options, images) plus the whole
//! dialogue. The reasoner sees only text: its view is built without ever
//! copying an image reference, so no reasoner request can carry one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::PromptSet;
use crate::types::{DialogueConfig, ImageRef, Mode, Speaker, TaskInstance, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Perceiver,
    Reasoner,
    /// A single model answering a task on its own.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    /// Written by the agent this view belongs to.
    Own,
    Counterpart,
    /// Scripted text from the orchestrator, on the counterpart side.
    Injected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub kind: EntryKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub thinking_token_cap: u32,
    pub sample_index: u32,
    pub seed: Option<u64>,
}

impl GenerationParams {
    pub fn for_role(config: &DialogueConfig, role: ViewRole) -> Self {
        let max_tokens = match role {
            ViewRole::Perceiver => config.perceiver_tokens(),
            ViewRole::Reasoner => config.reasoner_tokens(),
            ViewRole::Single => config.max_tokens_per_turn,
        };
        GenerationParams {
            max_tokens,
            temperature: config.temperature,
            thinking_token_cap: config.thinking_token_cap,
            sample_index: config.sample_index,
            seed: config.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub role: ViewRole,
    pub system_prompt: Option<String>,
    pub history: Vec<ViewEntry>,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ViewError {
    #[error("transcript {task_id}: consecutive messages from {speaker:?} at turn {index}")]
    Alternation { task_id: String, speaker: Speaker, index: usize },
    #[error("transcript {transcript} does not belong to task {task}")]
    WrongTask { transcript: String, task: String },
    #[error("reasoner view carries {0} image reference(s)")]
    ImagesInReasonerView(usize),
    #[error("view entries do not alternate at position {0}")]
    EntryOrder(usize),
}

impl AgentView {
    fn new(role: ViewRole, system_prompt: Option<String>, params: GenerationParams) -> Self {
        AgentView { role, system_prompt, history: Vec::new(), params }
    }

    pub fn image_count(&self) -> usize {
        self.history.iter().map(|e| e.images.len()).sum()
    }

    /// Appends an entry; consecutive counterpart-side entries are merged so
    /// the history keeps alternating.
    pub fn push(&mut self, kind: EntryKind, text: &str, images: &[ImageRef]) {
        if kind != EntryKind::Own {
            if let Some(last) = self.history.last_mut().filter(|e| e.kind != EntryKind::Own) {
                last.text.push_str("\n\n");
                last.text.push_str(text);
                last.images.extend_from_slice(images);
                return;
            }
        }
        self.history.push(ViewEntry { kind, text: text.to_string(), images: images.to_vec() });
    }

    /// Checks the view invariants.
    pub fn validate(&self) -> Result<(), ViewError> {
        if self.role == ViewRole::Reasoner && self.image_count() > 0 {
            return Err(ViewError::ImagesInReasonerView(self.image_count()));
        }
        for (i, pair) in self.history.windows(2).enumerate() {
            let own = |e: &ViewEntry| e.kind == EntryKind::Own;
            if own(&pair[0]) == own(&pair[1]) {
                return Err(ViewError::EntryOrder(i + 1));
            }
        }
        Ok(())
    }

    /// Every piece of text in the view, used for matching in scripted mocks.
    pub fn all_text(&self) -> String {
        let mut out = self.system_prompt.clone().unwrap_or_default();
        for e in &self.history {
            out.push('\n');
            out.push_str(&e.text);
        }
        out
    }
}

fn check_task(task: &TaskInstance, transcript: &Transcript) -> Result<(), ViewError> {
    if transcript.task_id != task.id {
        return Err(ViewError::WrongTask {
            transcript: transcript.task_id.clone(),
            task: task.id.clone(),
        });
    }
    Ok(())
}

/// Checks that no speaker talks twice in a row, and that the agent owning the
/// view never has two consecutive entries.
fn check_alternation(transcript: &Transcript, own: impl Fn(usize, Speaker) -> bool) -> Result<(), ViewError> {
    for (i, pair) in transcript.turns.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let both_own = own(i, a.speaker) && own(i + 1, b.speaker);
        let repeat = a.speaker == b.speaker && b.speaker != Speaker::Orchestrator;
        if both_own || repeat {
            return Err(ViewError::Alternation {
                task_id: transcript.task_id.clone(),
                speaker: b.speaker,
                index: i + 1,
            });
        }
    }
    Ok(())
}

/// Builds the perceiver's view: system prompt, then the task content (with
/// every task image) as the first counterpart-side entry, then the dialogue.
pub fn make_perceiver_view(
    task: &TaskInstance,
    transcript: &Transcript,
    prompts: &PromptSet,
    config: &DialogueConfig,
) -> Result<AgentView, ViewError> {
    check_task(task, transcript)?;
    check_alternation(transcript, |_, s| s == Speaker::Perceiver)?;
    let mut view = AgentView::new(
        ViewRole::Perceiver,
        Some(prompts.perceiver_system_text(task)),
        GenerationParams::for_role(config, ViewRole::Perceiver),
    );
    view.push(EntryKind::Injected, &prompts.task_text(task), &task.images);
    for m in &transcript.turns {
        let kind = match m.speaker {
            Speaker::Perceiver => EntryKind::Own,
            Speaker::Reasoner => EntryKind::Counterpart,
            Speaker::Orchestrator => EntryKind::Injected,
        };
        view.push(kind, &m.text, &[]);
    }
    Ok(view)
}

/// Builds the reasoner's text-only view. The opener (an orchestrator message
/// at the head of the transcript) is attributed to the reasoner.
pub fn make_reasoner_view(
    transcript: &Transcript,
    prompts: &PromptSet,
    config: &DialogueConfig,
) -> Result<AgentView, ViewError> {
    let own = |i: usize, s: Speaker| s == Speaker::Reasoner || (i == 0 && s == Speaker::Orchestrator);
    check_alternation(transcript, own)?;
    let mut view = AgentView::new(
        ViewRole::Reasoner,
        Some(prompts.reasoner_system.clone()),
        GenerationParams::for_role(config, ViewRole::Reasoner),
    );
    for (i, m) in transcript.turns.iter().enumerate() {
        let kind = match m.speaker {
            _ if own(i, m.speaker) => EntryKind::Own,
            Speaker::Perceiver => EntryKind::Counterpart,
            _ => EntryKind::Injected,
        };
        view.push(kind, &m.text, &[]);
    }
    Ok(view)
}

/// View for a single-model baseline: the task followed by the answer
/// instruction, with images only in multimodal mode.
pub fn make_single_view(task: &TaskInstance, mode: Mode, prompts: &PromptSet, config: &DialogueConfig) -> AgentView {
    let mut view = AgentView::new(ViewRole::Single, None, GenerationParams::for_role(config, ViewRole::Single));
    let images: &[ImageRef] = match mode {
        Mode::SingleMultimodal => &task.images,
        _ => &[],
    };
    view.push(EntryKind::Injected, &prompts.single_model_text(task), images);
    view
}
