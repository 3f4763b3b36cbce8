//! The dialogue protocol.
//!
//! A collaborative run goes: opener (injected, attributed to the reasoner),
//! then `max_turns` rounds of perceiver reply followed by reasoner reply,
//! then the extraction prompt to the perceiver, whose reply is scored.
//! Views are rebuilt from the transcript on every call, so every perceiver
//! call carries the task images and no endpoint has to keep state.

pub mod extract;
pub mod prompts;
pub mod store;

use thiserror::Error;

use crate::backend::{
    make_perceiver_view, make_reasoner_view, make_single_view, BackendError, ChatBackend, CompletionResult, EntryKind,
    ViewError,
};
use crate::types::{ChatMessage, DialogueConfig, Mode, Speaker, TaskInstance, Transcript, Verdict};

pub use extract::extract_answer;
pub use prompts::PromptSet;
pub use store::{StoreError, TranscriptStore};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot start run: {0}")]
    Precondition(String),
    /// The run stopped on a backend failure; `partial` holds everything up to
    /// that point, marked aborted and scored as an abstention.
    #[error("run aborted: {source}")]
    Backend {
        #[source]
        source: BackendError,
        partial: Box<Transcript>,
    },
    #[error("internal dialogue error: {0}")]
    View(#[from] ViewError),
}

impl RunError {
    pub fn partial(&self) -> Option<&Transcript> {
        match self {
            RunError::Backend { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

fn message(speaker: Speaker, result: CompletionResult) -> ChatMessage {
    ChatMessage {
        speaker,
        text: result.text,
        images: Vec::new(),
        token_count: result.token_count,
        thinking_text: result.thinking_text.filter(|_| speaker == Speaker::Reasoner),
    }
}

fn abort(mut transcript: Transcript, task: &TaskInstance, source: BackendError) -> RunError {
    transcript.aborted = Some(source.to_string());
    transcript.verdict = Some(Verdict::abstain("").scored(task.gold));
    RunError::Backend { source, partial: Box::new(transcript) }
}

fn score(task: &TaskInstance, text: &str) -> Verdict {
    extract_answer(text, &task.letters()).scored(task.gold)
}

/// Single-model baseline: one call with the task and the answer instruction.
/// Images are attached only in [`Mode::SingleMultimodal`].
pub fn run_single(
    task: &TaskInstance,
    backend: &dyn ChatBackend,
    mode: Mode,
    config: &DialogueConfig,
) -> Result<Transcript, RunError> {
    let speaker = match mode {
        Mode::SingleTextOnly => Speaker::Reasoner,
        Mode::SingleMultimodal => Speaker::Perceiver,
        Mode::Collaborative => return Err(RunError::Precondition("run_single needs a single-model mode".into())),
    };
    if mode == Mode::SingleMultimodal && !backend.endpoint().supports_vision {
        return Err(RunError::Precondition(format!(
            "endpoint {} does not support vision",
            backend.endpoint().name
        )));
    }
    let prompts = &config.prompt_set;
    let mut transcript = Transcript::new(&task.id, mode, config.fingerprint());
    let view = make_single_view(task, mode, prompts, config);
    let mut prompt = ChatMessage::orchestrator(&view.history[0].text);
    prompt.images = view.history[0].images.clone();
    transcript.turns.push(prompt);

    let reply = match backend.complete(&view) {
        Ok(r) => message(speaker, r),
        Err(e) => return Err(abort(transcript, task, e)),
    };
    transcript.verdict = Some(score(task, &reply.text));
    transcript.turns.push(reply);
    Ok(transcript)
}

/// Collaborative perceiver/reasoner dialogue.
pub fn run_collaborative(
    task: &TaskInstance,
    perceiver: &dyn ChatBackend,
    reasoner: &dyn ChatBackend,
    config: &DialogueConfig,
) -> Result<Transcript, RunError> {
    if !perceiver.endpoint().supports_vision {
        return Err(RunError::Precondition(format!(
            "perceiver endpoint {} does not support vision",
            perceiver.endpoint().name
        )));
    }
    if config.max_turns == 0 {
        return Err(RunError::Precondition("max_turns must be at least 1".into()));
    }
    let prompts = &config.prompt_set;
    let letters = task.letters();
    let mut transcript = Transcript::new(&task.id, Mode::Collaborative, config.fingerprint());
    transcript.turns.push(ChatMessage::orchestrator(&prompts.opener));

    for _ in 0..config.max_turns {
        let view = make_perceiver_view(task, &transcript, prompts, config)?;
        match perceiver.complete(&view) {
            Ok(r) => transcript.turns.push(message(Speaker::Perceiver, r)),
            Err(e) => return Err(abort(transcript, task, e)),
        }
        let view = make_reasoner_view(&transcript, prompts, config)?;
        let reply = match reasoner.complete(&view) {
            Ok(r) => message(Speaker::Reasoner, r),
            Err(e) => return Err(abort(transcript, task, e)),
        };
        let stop = config.allow_early_stop && extract::strict_answer(&reply.text, &letters).is_some();
        transcript.turns.push(reply);
        if stop {
            break;
        }
    }

    let request = prompts.extraction_text(task);
    let mut view = make_perceiver_view(task, &transcript, prompts, config)?;
    view.push(EntryKind::Injected, &request, &[]);
    transcript.extraction_request = Some(ChatMessage::orchestrator(request));
    let reply = match perceiver.complete(&view) {
        Ok(r) => message(Speaker::Perceiver, r),
        Err(e) => return Err(abort(transcript, task, e)),
    };
    transcript.verdict = Some(score(task, &reply.text));
    transcript.extraction_reply = Some(reply);
    Ok(transcript)
}

/// Config for the single-turn ablation: one exchange, with the perceiver and
/// reasoner told up front that only one message will be exchanged. Answer
/// and task templates are kept from `config`.
pub fn single_turn_config(config: &DialogueConfig) -> DialogueConfig {
    let variant = PromptSet::single_turn();
    DialogueConfig {
        max_turns: 1,
        prompt_set: PromptSet {
            perceiver_system: variant.perceiver_system,
            reasoner_system: variant.reasoner_system,
            opener: variant.opener,
            ..config.prompt_set.clone()
        },
        ..config.clone()
    }
}

pub fn run_singleturn_ablation(
    task: &TaskInstance,
    perceiver: &dyn ChatBackend,
    reasoner: &dyn ChatBackend,
    config: &DialogueConfig,
) -> Result<Transcript, RunError> {
    run_collaborative(task, perceiver, reasoner, &single_turn_config(config))
}
