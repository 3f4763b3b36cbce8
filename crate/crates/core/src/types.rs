//! Domain types shared by the orchestrator, synthesis pipeline and evaluation
//! harness. Nothing in here performs I/O.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::orchestrator::PromptSet;

/// Largest option alphabet accepted by the validator.
pub const MAX_OPTIONS: usize = 26;

/// An option letter, `A` through `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Letter(char);

impl Letter {
    pub fn new(c: char) -> Option<Self> {
        c.is_ascii_uppercase().then_some(Letter(c))
    }

    /// The letter at zero-based position `index` (0 → `A`).
    pub fn from_index(index: usize) -> Option<Self> {
        (index < MAX_OPTIONS).then(|| Letter((b'A' + index as u8) as char))
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<String> for Letter {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        let mut chars = value.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Letter::new(c).ok_or_else(|| format!("invalid option letter {value:?}")),
            _ => Err(format!("invalid option letter {value:?}")),
        }
    }
}

impl From<Letter> for String {
    fn from(value: Letter) -> Self {
        value.0.to_string()
    }
}

/// Opaque handle to an image. Resolution to bytes happens in the backend.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        ImageRef(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: Letter,
    pub text: String,
}

/// One multiple-choice question over one or more images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub question: String,
    pub options: Vec<AnswerOption>,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Letter>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl TaskInstance {
    /// Builds a task whose options are lettered `A`, `B`, ... in order.
    pub fn with_options<S: Into<String>>(
        id: impl Into<String>,
        question: impl Into<String>,
        options: impl IntoIterator<Item = S>,
    ) -> Self {
        let options = options
            .into_iter()
            .enumerate()
            .map(|(i, text)| AnswerOption {
                letter: Letter::from_index(i).expect("more than 26 options"),
                text: text.into(),
            })
            .collect();
        TaskInstance {
            id: id.into(),
            question: question.into(),
            options,
            images: Vec::new(),
            gold: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn letters(&self) -> Vec<Letter> {
        self.options.iter().map(|o| o.letter).collect()
    }

    pub fn has_letter(&self, letter: Letter) -> bool {
        self.options.iter().any(|o| o.letter == letter)
    }

    /// Options rendered one per line as `A. text`.
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("{}. {}", o.letter, o.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every [`TaskInstance`] invariant. An empty result means the task is
/// well formed.
pub fn validate_task(task: &TaskInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, rule: String| out.push(Violation { field, rule });

    if task.id.trim().is_empty() {
        push("id", "id must be nonempty".into());
    }
    if task.options.len() < 2 {
        push("options", format!("at least 2 options required, found {}", task.options.len()));
    }
    if task.options.len() > MAX_OPTIONS {
        push("options", format!("at most {MAX_OPTIONS} options allowed, found {}", task.options.len()));
    }
    let mut seen = HashSet::new();
    for opt in &task.options {
        if !seen.insert(opt.letter) {
            push("options", format!("duplicate option letter {}", opt.letter));
        }
    }
    for (i, opt) in task.options.iter().enumerate() {
        if opt.letter.index() != i {
            push(
                "options",
                format!("option letters must be contiguous from A; position {i} has {}", opt.letter),
            );
            break;
        }
    }
    if let Some(gold) = task.gold {
        if !task.has_letter(gold) {
            push("gold", format!("gold {gold} is not one of the option letters"));
        }
    }
    out
}

/// Checks that ids are unique across a task set.
pub fn duplicate_ids(tasks: &[TaskInstance]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = tasks
        .iter()
        .filter(|t| !seen.insert(t.id.as_str()))
        .map(|t| t.id.clone())
        .collect();
    dups.sort();
    dups.dedup();
    dups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Perceiver,
    Reasoner,
    /// Scripted text injected by the orchestrator, never produced by a model.
    Orchestrator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_text: Option<String>,
}

impl ChatMessage {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        ChatMessage {
            speaker,
            text: text.into(),
            images: Vec::new(),
            token_count: None,
            thinking_text: None,
        }
    }

    pub fn orchestrator(text: impl Into<String>) -> Self {
        Self::new(Speaker::Orchestrator, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Collaborative,
    SingleTextOnly,
    SingleMultimodal,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Collaborative => "collaborative",
            Mode::SingleTextOnly => "single_text_only",
            Mode::SingleMultimodal => "single_multimodal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    StrictPattern,
    Fallback,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub extracted: Option<Letter>,
    pub raw_final_text: String,
    pub method: ExtractionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

impl Verdict {
    pub fn abstain(raw_final_text: impl Into<String>) -> Self {
        Verdict {
            extracted: None,
            raw_final_text: raw_final_text.into(),
            method: ExtractionMethod::Abstain,
            correct: None,
        }
    }

    /// Sets `correct` against `gold`; abstentions score incorrect.
    pub fn scored(mut self, gold: Option<Letter>) -> Self {
        self.correct = gold.map(|g| self.extracted == Some(g));
        self
    }

    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }
}

/// Full record of one run on one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub mode: Mode,
    pub turns: Vec<ChatMessage>,
    pub extraction_request: Option<ChatMessage>,
    pub extraction_reply: Option<ChatMessage>,
    pub verdict: Option<Verdict>,
    pub config_fingerprint: String,
    /// Set when a backend error ended the run early.
    pub aborted: Option<String>,
}

impl Transcript {
    pub fn new(task_id: impl Into<String>, mode: Mode, config_fingerprint: impl Into<String>) -> Self {
        Transcript {
            task_id: task_id.into(),
            mode,
            turns: Vec::new(),
            extraction_request: None,
            extraction_reply: None,
            verdict: None,
            config_fingerprint: config_fingerprint.into(),
            aborted: None,
        }
    }

    /// Number of perceiver replies in the dialogue proper, i.e. the number of
    /// (reasoner message, perceiver reply) pairs.
    pub fn exchange_pairs(&self) -> usize {
        self.turns.iter().filter(|m| m.speaker == Speaker::Perceiver).count()
    }

    /// Returns the index of the first message that repeats the previous
    /// non-orchestrator speaker, scanning after the opener.
    pub fn alternation_violation(&self) -> Option<usize> {
        let mut prev: Option<Speaker> = None;
        for (i, m) in self.turns.iter().enumerate().skip(1) {
            if m.speaker == Speaker::Orchestrator {
                continue;
            }
            if prev == Some(m.speaker) {
                return Some(i);
            }
            prev = Some(m.speaker);
        }
        None
    }

    pub fn is_complete(&self) -> bool {
        self.aborted.is_none() && self.verdict.is_some()
    }
}

/// Generation settings for one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub max_turns: u32,
    pub max_tokens_per_turn: u32,
    pub perceiver_max_tokens: Option<u32>,
    pub reasoner_max_tokens: Option<u32>,
    pub thinking_token_cap: u32,
    pub temperature: f64,
    /// Distinguishes sampled calls at nonzero temperature.
    pub sample_index: u32,
    pub seed: Option<u64>,
    pub allow_early_stop: bool,
    pub prompt_set: PromptSet,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        DialogueConfig {
            max_turns: 5,
            max_tokens_per_turn: 2048,
            perceiver_max_tokens: None,
            reasoner_max_tokens: None,
            thinking_token_cap: 4096,
            temperature: 0.0,
            sample_index: 0,
            seed: None,
            allow_early_stop: false,
            prompt_set: PromptSet::default(),
        }
    }
}

impl DialogueConfig {
    pub fn perceiver_tokens(&self) -> u32 {
        self.perceiver_max_tokens.unwrap_or(self.max_tokens_per_turn)
    }

    pub fn reasoner_tokens(&self) -> u32 {
        self.reasoner_max_tokens.unwrap_or(self.max_tokens_per_turn)
    }

    /// Hex digest of the canonical JSON form. Stable across runs and hosts.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 {
            return Err("max_turns must be positive".into());
        }
        if self.max_tokens_per_turn == 0 || self.thinking_token_cap == 0 {
            return Err("token budgets must be positive".into());
        }
        if !(self.temperature >= 0.0) {
            return Err("temperature must be nonnegative".into());
        }
        self.prompt_set.validate().map_err(|e| e.to_string())
    }
}
