//! Prompt templates. The defaults are the published prompts, byte for byte.

use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::TaskInstance;

pub const SINGLE_MODEL_PROMPT: &str = "Answer the preceding multiple choice question. The last line of your response should be of the following format: \"Answer: $LETTER\" (without quotes) where LETTER is one of the options. Think step by step before answering.";

pub const PERCEIVER_SYSTEM_PROMPT: &str = "Your task is to answer a given multiple choice question about an image with the help of the expert. The expert does not have access to the question, the options, or the image, so you should state the exact question and the options, and provide a detailed description of the image to the expert.";

pub const REASONER_SYSTEM_PROMPT: &str = "Your task is to help the client answer a multiple choice question about an image. Only the client have access to the question, the options, and the image, so you should try to gather from the client as much information as needed to answer the question. Make sure you fully understand the question and verify details about the image that may be relevant to each option before answering the question.";

pub const OPENER_PROMPT: &str = "Hi, I'm the expert here. I heard you have a multiple choice question about an image and I can help you with that. Could you state the exact question, the options, and provide a detailed description of the image?";

pub const EXTRACTION_PROMPT: &str = "Now it's time to write the final answer. Your response should be of the following format: \"Answer: $LETTER\" (without quotes) where LETTER is one of the options.";

pub const TASK_TEMPLATE: &str = "{question}\n\n{options}";

// Reconstructed single-turn variants; the originals were never published.
const SINGLE_TURN_PERCEIVER_SYSTEM: &str = "Your task is to answer a given multiple choice question about an image with the help of the expert. The expert does not have access to the question, the options, or the image. You can only send one message to the expert, so in that message you should state the exact question and the options, and communicate all relevant visual information in a detailed description of the image.";

const SINGLE_TURN_REASONER_SYSTEM: &str = "Your task is to help the client answer a multiple choice question about an image. Only the client have access to the question, the options, and the image. The client will send you a single message stating the question, the options, and a description of the image, so answer the question based on that message alone.";

const SINGLE_TURN_OPENER: &str = "Hi, I'm the expert here. I heard you have a multiple choice question about an image and I can help you with that. You can only send me one message, so please state the exact question, the options, and communicate all relevant visual information in a detailed description of the image.";

const FILES: [&str; 5] = [
    "single_model.txt",
    "perceiver_system.txt",
    "reasoner_system.txt",
    "opener.txt",
    "extraction.txt",
];

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt {name} is empty")]
    Empty { name: &'static str },
    #[error("prompt {name} uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: &'static str, placeholder: String },
    #[error("prompt {name} reaches the reasoner and must not reference the task")]
    TaskLeak { name: &'static str },
    #[error("reading prompt file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The five dialogue prompts plus the layout used to present a task.
///
/// Templates may reference `{question}` and `{options}`; both are filled from
/// the task at use time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub single_model_prompt: String,
    pub perceiver_system: String,
    pub reasoner_system: String,
    pub opener: String,
    pub extraction_prompt: String,
    pub task_template: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            single_model_prompt: SINGLE_MODEL_PROMPT.into(),
            perceiver_system: PERCEIVER_SYSTEM_PROMPT.into(),
            reasoner_system: REASONER_SYSTEM_PROMPT.into(),
            opener: OPENER_PROMPT.into(),
            extraction_prompt: EXTRACTION_PROMPT.into(),
            task_template: TASK_TEMPLATE.into(),
        }
    }
}

impl PromptSet {
    /// Variant used by the single-turn ablation: the perceiver is told to
    /// convey everything in its one message.
    pub fn single_turn() -> Self {
        PromptSet {
            perceiver_system: SINGLE_TURN_PERCEIVER_SYSTEM.into(),
            reasoner_system: SINGLE_TURN_REASONER_SYSTEM.into(),
            opener: SINGLE_TURN_OPENER.into(),
            ..PromptSet::default()
        }
    }

    /// Loads `single_model.txt`, `perceiver_system.txt`, `reasoner_system.txt`,
    /// `opener.txt`, `extraction.txt` and optionally `task.txt` from `dir`.
    /// One trailing newline per file is dropped.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(strip_one_newline(text))
        };
        let [single, perceiver, reasoner, opener, extraction] = FILES.map(&read);
        let task_template = match dir.join("task.txt").exists() {
            true => read("task.txt")?,
            false => TASK_TEMPLATE.to_string(),
        };
        let set = PromptSet {
            single_model_prompt: single?,
            perceiver_system: perceiver?,
            reasoner_system: reasoner?,
            opener: opener?,
            extraction_prompt: extraction?,
            task_template,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in FILES.iter().zip(self.fields().map(|(_, t)| t)) {
            fs::write(dir.join(name), format!("{text}\n"))?;
        }
        fs::write(dir.join("task.txt"), format!("{}\n", self.task_template))
    }

    fn fields(&self) -> [(&'static str, &str); 6] {
        [
            ("single_model_prompt", &self.single_model_prompt),
            ("perceiver_system", &self.perceiver_system),
            ("reasoner_system", &self.reasoner_system),
            ("opener", &self.opener),
            ("extraction_prompt", &self.extraction_prompt),
            ("task_template", &self.task_template),
        ]
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (name, text) in self.fields() {
            if text.trim().is_empty() {
                return Err(PromptError::Empty { name });
            }
            for cap in PLACEHOLDER.captures_iter(text) {
                let p = &cap[1];
                if p != "question" && p != "options" {
                    return Err(PromptError::UnknownPlaceholder { name, placeholder: p.to_string() });
                }
            }
        }
        for (name, text) in [("reasoner_system", &self.reasoner_system), ("opener", &self.opener)] {
            if PLACEHOLDER.is_match(text) {
                return Err(PromptError::TaskLeak { name });
            }
        }
        Ok(())
    }

    /// The task as shown to a model that can see it.
    pub fn task_text(&self, task: &TaskInstance) -> String {
        fill(&self.task_template, task)
    }

    /// Question and options followed by the single-model instruction.
    pub fn single_model_text(&self, task: &TaskInstance) -> String {
        format!("{}\n\n{}", self.task_text(task), fill(&self.single_model_prompt, task))
    }

    pub fn perceiver_system_text(&self, task: &TaskInstance) -> String {
        fill(&self.perceiver_system, task)
    }

    pub fn extraction_text(&self, task: &TaskInstance) -> String {
        fill(&self.extraction_prompt, task)
    }
}

fn fill(template: &str, task: &TaskInstance) -> String {
    template
        .replace("{question}", &task.question)
        .replace("{options}", &task.options_block())
}

fn strip_one_newline(mut s: String) -> String {
    if s.ends_with('\n') {
        s.pop();
        if s.ends_with('\r') {
            s.pop();
        }
    }
    s
}
