//! Parser for the teacher's question block.
//!
//! ```text
//! ### QUESTION
//! What is the value of the tallest bar?
//! ### OPTIONS
//! A. 12
//! B. 15
//! C. 18
//! D. 21
//! ### END
//! ```
//!
//! Anything outside the block is ignored; if several blocks appear the last
//! one is used.

use std::sync::LazyLock;

use regex::Regex;

use crate::types::{validate_task, AnswerOption, Letter, TaskInstance};

pub const MIN_OPTIONS: usize = 4;

static OPTION_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\(?([A-Z])[.):]\s+(\S.*?)\s*$").unwrap());

pub fn parse_question_block(reply: &str, id: &str) -> Result<TaskInstance, String> {
    let start = reply.rfind("### QUESTION").ok_or("no ### QUESTION marker")?;
    let body = &reply[start + "### QUESTION".len()..];
    let opt_at = body.find("### OPTIONS").ok_or("no ### OPTIONS marker")?;
    let question = body[..opt_at].trim();
    if question.is_empty() {
        return Err("empty question".into());
    }
    let rest = &body[opt_at + "### OPTIONS".len()..];
    let end = rest.find("### END").ok_or("no ### END marker")?;

    let mut options = Vec::new();
    for line in rest[..end].lines().filter(|l| !l.trim().is_empty()) {
        let cap = OPTION_LINE
            .captures(line)
            .ok_or_else(|| format!("unparseable option line {:?}", line.trim()))?;
        options.push(AnswerOption {
            letter: Letter::new(cap[1].chars().next().unwrap()).unwrap(),
            text: cap[2].to_string(),
        });
    }
    if options.len() < MIN_OPTIONS {
        return Err(format!("need at least {MIN_OPTIONS} options, got {}", options.len()));
    }
    let task = TaskInstance {
        id: id.to_string(),
        question: question.to_string(),
        options,
        images: Vec::new(),
        gold: None,
        meta: Default::default(),
    };
    let violations = validate_task(&task);
    if let Some(v) = violations.first() {
        return Err(v.to_string());
    }
    Ok(task)
}
