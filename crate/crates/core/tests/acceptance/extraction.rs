use std::fs;

use duet_core::orchestrator::extract_answer;
use duet_core::Letter;
use serde::Deserialize;

use crate::common::fixtures;

/// One hand-verified case. `letter` is null when the extractor must abstain.
#[derive(Deserialize)]
struct Case {
    case: usize,
    text: String,
    options: usize,
    letter: Option<String>,
    method: String,
}

pub fn run() -> crate::Outcome {
    let raw = fs::read_to_string(fixtures().join("extraction.jsonl")).map_err(|e| e.to_string())?;
    let cases: Vec<Case> = raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if cases.len() != 50 {
        return Err(format!("corpus has {} cases, expected 50", cases.len()));
    }
    let has = |needle: &str, letter: &str, method: &str| {
        cases.iter().any(|c| {
            c.options == 10 && c.text.contains(needle) && c.letter.as_deref() == Some(letter) && c.method == method
        })
    };
    if !has("the correct family is Poaceae. Answer: A", "A", "strict_pattern")
        || !has("the most likely answer is **G. Cyperaceae**.", "G", "fallback")
    {
        return Err("case-study completions missing from the corpus".into());
    }

    let mut wrong = Vec::new();
    for c in &cases {
        let letters: Vec<Letter> = (0..c.options).map(|i| Letter::from_index(i).unwrap()).collect();
        let v = extract_answer(&c.text, &letters);
        let got_letter = v.extracted.map(|l| l.to_string());
        let got_method = serde_json::to_value(v.method).unwrap();
        if got_letter != c.letter || got_method != c.method.as_str() {
            wrong.push(format!("#{} got {:?}/{}", c.case, got_letter, got_method));
        }
    }
    if !wrong.is_empty() {
        return Err(format!("{}/50 mismatched: {}", wrong.len(), wrong.join("; ")));
    }
    Ok("50/50 match the hand-verified oracle".into())
}
