//! Final-answer extraction from free-form completions.
//!
//! Order of precedence:
//! 1. the last `Answer: <L>` occurrence whose letter is a valid option
//!    (markup such as `**`, `(`, `$` around the keyword or letter is allowed);
//! 2. the last standalone valid option letter on the final nonblank line;
//! 3. abstain.

use std::sync::LazyLock;

use regex::Regex;

use crate::types::{ExtractionMethod, Letter, Verdict};

static STRICT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"\bAnswer[*_]*[ \t]*:[*_]*[ \t]*[*_`(\[{$"']*[ \t]*([A-Z])"#).unwrap()
});

/// Extracts an answer letter. `options` are the valid letters for the task.
/// `correct` is left unset; see [`Verdict::scored`].
pub fn extract_answer(text: &str, options: &[Letter]) -> Verdict {
    let (extracted, method) = match strict_answer(text, options) {
        Some(l) => (Some(l), ExtractionMethod::StrictPattern),
        None => match fallback(text, options) {
            Some(l) => (Some(l), ExtractionMethod::Fallback),
            None => (None, ExtractionMethod::Abstain),
        },
    };
    Verdict {
        extracted,
        raw_final_text: text.to_string(),
        method,
        correct: None,
    }
}

/// The letter of the last valid `Answer: <L>` occurrence, if any.
pub fn strict_answer(text: &str, options: &[Letter]) -> Option<Letter> {
    STRICT
        .captures_iter(text)
        .filter_map(|cap| {
            let m = cap.get(1)?;
            let standalone = text[m.end()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric());
            let letter = Letter::new(m.as_str().chars().next()?)?;
            (standalone && options.contains(&letter)).then_some(letter)
        })
        .last()
}

fn fallback(text: &str, options: &[Letter]) -> Option<Letter> {
    let line = text.lines().rev().find(|l| !l.trim().is_empty())?;
    line.split(|c: char| !c.is_alphanumeric())
        .filter_map(|tok| {
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Letter::new(c).filter(|l| options.contains(l)),
                _ => None,
            }
        })
        .next_back()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letters(n: usize) -> Vec<Letter> {
        (0..n).map(|i| Letter::from_index(i).unwrap()).collect()
    }

    fn check(text: &str, n: usize) -> (Option<char>, ExtractionMethod) {
        let v = extract_answer(text, &letters(n));
        (v.extracted.map(Letter::as_char), v.method)
    }

    #[test]
    fn strict_last_occurrence_wins() {
        assert_eq!(check("Answer: B ... Answer: C", 4), (Some('C'), ExtractionMethod::StrictPattern));
        assert_eq!(check("...Therefore Answer: G", 10), (Some('G'), ExtractionMethod::StrictPattern));
    }

    #[test]
    fn strict_skips_invalid_letters() {
        assert_eq!(check("Answer: B\nAnswer: Z", 4), (Some('B'), ExtractionMethod::StrictPattern));
        assert_eq!(check("Answer: The first one", 4).1, ExtractionMethod::Abstain);
    }

    #[test]
    fn strict_tolerates_markup() {
        assert_eq!(check("**Answer:** (D)", 4).0, Some('D'));
        assert_eq!(check("Answer: $C$", 4).0, Some('C'));
        assert_eq!(check("**Answer: A**", 4).0, Some('A'));
    }

    #[test]
    fn keyword_is_case_sensitive() {
        assert_eq!(check("answer: B", 4), (Some('B'), ExtractionMethod::Fallback));
    }

    #[test]
    fn fallback_uses_final_line_only() {
        assert_eq!(check("The answer is (D).", 4), (Some('D'), ExtractionMethod::Fallback));
        assert_eq!(check("I pick B.\nNo idea really.", 4), (None, ExtractionMethod::Abstain));
        assert_eq!(
            check("Therefore, the most likely answer is **G. Cyperaceae**.\n\n", 10),
            (Some('G'), ExtractionMethod::Fallback)
        );
    }

    #[test]
    fn empty_text_abstains() {
        assert_eq!(check("", 4), (None, ExtractionMethod::Abstain));
    }

    proptest::proptest! {
        #[test]
        fn round_trip_every_letter(n in 2usize..=26, pick in 0usize..26, prefix in "[a-z .,\n]{0,40}") {
            let pick = pick % n;
            let l = Letter::from_index(pick).unwrap();
            let v = extract_answer(&format!("{prefix} Answer: {l}"), &letters(n));
            proptest::prop_assert_eq!(v.extracted, Some(l));
            proptest::prop_assert_eq!(v.method, ExtractionMethod::StrictPattern);
        }
    }
}
