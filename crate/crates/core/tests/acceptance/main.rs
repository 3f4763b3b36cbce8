//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.
//!
//! `DUET_BLESS=1` rewrites the frozen golden transcripts instead of comparing
//! against them.

mod breakdown;
mod common;
mod determinism;
mod extraction;
mod golden;
mod isolation;
mod synthesis;
mod turns;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

type Outcome = Result<String, String>;

const CRITERIA: &[(&str, fn() -> Outcome)] = &[
    ("golden-transcripts", golden::run),
    ("image-isolation", isolation::run),
    ("turn-budget", turns::run),
    ("extraction-suite", extraction::run),
    ("synthesis-filter-oracle", synthesis::run),
    ("breakdown-oracle", breakdown::run),
    ("determinism-resume", determinism::run),
];

fn main() -> ExitCode {
    let mut failed = 0;
    for (name, criterion) in CRITERIA {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {name} ({ms} ms): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {reason}");
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
