use std::sync::Arc;

use duet_core::backend::{MockTransport, RecordingTransport, ViewRole};
use duet_core::orchestrator::run_collaborative;
use duet_core::{DialogueConfig, Speaker};

use crate::common::{golden_script, golden_tasks, pair};

pub fn run() -> crate::Outcome {
    let tasks = golden_tasks();
    let mut checked = 0;
    for max_turns in 1..=5u32 {
        let config = DialogueConfig { max_turns, ..DialogueConfig::default() };
        for task in &tasks {
            let recorder = Arc::new(RecordingTransport::new(MockTransport::new(golden_script())));
            let (perceiver, reasoner) = pair(recorder.clone());
            let t = run_collaborative(task, &perceiver, &reasoner, &config).map_err(|e| format!("{}: {e}", task.id))?;
            let m = max_turns as usize;
            let said = |s: Speaker| t.turns.iter().filter(|x| x.speaker == s).count();
            let ctx = format!("{} at max_turns {max_turns}", task.id);
            if !t.is_complete() {
                return Err(format!("{ctx}: incomplete"));
            }
            if t.exchange_pairs() != m || said(Speaker::Perceiver) != m || said(Speaker::Reasoner) != m {
                return Err(format!("{ctx}: {} exchange pairs", t.exchange_pairs()));
            }
            if t.turns.len() != 2 * m + 1 || t.turns[0].speaker != Speaker::Orchestrator {
                return Err(format!("{ctx}: {} dialogue messages", t.turns.len()));
            }
            if t.alternation_violation().is_some() {
                return Err(format!("{ctx}: speakers do not alternate"));
            }
            if t.extraction_request.is_none() || t.extraction_reply.is_none() {
                return Err(format!("{ctx}: extraction exchange missing"));
            }
            let requests = recorder.requests();
            let perceiver_calls = requests.iter().filter(|r| r.role == ViewRole::Perceiver).count();
            let reasoner_turns = requests
                .iter()
                .filter(|r| r.role == ViewRole::Reasoner && r.request.thinking_prefill.is_none())
                .count();
            if perceiver_calls != m + 1 || reasoner_turns != m {
                return Err(format!("{ctx}: {perceiver_calls} perceiver and {reasoner_turns} reasoner calls"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} transcripts with exactly max_turns pairs plus extraction"))
}
