use std::sync::atomic::{AtomicUsize, Ordering};

use duet_core::backend::{AgentView, BackendError, ChatBackend, CompletionResult, EndpointConfig, FinishReason, ViewRole};
use duet_core::synthesis::{synthesize_one, CorpusImage, FilterStatus, SynthesisConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RECORDS: usize = 200;
const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Reply {
    Letter(char),
    Garbled,
    Abort,
}

/// What the teacher does for one record.
#[derive(Debug)]
struct Plan {
    /// First attempt whose question block parses; `None` never parses.
    question_ok_at: Option<u32>,
    text_only: Reply,
    multimodal: Reply,
    /// Final answer of the i-th sampled conversation.
    conversations: Vec<Reply>,
}

fn letter(rng: &mut ChaCha8Rng) -> Reply {
    Reply::Letter(LETTERS[rng.gen_range(0..4)])
}

fn plan(rng: &mut ChaCha8Rng) -> Plan {
    let question_ok_at = match rng.gen_range(0..100) {
        0..=79 => Some(0),
        80..=86 => Some(1),
        87..=91 => Some(2),
        92..=94 => Some(3),
        _ => None,
    };
    let text_only = if rng.gen_bool(0.1) { Reply::Garbled } else { letter(rng) };
    let multimodal = if rng.gen_bool(0.08) { Reply::Garbled } else { letter(rng) };
    let conversations = (0..10)
        .map(|_| match rng.gen_range(0..100) {
            0..=7 => Reply::Abort,
            8..=17 => Reply::Garbled,
            // Mostly wrong, so a fair share of records exhausts the budget.
            18..=29 => multimodal_hint(multimodal, rng),
            _ => letter(rng),
        })
        .collect();
    Plan { question_ok_at, text_only, multimodal, conversations }
}

fn multimodal_hint(m: Reply, rng: &mut ChaCha8Rng) -> Reply {
    match m {
        Reply::Letter(_) => m,
        _ => letter(rng),
    }
}

struct Teacher {
    ep: EndpointConfig,
    plans: Vec<Plan>,
    calls: AtomicUsize,
}

fn record_of(view: &AgentView) -> usize {
    let text = view.all_text();
    let images: String = view.history.iter().flat_map(|e| &e.images).map(|i| i.as_str().to_string()).collect();
    let hay = format!("{text} {images}");
    let at = hay.find("rec-").expect("view names its record");
    hay[at + 4..at + 7].parse().expect("three digit record number")
}

fn say(r: Reply) -> String {
    match r {
        Reply::Letter(l) => format!("Having weighed the options.\nAnswer: {l}"),
        Reply::Garbled | Reply::Abort => "I would rather not commit to anything.".into(),
    }
}

impl ChatBackend for Teacher {
    fn endpoint(&self) -> &EndpointConfig {
        &self.ep
    }

    fn complete(&self, view: &AgentView) -> Result<CompletionResult, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let n = record_of(view);
        let plan = &self.plans[n];
        let last = view.history.last().map(|e| e.text.as_str()).unwrap_or("");
        let text = match view.role {
            ViewRole::Single if last.contains("### QUESTION") => {
                let attempt = view.params.sample_index;
                if plan.question_ok_at.is_some_and(|ok| attempt >= ok) {
                    format!("### QUESTION\nWhich label matches item rec-{n:03}?\n### OPTIONS\nA. red\nB. green\nC. blue\nD. grey\n### END")
                } else {
                    "This image is not suitable.".into()
                }
            }
            ViewRole::Single if view.image_count() == 0 => say(plan.text_only),
            ViewRole::Single => say(plan.multimodal),
            ViewRole::Perceiver if last.contains("final answer") => {
                match plan.conversations[view.params.sample_index as usize] {
                    Reply::Abort => {
                        return Err(BackendError::Transport {
                            endpoint: self.ep.name.clone(),
                            attempts: 1,
                            message: "scripted outage".into(),
                        })
                    }
                    r => say(r),
                }
            }
            ViewRole::Perceiver => format!("The picture for rec-{n:03} shows four coloured labels."),
            ViewRole::Reasoner => "Which label is circled?".into(),
        };
        Ok(CompletionResult { text, thinking_text: None, token_count: None, finish_reason: FinishReason::Stop })
    }
}

#[derive(Debug, PartialEq)]
struct Expected {
    status: FilterStatus,
    retained: Option<usize>,
    conversations: usize,
}

/// Independent restatement of the filter rules over a plan.
fn oracle(p: &Plan, budget: usize, attempts: u32) -> Expected {
    let failed = Expected { status: FilterStatus::DroppedGenerationFailed, retained: None, conversations: 0 };
    if !p.question_ok_at.is_some_and(|ok| ok < attempts) {
        return failed;
    }
    let Reply::Letter(gold) = p.multimodal else { return failed };
    let first_correct = (0..budget).find(|&i| p.conversations[i] == Reply::Letter(gold));
    let conversations = first_correct.map_or(budget, |i| i + 1);
    if p.text_only == Reply::Letter(gold) {
        return Expected { status: FilterStatus::DroppedTextAnswerable, retained: first_correct, conversations };
    }
    match first_correct {
        Some(i) => Expected { status: FilterStatus::Kept, retained: Some(i), conversations },
        None => Expected { status: FilterStatus::DroppedNoCorrectConversation, retained: None, conversations },
    }
}

pub fn run() -> crate::Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let plans: Vec<Plan> = (0..RECORDS).map(|_| plan(&mut rng)).collect();
    let config = SynthesisConfig::default();
    let budget = config.budget as usize;
    if budget > 8 {
        return Err(format!("default budget {budget} exceeds 8"));
    }
    let teacher = Teacher {
        ep: EndpointConfig::new("teacher", "scripted://", "teacher").with_vision(true),
        plans,
        calls: AtomicUsize::new(0),
    };

    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for n in 0..RECORDS {
        let image = CorpusImage { rel_path: format!("rec-{n:03}.png"), category: None, sha256: format!("{n:064x}") };
        let rec = synthesize_one(&image, 0, &teacher, &config);
        let want = oracle(&teacher.plans[n], budget, config.question_retries + 1);
        let status = rec.filter_status.ok_or_else(|| format!("rec-{n:03}: no status"))?;
        let got = Expected { status, retained: rec.retained_conversation_index, conversations: rec.conversations.len() };
        if got != want {
            return Err(format!("rec-{n:03}: got {got:?}, oracle {want:?} for {:?}", teacher.plans[n]));
        }
        if rec.conversations.len() > 8 {
            return Err(format!("rec-{n:03}: {} conversations", rec.conversations.len()));
        }
        if status == FilterStatus::Kept {
            let text_wrong = rec.answer_text_only.as_ref().is_some_and(|v| !v.is_correct());
            let retained_right = rec.retained().and_then(|t| t.verdict.as_ref()).is_some_and(|v| v.is_correct());
            if !text_wrong || !retained_right {
                return Err(format!("rec-{n:03}: kept but text-only correct or retained conversation wrong"));
            }
        }
        *counts.entry(status.to_string()).or_default() += 1;
    }
    if counts.len() != 4 {
        return Err(format!("fixture does not exercise every status: {counts:?}"));
    }
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("{RECORDS} records match the oracle ({})", summary.join(", ")))
}
