use std::sync::Arc;

use duet_core::backend::mock::{MockError, RoleMatch};
use duet_core::backend::{MockRule, MockScript, MockTransport, RecordingTransport, ViewRole};
use duet_core::orchestrator::{run_collaborative, run_singleturn_ablation};
use duet_core::{DialogueConfig, ImageRef, Letter, TaskInstance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::pair;

const DIALOGUES: usize = 1000;

/// Reply fragments, some of which look like image references.
const PHRASES: &[&str] = &[
    "The figure shows three labelled regions.",
    "See images/plant.png for the detail.",
    "![figure](chart.png)",
    "data:image/png;base64,iVBORw0KGgo=",
    "The second image is darker than the first.",
    "Could you describe the top left corner?",
    "What colour is the largest bar?",
    "The values are 12, 15 and 18.",
];

fn phrases(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| PHRASES.choose(rng).unwrap().to_string()).collect()
}

fn random_task(rng: &mut ChaCha8Rng, i: usize) -> TaskInstance {
    let n = rng.gen_range(2..=8);
    let mut t = TaskInstance::with_options(format!("iso-{i:04}"), format!("Question {i} about the picture?"), (0..n).map(|k| format!("option {k}")));
    t.images = (0..rng.gen_range(1..=3)).map(|k| ImageRef::new(format!("img/{i}-{k}.png"))).collect();
    t.gold = Letter::from_index(rng.gen_range(0..n));
    t
}

fn random_script(rng: &mut ChaCha8Rng, n_options: usize) -> MockScript {
    let mut rules = Vec::new();
    if rng.gen_bool(0.05) {
        rules.push(MockRule { error: Some(MockError::Auth), ..MockRule::new(RoleMatch::Reasoner, ["x"]) });
    }
    if rng.gen_bool(0.05) {
        rules.push(MockRule { error: Some(MockError::Protocol), ..MockRule::new(RoleMatch::Perceiver, ["x"]).last_contains("final answer") });
    }
    let n = rng.gen_range(1..=4);
    let perceiver = phrases(rng, n);
    rules.push(MockRule::new(RoleMatch::Perceiver, perceiver));
    let n = rng.gen_range(1..=5);
    let mut reasoner = phrases(rng, n);
    if rng.gen_bool(0.3) {
        let letter = Letter::from_index(rng.gen_range(0..n_options)).unwrap();
        let at = rng.gen_range(0..reasoner.len());
        reasoner[at] = format!("I am confident now.\nAnswer: {letter}");
    }
    let mut rule = MockRule::new(RoleMatch::Reasoner, reasoner);
    if rng.gen_bool(0.2) {
        rule.thinking_tokens = Some(rng.gen_range(1..6000));
    } else {
        rule.thinking = phrases(rng, 2);
    }
    rules.push(rule);
    MockScript::new(rules)
}

pub fn run() -> crate::Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let (mut reasoner_requests, mut perceiver_requests, mut aborted) = (0usize, 0usize, 0usize);
    let mut violations = Vec::new();
    for i in 0..DIALOGUES {
        let task = random_task(&mut rng, i);
        let script = random_script(&mut rng, task.options.len());
        let config = DialogueConfig {
            max_turns: rng.gen_range(1..=5),
            allow_early_stop: rng.gen_bool(0.5),
            thinking_token_cap: rng.gen_range(16..=4096),
            ..DialogueConfig::default()
        };
        let recorder = Arc::new(RecordingTransport::new(MockTransport::new(script)));
        let (perceiver, reasoner) = pair(recorder.clone());
        let result = if rng.gen_bool(0.1) {
            run_singleturn_ablation(&task, &perceiver, &reasoner, &config)
        } else {
            run_collaborative(&task, &perceiver, &reasoner, &config)
        };
        let transcript = match result {
            Ok(t) => t,
            Err(e) => {
                aborted += 1;
                e.partial().cloned().ok_or_else(|| format!("{}: {e}", task.id))?
            }
        };
        for req in recorder.requests() {
            match req.role {
                ViewRole::Reasoner => {
                    reasoner_requests += 1;
                    if req.image_attachments() > 0 {
                        violations.push(task.id.clone());
                    }
                }
                ViewRole::Perceiver => {
                    perceiver_requests += 1;
                    if req.request.view.image_count() != task.images.len() {
                        return Err(format!("{}: perceiver request lost its images", task.id));
                    }
                }
                ViewRole::Single => return Err(format!("{}: unexpected single-model request", task.id)),
            }
        }
        if transcript.turns.iter().any(|m| m.speaker == duet_core::Speaker::Reasoner && !m.images.is_empty()) {
            violations.push(task.id.clone());
        }
    }
    if !violations.is_empty() {
        violations.dedup();
        return Err(format!("{} dialogue(s) sent images to the reasoner, first {}", violations.len(), violations[0]));
    }
    if reasoner_requests == 0 || perceiver_requests == 0 {
        return Err("instrumented backend saw no traffic".into());
    }
    Ok(format!(
        "{DIALOGUES} dialogues ({aborted} aborted), {reasoner_requests} reasoner requests, 0 with images"
    ))
}
