use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use duet_core::backend::MockTransport;
use duet_core::orchestrator::run_collaborative;
use duet_core::orchestrator::store::{file_stem, from_jsonl, to_jsonl};
use duet_core::DialogueConfig;

use crate::common::{fixtures, golden_script, golden_tasks, pair};

pub fn run() -> crate::Outcome {
    let tasks = golden_tasks();
    let bless = std::env::var_os("DUET_BLESS").is_some();
    let dir = fixtures().join("golden/transcripts");
    let config = DialogueConfig::default();

    let start = Instant::now();
    let transport = Arc::new(MockTransport::new(golden_script()));
    let (perceiver, reasoner) = pair(transport);
    let mut rendered = Vec::new();
    for task in &tasks {
        let t = run_collaborative(task, &perceiver, &reasoner, &config).map_err(|e| format!("{}: {e}", task.id))?;
        rendered.push((task.id.clone(), t.clone(), to_jsonl(&t)));
    }
    let elapsed = start.elapsed();

    if bless {
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        for (id, _, text) in &rendered {
            fs::write(dir.join(format!("{}.transcript", file_stem(id))), text).map_err(|e| e.to_string())?;
        }
    }

    let mut mismatched = Vec::new();
    for (id, transcript, text) in &rendered {
        let path = dir.join(format!("{}.transcript", file_stem(id)));
        let frozen = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if frozen != text.as_bytes() {
            mismatched.push(id.clone());
            continue;
        }
        let parsed = from_jsonl(text, &path.display().to_string()).map_err(|e| e.to_string())?;
        if &parsed != transcript {
            return Err(format!("{id}: golden transcript does not round-trip"));
        }
    }
    if !mismatched.is_empty() {
        return Err(format!("differs from golden: {}", mismatched.join(", ")));
    }
    if elapsed >= Duration::from_secs(5) {
        return Err(format!("took {elapsed:?}, limit 5 s"));
    }
    Ok(format!("{} transcripts byte-identical in {} ms", rendered.len(), elapsed.as_millis()))
}
