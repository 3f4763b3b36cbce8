use std::fs;
use std::path::Path;
use std::sync::Arc;

use duet_core::backend::{ChatBackend, MockTransport};
use duet_core::eval::{run_matrix, Binding, RunMatrix, Setting};
use duet_core::{DialogueConfig, Mode};

use crate::common::{golden_script, golden_tasks, pair};

struct Rig {
    transport: Arc<MockTransport>,
    settings: Vec<Setting>,
}

fn rig() -> Rig {
    let transport = Arc::new(MockTransport::new(golden_script()));
    let (p, r) = pair(transport.clone());
    let (p, r): (Arc<dyn ChatBackend>, Arc<dyn ChatBackend>) = (Arc::new(p), Arc::new(r));
    let config = DialogueConfig::default();
    let setting = |name: &str, mode, binding| Setting { name: name.into(), mode, binding, config: config.clone() };
    let settings = vec![
        setting("perceiver", Mode::SingleMultimodal, Binding::Single(p.clone())),
        setting("reasoner", Mode::SingleTextOnly, Binding::Single(r.clone())),
        setting("collaborative", Mode::Collaborative, Binding::Pair { perceiver: p, reasoner: r }),
    ];
    Rig { transport, settings }
}

fn run_once(rig: &Rig, out: &Path, workers: usize) -> Result<(Vec<u8>, Vec<u8>), String> {
    let matrix = RunMatrix {
        tasks: golden_tasks(),
        settings: rig.settings.clone(),
        out_dir: out.to_path_buf(),
        workers,
        breakdown: Some(["perceiver", "reasoner", "collaborative"].map(String::from)),
    };
    run_matrix(&matrix).map_err(|e| e.to_string())?;
    let read = |f: &str| fs::read(out.join(f)).map_err(|e| format!("{f}: {e}"));
    Ok((read("report.json")?, read("report.txt")?))
}

pub fn run() -> crate::Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;

    let first = rig();
    let report = run_once(&first, a.path(), 1)?;
    let calls = first.transport.calls();
    if calls == 0 {
        return Err("first run made no backend calls".into());
    }
    for workers in [8, 1] {
        if run_once(&first, a.path(), workers)? != report {
            return Err(format!("rerun with {workers} worker(s) changed the report"));
        }
        if first.transport.calls() != calls {
            return Err(format!("rerun with {workers} worker(s) made {} new calls", first.transport.calls() - calls));
        }
    }

    let second = rig();
    if run_once(&second, b.path(), 8)? != report {
        return Err("fresh run with 8 workers differs from 1 worker".into());
    }
    for setting in ["perceiver", "reasoner", "collaborative"] {
        let v = |d: &Path| fs::read(d.join(setting).join("verdicts.jsonl")).unwrap_or_default();
        if v(a.path()) != v(b.path()) {
            return Err(format!("{setting}/verdicts.jsonl differs between worker counts"));
        }
    }
    Ok(format!("{calls} calls on first run, 0 on reruns; report identical under 1 and 8 workers"))
}
