use std::path::PathBuf;
use std::sync::Arc;

use duet_core::backend::{Client, EndpointConfig, MockScript, Transport};
use duet_core::eval::load_benchmark;
use duet_core::TaskInstance;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_tasks() -> Vec<TaskInstance> {
    let bench = load_benchmark(&fixtures().join("golden"), "jsonl", None).expect("golden tasks load");
    assert_eq!(bench.tasks.len(), 10, "golden fixture lost tasks");
    bench.tasks
}

pub fn golden_script() -> MockScript {
    MockScript::load(&fixtures().join("golden/script.toml")).expect("golden script loads")
}

pub fn perceiver_endpoint() -> EndpointConfig {
    let mut ep = EndpointConfig::new("perceiver", "mock://", "perceiver-vl").with_vision(true);
    ep.max_retries = 0;
    ep
}

pub fn reasoner_endpoint() -> EndpointConfig {
    let mut ep = EndpointConfig::new("reasoner", "mock://", "reasoner-r1").with_thinking(true);
    ep.max_retries = 0;
    ep
}

pub fn pair(transport: Arc<dyn Transport>) -> (Client, Client) {
    (Client::new(perceiver_endpoint(), transport.clone()), Client::new(reasoner_endpoint(), transport))
}
