//! Scripted, deterministic stand-in for a model endpoint.
//!
//! A script is a TOML file of `[[rule]]` tables. For each request the first
//! rule whose selectors all match is used, and the reply is picked by how
//! many messages the agent has received so far: the first reply answers the
//! first incoming message, and so on, clamped to the last reply. The response is a pure function of the request, so results do not
//! depend on call order or thread scheduling.
//!
//! ```toml
//! [[rule]]
//! role = "perceiver"                    # perceiver | reasoner | single | any
//! last_contains = "final answer"        # substring of the newest entry
//! replies = ["Answer: B"]
//!
//! [[rule]]
//! role = "reasoner"
//! endpoint = "reasoner"                 # endpoint name
//! contains = "angiosperm"               # substring anywhere in the view
//! sample = 2                            # sample index (sampled calls only)
//! has_images = false                    # whether the view carries images
//! image = "chart"                       # substring of some image reference
//! replies = ["What colour are the leaves?", "It is {last}"]
//! thinking_tokens = 5000                # synthesize a thinking trace
//! ```
//!
//! Replies may use `{turn}` (1-based), `{sample}`, `{endpoint}`, `{opening}`
//! (first line of the first entry) and `{last}` (first line of the newest
//! entry).

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::view::{AgentView, EntryKind, ViewRole};
use super::{count_tokens, truncate_tokens, CompletionRequest, EndpointConfig, RawReply, Transport, TransportFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleMatch {
    #[default]
    Any,
    Perceiver,
    Reasoner,
    Single,
}

impl RoleMatch {
    fn matches(self, role: ViewRole) -> bool {
        matches!(
            (self, role),
            (RoleMatch::Any, _)
                | (RoleMatch::Perceiver, ViewRole::Perceiver)
                | (RoleMatch::Reasoner, ViewRole::Reasoner)
                | (RoleMatch::Single, ViewRole::Single)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockError {
    Transport,
    RateLimit,
    Auth,
    Protocol,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub role: RoleMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_images: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thinking: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<MockError>,
}

impl MockRule {
    pub fn new(role: RoleMatch, replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        MockRule { role, replies: replies.into_iter().map(Into::into).collect(), ..MockRule::default() }
    }

    pub fn contains(mut self, s: impl Into<String>) -> Self {
        self.contains = Some(s.into());
        self
    }

    pub fn last_contains(mut self, s: impl Into<String>) -> Self {
        self.last_contains = Some(s.into());
        self
    }

    pub fn endpoint(mut self, s: impl Into<String>) -> Self {
        self.endpoint = Some(s.into());
        self
    }

    pub fn sample(mut self, n: u32) -> Self {
        self.sample = Some(n);
        self
    }

    fn matches(&self, endpoint: &EndpointConfig, view: &AgentView) -> bool {
        self.role.matches(view.role)
            && self.endpoint.as_ref().is_none_or(|e| *e == endpoint.name)
            && self.sample.is_none_or(|s| s == view.params.sample_index)
            && self.has_images.is_none_or(|h| h == (view.image_count() > 0))
            && self.image.as_ref().is_none_or(|s| {
                view.history.iter().flat_map(|e| &e.images).any(|i| i.as_str().contains(s.as_str()))
            })
            && self.contains.as_ref().is_none_or(|s| view.all_text().contains(s.as_str()))
            && self
                .last_contains
                .as_ref()
                .is_none_or(|s| view.history.last().is_some_and(|e| e.text.contains(s.as_str())))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default, rename = "rule")]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockScript { rules }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }
}

pub struct MockTransport {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        MockTransport { script, calls: AtomicUsize::new(0) }
    }

    /// Requests received so far, including failed ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn first_line(s: &str) -> &str {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim()
}

fn render(template: &str, endpoint: &EndpointConfig, view: &AgentView, turn: usize) -> String {
    let opening = view.history.first().map(|e| first_line(&e.text)).unwrap_or("");
    let last = view.history.last().map(|e| first_line(&e.text)).unwrap_or("");
    template
        .replace("{turn}", &(turn + 1).to_string())
        .replace("{sample}", &view.params.sample_index.to_string())
        .replace("{endpoint}", &endpoint.name)
        .replace("{opening}", opening)
        .replace("{last}", last)
}

impl Transport for MockTransport {
    fn send(&self, endpoint: &EndpointConfig, request: &CompletionRequest) -> Result<RawReply, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let view = &request.view;
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.matches(endpoint, view))
            .ok_or_else(|| TransportFailure::Protocol(format!("no mock rule for a {:?} call on {}", view.role, endpoint.name)))?;

        match rule.error {
            Some(MockError::Transport) => return Err(TransportFailure::Transient("scripted connection failure".into())),
            Some(MockError::RateLimit) => return Err(TransportFailure::Transient("HTTP 429: scripted rate limit".into())),
            Some(MockError::Auth) => return Err(TransportFailure::Auth("HTTP 401: scripted".into())),
            Some(MockError::Protocol) => return Err(TransportFailure::Protocol("scripted malformed response".into())),
            None => {}
        }
        if rule.replies.is_empty() {
            return Err(TransportFailure::Protocol("mock rule has no replies".into()));
        }

        let turn = view.history.iter().filter(|e| e.kind != EntryKind::Own).count().saturating_sub(1);
        let pick = |list: &[String]| list.get(turn.min(list.len().saturating_sub(1))).cloned();
        let full = render(&pick(&rule.replies).unwrap_or_default(), endpoint, view, turn);
        let max = request.max_tokens as usize;
        let length_capped = count_tokens(&full) > max;
        let text = truncate_tokens(&full, max).to_string();

        let thinking = match (&request.thinking_prefill, rule.thinking_tokens) {
            (Some(_), _) => None,
            (None, Some(n)) => Some((1..=n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ")),
            (None, None) => pick(&rule.thinking).map(|t| render(&t, endpoint, view, turn)),
        };
        Ok(RawReply {
            token_count: Some(count_tokens(&text) as u32),
            text,
            thinking,
            length_capped,
            abnormal_finish: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::view::{GenerationParams, ViewEntry};

    fn view(role: ViewRole, entries: &[(EntryKind, &str)], sample: u32) -> AgentView {
        AgentView {
            role,
            system_prompt: None,
            history: entries
                .iter()
                .map(|(k, t)| ViewEntry { kind: *k, text: t.to_string(), images: vec![] })
                .collect(),
            params: GenerationParams {
                max_tokens: 100,
                temperature: 0.0,
                thinking_token_cap: 10,
                sample_index: sample,
                seed: None,
            },
        }
    }

    fn send(script: &MockScript, v: AgentView) -> Result<RawReply, TransportFailure> {
        let t = MockTransport::new(script.clone());
        t.send(&EndpointConfig::new("ep", "mock://", "m"), &CompletionRequest { view: v, max_tokens: 100, thinking_prefill: None })
    }

    #[test]
    fn replies_indexed_by_own_turns() {
        let s = MockScript::new(vec![MockRule::new(RoleMatch::Reasoner, ["first {turn}", "then {last}"])]);
        use EntryKind::*;
        assert_eq!(send(&s, view(ViewRole::Reasoner, &[(Counterpart, "x")], 0)).unwrap().text, "first 1");
        let v = view(ViewRole::Reasoner, &[(Own, "a"), (Counterpart, "b\nc"), (Own, "d"), (Counterpart, "e")], 0);
        assert_eq!(send(&s, v).unwrap().text, "then e");
    }

    #[test]
    fn first_matching_rule_wins() {
        let s = MockScript::new(vec![
            MockRule::new(RoleMatch::Any, ["special"]).contains("needle").sample(1),
            MockRule::new(RoleMatch::Any, ["plain"]),
        ]);
        let v = |sample| view(ViewRole::Single, &[(EntryKind::Injected, "hay needle")], sample);
        assert_eq!(send(&s, v(1)).unwrap().text, "special");
        assert_eq!(send(&s, v(0)).unwrap().text, "plain");
    }

    #[test]
    fn image_selectors() {
        let s = MockScript::new(vec![
            MockRule { image: Some("chart".into()), ..MockRule::new(RoleMatch::Any, ["chart"]) },
            MockRule { has_images: Some(true), ..MockRule::new(RoleMatch::Any, ["other image"]) },
            MockRule::new(RoleMatch::Any, ["text"]),
        ]);
        let with = |img: &str| {
            let mut v = view(ViewRole::Single, &[(EntryKind::Injected, "q")], 0);
            v.history[0].images = vec![crate::types::ImageRef::new(img)];
            v
        };
        assert_eq!(send(&s, with("c/chart.png")).unwrap().text, "chart");
        assert_eq!(send(&s, with("map.png")).unwrap().text, "other image");
        assert_eq!(send(&s, view(ViewRole::Single, &[(EntryKind::Injected, "q")], 0)).unwrap().text, "text");
    }

    #[test]
    fn unmatched_and_error_rules() {
        let s = MockScript::new(vec![MockRule { error: Some(MockError::Auth), ..MockRule::new(RoleMatch::Perceiver, ["x"]) }]);
        assert!(matches!(send(&s, view(ViewRole::Perceiver, &[], 0)), Err(TransportFailure::Auth(_))));
        assert!(matches!(send(&s, view(ViewRole::Reasoner, &[], 0)), Err(TransportFailure::Protocol(_))));
    }

    #[test]
    fn long_replies_are_capped() {
        let long = (0..150).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let s = MockScript::new(vec![MockRule::new(RoleMatch::Any, [long])]);
        let r = send(&s, view(ViewRole::Single, &[], 0)).unwrap();
        assert!(r.length_capped);
        assert_eq!(r.token_count, Some(100));
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [[rule]]
            role = "perceiver"
            last_contains = "final answer"
            replies = ["Answer: B"]

            [[rule]]
            role = "reasoner"
            thinking_tokens = 5000
            replies = ["ok"]
        "#;
        let s = MockScript::from_toml(text).unwrap();
        assert_eq!(s.rules.len(), 2);
        assert_eq!(MockScript::from_toml(&s.to_toml()).unwrap(), s);
        assert!(MockScript::from_toml("[[rule]]\nbogus = 1").is_err());
    }
}
