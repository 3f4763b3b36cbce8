//! Chat-completions over HTTP: a role-tagged message array posted as JSON,
//! images inlined as base64 data URIs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::Engine;
use serde_json::{json, Value};

use super::view::EntryKind;
use super::{CompletionRequest, EndpointConfig, RawReply, Transport, TransportFailure};
use crate::types::ImageRef;

pub struct HttpTransport {
    image_root: Option<PathBuf>,
    agents: Mutex<HashMap<String, ureq::Agent>>,
}

impl HttpTransport {
    /// Relative image references are resolved against `image_root`.
    pub fn new(image_root: Option<PathBuf>) -> Self {
        HttpTransport { image_root, agents: Mutex::new(HashMap::new()) }
    }

    fn agent(&self, endpoint: &EndpointConfig) -> ureq::Agent {
        let mut agents = self.agents.lock().unwrap();
        agents
            .entry(endpoint.name.clone())
            .or_insert_with(|| {
                ureq::Agent::config_builder()
                    .timeout_global(Some(endpoint.request_timeout))
                    .http_status_as_error(false)
                    .build()
                    .into()
            })
            .clone()
    }

    fn data_uri(&self, image: &ImageRef) -> Result<String, String> {
        let s = image.as_str();
        if s.starts_with("data:") || s.starts_with("http://") || s.starts_with("https://") {
            return Ok(s.to_string());
        }
        let path = match &self.image_root {
            Some(root) if Path::new(s).is_relative() => root.join(s),
            _ => PathBuf::from(s),
        };
        let bytes = std::fs::read(&path).map_err(|e| format!("reading image {}: {e}", path.display()))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{};base64,{b64}", mime_for(&path)))
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/png",
    }
}

/// Text placed at the start of a continuation after a forced thinking exit.
pub fn thinking_prefill_text(thinking: &str, sentinel: &str) -> String {
    match sentinel.strip_prefix("</") {
        Some(rest) => format!("<{rest}\n{thinking}\n{sentinel}\n\n"),
        None => format!("{thinking}\n{sentinel}\n\n"),
    }
}

/// Builds the JSON request body. `image_url` turns an image reference into
/// the URL placed in an `image_url` content part.
pub fn wire_request(
    endpoint: &EndpointConfig,
    request: &CompletionRequest,
    image_url: &dyn Fn(&ImageRef) -> Result<String, String>,
) -> Result<Value, String> {
    let view = &request.view;
    let mut messages = Vec::new();
    if let Some(system) = &view.system_prompt {
        messages.push(json!({ "role": "system", "content": system }));
    }
    for entry in &view.history {
        let role = match entry.kind {
            EntryKind::Own => "assistant",
            EntryKind::Counterpart | EntryKind::Injected => "user",
        };
        let content = if entry.images.is_empty() {
            Value::String(entry.text.clone())
        } else {
            let mut parts = Vec::with_capacity(entry.images.len() + 1);
            for img in &entry.images {
                parts.push(json!({ "type": "image_url", "image_url": { "url": image_url(img)? } }));
            }
            parts.push(json!({ "type": "text", "text": entry.text }));
            Value::Array(parts)
        };
        messages.push(json!({ "role": role, "content": content }));
    }

    let mut body = json!({
        "model": endpoint.model_id,
        "messages": messages,
        "max_tokens": request.max_tokens,
        "temperature": view.params.temperature,
    });
    if view.params.temperature > 0.0 {
        if let Some(seed) = view.params.seed {
            body["seed"] = json!(seed.wrapping_add(view.params.sample_index as u64));
        }
    }
    if let Some(thinking) = &request.thinking_prefill {
        let prefill = thinking_prefill_text(thinking, &endpoint.thinking_end);
        body["messages"].as_array_mut().unwrap().push(json!({ "role": "assistant", "content": prefill }));
        body["continue_final_message"] = json!(true);
        body["add_generation_prompt"] = json!(false);
    }
    Ok(body)
}

/// Parses a chat-completions response body.
pub fn parse_response(body: &str, sentinel: &str) -> Result<RawReply, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| "response has no choices".to_string())?;
    let message = choice.get("message").ok_or_else(|| "choice has no message".to_string())?;
    let content = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(format!("unexpected content type: {other}")),
    };
    let reasoning = ["reasoning_content", "reasoning"]
        .iter()
        .find_map(|k| message.get(*k).and_then(Value::as_str))
        .map(str::to_string);

    let (thinking, text) = match reasoning {
        Some(r) => (Some(r), content),
        None => match content.find(sentinel) {
            Some(pos) => {
                let open = sentinel.strip_prefix("</").map(|rest| format!("<{rest}"));
                let head = content[..pos].trim();
                let head = open.as_deref().and_then(|o| head.strip_prefix(o)).unwrap_or(head);
                (Some(head.trim().to_string()), content[pos + sentinel.len()..].trim_start().to_string())
            }
            None => (None, content),
        },
    };
    let finish = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("stop");
    let token_count = v
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64)
        .map(|n| n.min(u32::MAX as u64) as u32);
    Ok(RawReply {
        text,
        thinking,
        token_count,
        length_capped: finish == "length",
        abnormal_finish: !matches!(finish, "stop" | "length" | "eos"),
    })
}

impl Transport for HttpTransport {
    fn send(&self, endpoint: &EndpointConfig, request: &CompletionRequest) -> Result<RawReply, TransportFailure> {
        let body = wire_request(endpoint, request, &|img| self.data_uri(img)).map_err(TransportFailure::Protocol)?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut req = self.agent(endpoint).post(&url).header("Content-Type", "application/json");
        if let Some(var) = &endpoint.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| TransportFailure::Auth(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportFailure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => parse_response(&text, &endpoint.thinking_end).map_err(TransportFailure::Protocol),
            401 | 403 => Err(TransportFailure::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            408 | 409 | 429 | 500..=599 => Err(TransportFailure::Transient(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(TransportFailure::Protocol(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}
