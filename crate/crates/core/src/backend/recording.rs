//! Transport wrapper that keeps a copy of every outbound request. Used to
//! audit what each agent was actually sent.

use std::sync::Mutex;

use serde_json::Value;

use super::http::wire_request;
use super::view::ViewRole;
use super::{CompletionRequest, EndpointConfig, RawReply, Transport, TransportFailure};

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub endpoint: String,
    pub role: ViewRole,
    pub request: CompletionRequest,
    /// The JSON body as it would go over the wire, with image URLs replaced
    /// by `image:<ref>`.
    pub wire: Value,
}

impl RecordedRequest {
    /// Image references in the view plus `image_url` parts on the wire.
    pub fn image_attachments(&self) -> usize {
        let wire_parts = self.wire["messages"]
            .as_array()
            .map(|msgs| {
                msgs.iter()
                    .filter_map(|m| m["content"].as_array())
                    .flatten()
                    .filter(|p| p["type"] == "image_url")
                    .count()
            })
            .unwrap_or(0);
        self.request.view.image_count() + wire_parts
    }
}

pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<RecordedRequest>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, endpoint: &EndpointConfig, request: &CompletionRequest) -> Result<RawReply, TransportFailure> {
        let wire = wire_request(endpoint, request, &|img| Ok(format!("image:{}", img.as_str())))
            .unwrap_or(Value::Null);
        self.log.lock().unwrap().push(RecordedRequest {
            endpoint: endpoint.name.clone(),
            role: request.view.role,
            request: request.clone(),
            wire,
        });
        self.inner.send(endpoint, request)
    }
}
