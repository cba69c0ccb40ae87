//! JSON-over-HTTP client for a remote embedding service.
//!
//! `GET  {endpoint}/models` lists the served models.
//! `POST {endpoint}/embed` takes one image and returns one aggregated vector
//! per requested layer. Pixels travel as base64 of the raw `R x R x 3`
//! 8-bit RGB buffer, without any model-specific normalization (the service
//! applies each checkpoint's own preprocessing). Failures come back as
//! `{"code": ..., "message": ...}` with a non-2xx status.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Aggregation, ImageEmbedder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: String,
    /// Number of transformer blocks L.
    pub depth: usize,
    pub width: usize,
    /// Square input resolution R.
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelList {
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
    /// Base64 (standard alphabet, padded) of `width * height * 3` bytes.
    pub pixel_bytes: String,
}

impl ImagePayload {
    pub fn from_rgb(pixels: &[u8], resolution: usize) -> Self {
        Self {
            width: resolution,
            height: resolution,
            pixel_bytes: base64::engine::general_purpose::STANDARD.encode(pixels),
        }
    }

    pub fn decode(&self) -> Result<Vec<u8>> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.pixel_bytes)
            .map_err(|e| Error::InvalidArgument(format!("pixel_bytes is not valid base64: {e}")))?;
        if bytes.len() != self.width * self.height * 3 {
            return Err(Error::Shape(format!(
                "pixel buffer has {} bytes, expected {}",
                bytes.len(),
                self.width * self.height * 3
            )));
        }
        Ok(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model_id: String,
    pub layer_indices: Vec<usize>,
    pub aggregation: Aggregation,
    pub image: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model_id: String,
    pub depth: usize,
    pub width: usize,
    /// One vector per entry of `layer_indices`, same order.
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl EmbedResponse {
    /// Checks the response against the request and the advertised model.
    pub fn validate(&self, request: &EmbedRequest, entry: &ModelEntry) -> Result<()> {
        let bad = |msg: String| Error::Backend {
            endpoint: String::new(),
            code: "invalid_response".into(),
            message: msg,
        };
        if self.model_id != request.model_id {
            return Err(bad(format!(
                "response for model `{}`, requested `{}`",
                self.model_id, request.model_id
            )));
        }
        if self.depth != entry.depth || self.width != entry.width {
            return Err(bad(format!(
                "response reports depth {} width {}, model list says {} / {}",
                self.depth, self.width, entry.depth, entry.width
            )));
        }
        if self.vectors.len() != request.layer_indices.len() {
            return Err(bad(format!(
                "{} vectors for {} requested layers",
                self.vectors.len(),
                request.layer_indices.len()
            )));
        }
        if let Some(v) = self.vectors.iter().find(|v| v.len() != self.width) {
            return Err(bad(format!("vector of length {}, width is {}", v.len(), self.width)));
        }
        if self.vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite values in response".into()));
        }
        Ok(())
    }
}

/// Remote backend bound to one model of one service.
#[derive(Debug)]
pub struct ServiceEmbedder {
    endpoint: String,
    entry: ModelEntry,
    agent: ureq::Agent,
    retries: usize,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

impl ServiceEmbedder {
    /// Queries the model list and binds to `model_id`.
    pub fn connect(endpoint: &str, model_id: &str) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_owned();
        let agent = agent(Duration::from_secs(120));
        let models = list_models_with(&agent, &endpoint)?;
        let entry = models
            .models
            .into_iter()
            .find(|m| m.model_id == model_id)
            .ok_or_else(|| Error::Backend {
                endpoint: endpoint.clone(),
                code: "unknown_model".into(),
                message: format!("service does not serve `{model_id}`"),
            })?;
        Ok(Self {
            endpoint,
            entry,
            agent,
            retries: 2,
        })
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn entry(&self) -> &ModelEntry {
        &self.entry
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn request(
        &self,
        pixels: &[u8],
        resolution: usize,
        layers: &[usize],
        aggregation: Aggregation,
    ) -> EmbedRequest {
        EmbedRequest {
            model_id: self.entry.model_id.clone(),
            layer_indices: layers.to_vec(),
            aggregation,
            image: ImagePayload::from_rgb(pixels, resolution),
        }
    }

    fn post_once(&self, req: &EmbedRequest) -> std::result::Result<EmbedResponse, (bool, Error)> {
        let url = format!("{}/embed", self.endpoint);
        let resp = self
            .agent
            .post(&url)
            .send_json(req)
            .map_err(|e| (true, transport_error(&self.endpoint, e)))?;
        let status = resp.status().as_u16();
        let mut body = resp.into_body();
        if !(200..300).contains(&status) {
            let text = body.read_to_string().unwrap_or_default();
            return Err((status >= 500, structured_error(&self.endpoint, status, &text)));
        }
        let parsed: EmbedResponse = body
            .read_json()
            .map_err(|e| (false, transport_error(&self.endpoint, e)))?;
        parsed.validate(req, &self.entry).map_err(|e| {
            (
                false,
                match e {
                    Error::Backend { code, message, .. } => Error::Backend {
                        endpoint: self.endpoint.clone(),
                        code,
                        message,
                    },
                    other => other,
                },
            )
        })?;
        Ok(parsed)
    }
}

fn transport_error(endpoint: &str, e: ureq::Error) -> Error {
    Error::Backend {
        endpoint: endpoint.to_owned(),
        code: "transport".into(),
        message: e.to_string(),
    }
}

fn structured_error(endpoint: &str, status: u16, text: &str) -> Error {
    match serde_json::from_str::<ErrorBody>(text) {
        Ok(body) => Error::Backend {
            endpoint: endpoint.to_owned(),
            code: body.code,
            message: body.message,
        },
        Err(_) => Error::Backend {
            endpoint: endpoint.to_owned(),
            code: format!("http_{status}"),
            message: text.chars().take(200).collect(),
        },
    }
}

fn list_models_with(agent: &ureq::Agent, endpoint: &str) -> Result<ModelList> {
    let resp = agent
        .get(format!("{endpoint}/models"))
        .call()
        .map_err(|e| transport_error(endpoint, e))?;
    let status = resp.status().as_u16();
    let mut body = resp.into_body();
    if !(200..300).contains(&status) {
        let text = body.read_to_string().unwrap_or_default();
        return Err(structured_error(endpoint, status, &text));
    }
    body.read_json().map_err(|e| transport_error(endpoint, e))
}

pub fn list_models(endpoint: &str) -> Result<ModelList> {
    let endpoint = endpoint.trim_end_matches('/');
    list_models_with(&agent(Duration::from_secs(30)), endpoint)
}

impl ImageEmbedder for ServiceEmbedder {
    fn model_id(&self) -> &str {
        &self.entry.model_id
    }

    fn depth(&self) -> usize {
        self.entry.depth
    }

    fn width(&self) -> usize {
        self.entry.width
    }

    fn input_resolution(&self) -> Option<usize> {
        Some(self.entry.resolution)
    }

    fn embed_image(
        &self,
        pixels: &[u8],
        resolution: usize,
        layers: &[usize],
        aggregation: Aggregation,
    ) -> Result<Vec<Vec<f32>>> {
        let req = self.request(pixels, resolution, layers, aggregation);
        let mut attempt = 0;
        loop {
            match self.post_once(&req) {
                Ok(resp) => return Ok(resp.vectors),
                Err((true, _)) if attempt < self.retries => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(100 * attempt as u64));
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_round_trip() {
        let px: Vec<u8> = (0..16 * 16 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let p = ImagePayload::from_rgb(&px, 16);
        assert_eq!(p.decode().unwrap(), px);
        let short = ImagePayload {
            width: 16,
            height: 16,
            pixel_bytes: base64::engine::general_purpose::STANDARD.encode([1, 2, 3]),
        };
        assert!(short.decode().is_err());
    }

    #[test]
    fn response_validation() {
        let entry = ModelEntry {
            model_id: "m".into(),
            depth: 2,
            width: 3,
            resolution: 16,
            checkpoint: None,
        };
        let req = EmbedRequest {
            model_id: "m".into(),
            layer_indices: vec![0, 2],
            aggregation: Aggregation::MeanAll,
            image: ImagePayload::from_rgb(&[0; 16 * 16 * 3], 16),
        };
        let mut resp = EmbedResponse {
            model_id: "m".into(),
            depth: 2,
            width: 3,
            vectors: vec![vec![0.0; 3], vec![1.0; 3]],
        };
        assert!(resp.validate(&req, &entry).is_ok());
        resp.vectors.pop();
        assert!(resp.validate(&req, &entry).is_err());
    }

    #[test]
    fn unreachable_service_is_a_backend_error() {
        // port 9 (discard) on localhost is closed in the sandbox
        let err = ServiceEmbedder::connect("http://127.0.0.1:9", "m").unwrap_err();
        match err {
            Error::Backend { endpoint, code, .. } => {
                assert_eq!(endpoint, "http://127.0.0.1:9");
                assert_eq!(code, "transport");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
