//! Model completions behind one interface. Every request names a registry
//! template; backends are remote HTTP, scripted tables or recorded cassettes.

pub mod backend;
pub mod templates;
pub mod verdict;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
pub use backend::{CassetteEntry, Recorder, Remote, RemoteConfig, Replay, Script, Scripted};
pub use verdict::{extract_fenced, parse_yes_no, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("missing template variable {0}")]
    MissingVar(String),
    #[error("template {0} does not accept images")]
    ImagesNotAccepted(String),
    #[error("model backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("cassette drift: expected digest {expected}, request has {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("no scripted reply for {0}")]
    NoScriptMatch(String),
    #[error("unparseable reply: {0:?}")]
    Unparseable(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decode {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// A screenshot passed to the model. Only the digest takes part in request
/// identity; the bytes ride along for the remote backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub digest: String,
    #[serde(skip)]
    pub png: Option<Arc<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRequest {
    pub template_name: String,
    pub rendered_text: String,
    pub images: Vec<ImageRef>,
    pub decode: Decode,
    #[serde(skip)]
    _sealed: (),
}

impl ModelRequest {
    pub fn digest(&self) -> String {
        let canon = serde_json::json!({
            "template_name": self.template_name,
            "rendered_text": self.rendered_text,
            "images": self.images.iter().map(|i| i.digest.as_str()).collect::<Vec<_>>(),
            "temperature": self.decode.temperature,
            "max_tokens": self.decode.max_tokens,
        });
        sha256_hex(canon.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, req: &ModelRequest) -> Result<String, GatewayError>;
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Gateway({:?})", self.backend.kind())
    }
}

pub type Vars = BTreeMap<String, String>;

pub fn vars(pairs: &[(&str, &str)]) -> Vars {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway { backend: Arc::new(backend) }
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Gateway { backend }
    }

    /// Scripted backend with the built-in simulator defaults.
    pub fn sim() -> Self {
        Gateway::new(Scripted::new(Script::sim_defaults()))
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn backend(&self) -> Arc<dyn Backend> {
        self.backend.clone()
    }

    pub fn request(&self, template: &str, vars: &Vars, images: Vec<ImageRef>) -> Result<ModelRequest, GatewayError> {
        let t = templates::template(template)?;
        if !images.is_empty() && !t.accepts_images {
            return Err(GatewayError::ImagesNotAccepted(template.to_string()));
        }
        Ok(ModelRequest {
            template_name: t.name.clone(),
            rendered_text: templates::render(template, vars)?,
            images,
            decode: Decode { temperature: t.temperature, max_tokens: t.max_tokens },
            _sealed: (),
        })
    }

    pub fn complete(&self, req: &ModelRequest) -> Result<ModelReply, GatewayError> {
        let start = Instant::now();
        let text = self.backend.complete(req)?;
        if text.trim().is_empty() {
            return Err(GatewayError::BackendUnavailable("empty reply".into()));
        }
        let latency_ms = match self.backend.kind() {
            BackendKind::Remote => start.elapsed().as_millis() as u64,
            _ => 0,
        };
        Ok(ModelReply { text, backend: self.backend.kind(), latency_ms })
    }

    pub fn ask(&self, template: &str, vars: &Vars, images: Vec<ImageRef>) -> Result<ModelReply, GatewayError> {
        self.complete(&self.request(template, vars, images)?)
    }
}
