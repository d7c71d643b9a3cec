use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, GatewayError, ModelRequest};

/// Scripted replies: exact digests first, then one default per template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub by_digest: BTreeMap<String, String>,
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
}

impl Script {
    pub fn sim_defaults() -> Self {
        let mut s = Script::default();
        s.defaults.insert(
            "condition_check_qa".into(),
            "Yes. Nothing on the page contradicts the condition.".into(),
        );
        s
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct Scripted {
    script: Script,
}

impl Scripted {
    pub fn new(script: Script) -> Self {
        Scripted { script }
    }
}

impl Backend for Scripted {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, req: &ModelRequest) -> Result<String, GatewayError> {
        self.script
            .by_digest
            .get(&req.digest())
            .or_else(|| self.script.defaults.get(&req.template_name))
            .cloned()
            .ok_or_else(|| GatewayError::NoScriptMatch(req.template_name.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub reply: String,
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Io(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| GatewayError::Io(format!("cassette line: {e}"))))
        .collect()
}

/// Replays a cassette strictly in recorded order.
#[derive(Debug)]
pub struct Replay {
    entries: Vec<CassetteEntry>,
    pos: Mutex<usize>,
}

impl Replay {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        Replay { entries, pos: Mutex::new(0) }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Replay::new(read_cassette(path)?))
    }
}

impl Backend for Replay {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, req: &ModelRequest) -> Result<String, GatewayError> {
        let mut pos = self.pos.lock().expect("replay lock");
        let actual = req.digest();
        let Some(entry) = self.entries.get(*pos) else {
            return Err(GatewayError::DigestMismatch { expected: "end of cassette".into(), actual });
        };
        if entry.digest != actual {
            return Err(GatewayError::DigestMismatch { expected: entry.digest.clone(), actual });
        }
        *pos += 1;
        Ok(entry.reply.clone())
    }
}

/// Passes requests through and appends each exchange as a cassette line.
pub struct Recorder {
    inner: Arc<dyn Backend>,
    out: Mutex<Box<dyn Write + Send>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn Backend>, out: Box<dyn Write + Send>) -> Self {
        Recorder { inner, out: Mutex::new(out) }
    }
}

impl Backend for Recorder {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(&self, req: &ModelRequest) -> Result<String, GatewayError> {
        let mut out = self.out.lock().expect("recorder lock");
        let reply = self.inner.complete(req)?;
        let line = serde_json::to_string(&CassetteEntry { digest: req.digest(), reply: reply.clone() })
            .expect("cassette entry serializes");
        writeln!(out, "{line}").map_err(|e| GatewayError::Io(e.to_string()))?;
        Ok(reply)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub api_base: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn from_env() -> Option<Self> {
        Some(RemoteConfig {
            api_base: std::env::var("MODEL_API_BASE").ok()?,
            api_key: std::env::var("MODEL_API_KEY").unwrap_or_default(),
            model: std::env::var("MODEL_NAME").unwrap_or_else(|_| "gpt-4o".into()),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
        })
    }
}

/// Chat-completions client with an in-flight cap.
pub struct Remote {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
    slots: (Mutex<usize>, Condvar),
}

impl Remote {
    pub fn new(cfg: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        Ok(Remote { cfg, client, slots: (Mutex::new(0), Condvar::new()) })
    }

    fn body(&self, req: &ModelRequest) -> serde_json::Value {
        let mut content = vec![serde_json::json!({"type": "text", "text": req.rendered_text})];
        for img in &req.images {
            if let Some(png) = &img.png {
                let b64 = base64::engine::general_purpose::STANDARD.encode(png.as_slice());
                content.push(serde_json::json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{b64}")}
                }));
            }
        }
        serde_json::json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": req.decode.temperature,
            "max_tokens": req.decode.max_tokens,
        })
    }
}

impl Backend for Remote {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn complete(&self, req: &ModelRequest) -> Result<String, GatewayError> {
        let (lock, cv) = &self.slots;
        {
            let mut n = lock.lock().expect("slot lock");
            while *n >= self.cfg.max_in_flight.max(1) {
                n = cv.wait(n).expect("slot wait");
            }
            *n += 1;
        }
        let result = (|| {
            let url = format!("{}/chat/completions", self.cfg.api_base.trim_end_matches('/'));
            let resp = self
                .client
                .post(url)
                .bearer_auth(&self.cfg.api_key)
                .json(&self.body(req))
                .send()
                .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(GatewayError::BackendUnavailable(format!("HTTP {}", resp.status())));
            }
            let v: serde_json::Value = resp.json().map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
            v["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| GatewayError::BackendUnavailable("reply has no message content".into()))
        })();
        *lock.lock().expect("slot lock") -= 1;
        cv.notify_one();
        result
    }
}
