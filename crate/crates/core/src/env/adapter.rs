//! Clients for external adapters speaking the wire protocol, over a child
//! process's stdio or over HTTP.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::action::ActionCommand;
use super::page::{ActionOutcome, Element, OutcomeStatus, Overlay, PageSnapshot, Role};
use super::protocol::{Reply, Request, PROTO_VERSION};
use super::screenshot::screenshot_ref;
use super::{EnvError, Environment};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum AdapterSpec {
    Stdio {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Http {
        url: String,
    },
}

trait Transport: Send {
    fn call(&mut self, req: &Request) -> Result<Reply, EnvError>;
    fn shutdown(&mut self) {}
}

struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Transport for StdioTransport {
    fn call(&mut self, req: &Request) -> Result<Reply, EnvError> {
        let line = serde_json::to_string(req).expect("request serializes");
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EnvError::AdapterUnavailable(e.to_string()))?;
        let mut buf = String::new();
        let n = self.stdout.read_line(&mut buf).map_err(|e| EnvError::AdapterUnavailable(e.to_string()))?;
        if n == 0 {
            return Err(EnvError::AdapterUnavailable("adapter closed its output".into()));
        }
        serde_json::from_str(&buf).map_err(|e| EnvError::ProtocolError(format!("bad reply: {e}")))
    }

    fn shutdown(&mut self) {
        let _ = self.call(&Request::Bye);
        let _ = self.child.wait();
    }
}

struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
}

impl Transport for HttpTransport {
    fn call(&mut self, req: &Request) -> Result<Reply, EnvError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(req)
            .send()
            .map_err(|e| EnvError::AdapterUnavailable(e.to_string()))?;
        let text = resp.text().map_err(|e| EnvError::AdapterUnavailable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| EnvError::ProtocolError(format!("bad reply: {e}")))
    }

    fn shutdown(&mut self) {
        let _ = self.call(&Request::Bye);
    }
}

/// Element as an external adapter may report it; most fields are optional.
#[derive(Debug, Deserialize)]
struct WireElement {
    #[serde(default, alias = "id")]
    element_id: String,
    #[serde(default)]
    role: String,
    #[serde(default, alias = "name")]
    label: String,
    #[serde(default, alias = "value")]
    text_value: String,
    #[serde(default = "yes")]
    visible: bool,
    #[serde(default = "yes")]
    enabled: bool,
    #[serde(default = "yes")]
    viewport: bool,
    #[serde(default)]
    options: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
struct WireSnapshot {
    url: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    elements: Vec<WireElement>,
    #[serde(default)]
    overlays: Vec<Overlay>,
    #[serde(default)]
    screenshot_ref: String,
    #[serde(default)]
    clock: u64,
}

fn role_of(s: &str) -> Role {
    match s.to_ascii_lowercase().as_str() {
        "button" => Role::Button,
        "link" | "a" => Role::Link,
        "textbox" | "input" | "searchbox" | "textarea" => Role::Textbox,
        "select" | "combobox" | "listbox" => Role::Select,
        "image" | "img" => Role::Image,
        _ => Role::Text,
    }
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

fn usable_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_.:-".contains(c))
}

/// Turns an adapter snapshot into a `PageSnapshot`.
///
/// Adapter ids are kept when every element has a distinct, plain id.
/// Otherwise ids are derived from role and label, numbered on repeats, so
/// the same page always yields the same ids.
pub fn normalize_snapshot(raw: Value) -> Result<PageSnapshot, EnvError> {
    let wire: WireSnapshot =
        serde_json::from_value(raw).map_err(|e| EnvError::ProtocolError(format!("bad snapshot: {e}")))?;
    let mut seen = std::collections::BTreeSet::new();
    let keep = wire.elements.iter().all(|e| usable_id(&e.element_id) && seen.insert(e.element_id.clone()));
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let elements = wire
        .elements
        .into_iter()
        .map(|w| {
            let role = role_of(&w.role);
            let element_id = if keep {
                w.element_id
            } else {
                let base = match slug(&w.label) {
                    s if s.is_empty() => role.as_str().to_string(),
                    s => format!("{}-{s}", role.as_str()),
                };
                let n = counts.entry(base.clone()).or_insert(0);
                *n += 1;
                if *n == 1 { base } else { format!("{base}-{n}") }
            };
            Element {
                element_id,
                role,
                label: w.label,
                text_value: w.text_value,
                visible: w.visible,
                enabled: w.enabled,
                viewport: w.viewport,
                options: w.options,
            }
        })
        .collect();
    let mut snap = PageSnapshot {
        url: wire.url,
        title: wire.title,
        elements,
        overlays: wire.overlays,
        screenshot_ref: wire.screenshot_ref,
        clock: wire.clock,
    };
    if snap.screenshot_ref.is_empty() {
        snap.screenshot_ref = screenshot_ref(&snap);
    }
    Ok(snap)
}

#[derive(Debug, Deserialize)]
struct WireOutcome {
    status: OutcomeStatus,
    #[serde(default)]
    message: String,
    #[serde(default)]
    extracted: Option<String>,
    after: Value,
}

pub fn normalize_outcome(raw: Value) -> Result<ActionOutcome, EnvError> {
    let wire: WireOutcome =
        serde_json::from_value(raw).map_err(|e| EnvError::ProtocolError(format!("bad outcome: {e}")))?;
    Ok(ActionOutcome {
        status: wire.status,
        message: wire.message,
        extracted: wire.extracted,
        after: normalize_snapshot(wire.after)?,
    })
}

/// An environment backed by an external adapter.
pub struct AdapterEnv {
    transport: Box<dyn Transport>,
    last: Option<PageSnapshot>,
    answer: Option<String>,
    closed: bool,
}

fn expect_ok(reply: Reply) -> Result<Reply, EnvError> {
    if reply.ok {
        return Ok(reply);
    }
    let err = reply.error.unwrap_or_else(|| super::protocol::ErrorBody { kind: "unknown".into(), message: String::new() });
    Err(match err.kind.as_str() {
        "session_closed" | "no_session" => EnvError::SessionClosed,
        "unavailable" => EnvError::AdapterUnavailable(err.message),
        _ => EnvError::ProtocolError(format!("{}: {}", err.kind, err.message)),
    })
}

impl AdapterEnv {
    pub fn connect(spec: &AdapterSpec) -> Result<Self, EnvError> {
        let transport: Box<dyn Transport> = match spec {
            AdapterSpec::Stdio { command, args } => {
                let mut child = Command::new(command)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| EnvError::AdapterUnavailable(format!("{command}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
                Box::new(StdioTransport { child, stdin, stdout })
            }
            AdapterSpec::Http { url } => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(30))
                    .build()
                    .map_err(|e| EnvError::AdapterUnavailable(e.to_string()))?;
                Box::new(HttpTransport { client, endpoint: format!("{}/v1/act", url.trim_end_matches('/')) })
            }
        };
        let mut env = AdapterEnv { transport, last: None, answer: None, closed: false };
        let hello = env.transport.call(&Request::Hello { proto: PROTO_VERSION, capabilities: vec![] })?;
        let hello = expect_ok(hello)?;
        if hello.proto != Some(PROTO_VERSION) {
            return Err(EnvError::ProtocolError(format!("adapter speaks protocol {:?}", hello.proto)));
        }
        Ok(env)
    }

    fn snapshot_reply(&mut self, req: &Request) -> Result<PageSnapshot, EnvError> {
        let reply = expect_ok(self.transport.call(req)?)?;
        let raw = reply.snapshot.ok_or_else(|| EnvError::ProtocolError("reply has no snapshot".into()))?;
        let snap = normalize_snapshot(raw)?;
        self.last = Some(snap.clone());
        Ok(snap)
    }
}

impl Environment for AdapterEnv {
    fn reset(&mut self, seed: u64) -> Result<PageSnapshot, EnvError> {
        self.answer = None;
        self.snapshot_reply(&Request::Reset { seed })
    }

    fn apply(&mut self, cmd: &ActionCommand) -> Result<ActionOutcome, EnvError> {
        let reply = expect_ok(self.transport.call(&Request::Act { cmd: cmd.clone() })?)?;
        let raw = reply.outcome.ok_or_else(|| EnvError::ProtocolError("reply has no outcome".into()))?;
        let out = normalize_outcome(raw)?;
        if let (ActionCommand::Answer { text }, true) = (cmd, out.status.is_ok()) {
            self.answer = Some(text.clone());
        }
        self.last = Some(out.after.clone());
        Ok(out)
    }

    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError> {
        self.snapshot_reply(&Request::Snapshot)
    }

    fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            self.transport.shutdown();
        }
    }

    fn submitted_answer(&self) -> Option<String> {
        self.answer.clone()
    }
}

impl Drop for AdapterEnv {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_derived_when_missing_or_repeated() {
        let raw = serde_json::json!({
            "url": "https://example.test/",
            "elements": [
                {"id": "n1", "role": "button", "label": "Search"},
                {"id": "n1", "role": "button", "label": "Search"},
                {"role": "input", "name": "To"}
            ]
        });
        let snap = normalize_snapshot(raw).unwrap();
        let ids: Vec<_> = snap.elements.iter().map(|e| e.element_id.as_str()).collect();
        assert_eq!(ids, ["button-search", "button-search-2", "textbox-to"]);
        assert_eq!(snap.screenshot_ref.len(), 64);
    }

    #[test]
    fn plain_ids_kept() {
        let raw = serde_json::json!({"url": "u", "elements": [{"element_id": "f-search", "role": "button", "label": "Search"}]});
        assert_eq!(normalize_snapshot(raw).unwrap().elements[0].element_id, "f-search");
    }

    #[test]
    fn missing_binary() {
        let spec = AdapterSpec::Stdio { command: "/nonexistent/adapter".into(), args: vec![] };
        assert!(matches!(AdapterEnv::connect(&spec), Err(EnvError::AdapterUnavailable(_))));
    }
}
