//! Adapter wire protocol, version 1: one JSON object per line.
//!
//! Requests carry an `op` of `hello`, `reset`, `act`, `snapshot` or `bye`.
//! Replies are `{"ok":true,...}` with a `snapshot` or `outcome`, or
//! `{"ok":false,"error":{"kind":...,"message":...}}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::action::ActionCommand;
use super::page::{ActionOutcome, PageSnapshot};
use super::{EnvError, Environment};

pub const PROTO_VERSION: u32 = 1;

pub const CAPABILITIES: [&str; 9] = [
    "visit_url",
    "click",
    "type_text",
    "scroll",
    "select",
    "read_text",
    "web_search",
    "answer",
    "capture_state",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello {
        proto: u32,
        #[serde(default)]
        capabilities: Vec<String>,
    },
    Reset {
        seed: u64,
    },
    Act {
        cmd: ActionCommand,
    },
    Snapshot,
    Bye,
}

const OPS: [&str; 5] = ["hello", "reset", "act", "snapshot", "bye"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proto: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Reply {
    pub fn ok() -> Self {
        Reply { ok: true, ..Reply::default() }
    }

    pub fn error(kind: &str, message: impl Into<String>) -> Self {
        Reply { ok: false, error: Some(ErrorBody { kind: kind.into(), message: message.into() }), ..Reply::default() }
    }

    fn with_snapshot(snap: &PageSnapshot) -> Self {
        Reply { snapshot: Some(serde_json::to_value(snap).expect("snapshot serializes")), ..Reply::ok() }
    }

    fn with_outcome(out: &ActionOutcome) -> Self {
        Reply { outcome: Some(serde_json::to_value(out).expect("outcome serializes")), ..Reply::ok() }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

/// Classifies a raw line; errors come back as ready-made replies.
pub fn parse_request(line: &str) -> Result<Request, Reply> {
    let value: Value = serde_json::from_str(line).map_err(|e| Reply::error("malformed", e.to_string()))?;
    let op = match value.get("op") {
        Some(Value::String(op)) => op.clone(),
        Some(_) => return Err(Reply::error("malformed", "op must be a string")),
        None => return Err(Reply::error("malformed", "missing op")),
    };
    if !OPS.contains(&op.as_str()) {
        return Err(Reply::error("unsupported", format!("unknown op {op}")));
    }
    serde_json::from_value(value).map_err(|e| Reply::error("bad_request", format!("{op}: {e}")))
}

fn env_error(e: EnvError) -> Reply {
    let kind = match e {
        EnvError::AdapterUnavailable(_) => "unavailable",
        EnvError::ProtocolError(_) => "protocol",
        EnvError::SessionClosed => "session_closed",
    };
    Reply::error(kind, e.to_string())
}

/// Serves one environment over the protocol.
pub struct ProtocolServer<E: Environment> {
    env: E,
    active: bool,
    done: bool,
}

impl<E: Environment> ProtocolServer<E> {
    pub fn new(env: E) -> Self {
        ProtocolServer { env, active: false, done: false }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn handle(&mut self, req: Request) -> Reply {
        match req {
            Request::Hello { proto, .. } if proto != PROTO_VERSION => {
                Reply::error("unsupported", format!("protocol version {proto} not supported"))
            }
            Request::Hello { .. } => Reply {
                proto: Some(PROTO_VERSION),
                capabilities: Some(CAPABILITIES.iter().map(|s| s.to_string()).collect()),
                ..Reply::ok()
            },
            Request::Reset { seed } => match self.env.reset(seed) {
                Ok(snap) => {
                    self.active = true;
                    Reply::with_snapshot(&snap)
                }
                Err(e) => env_error(e),
            },
            Request::Act { .. } | Request::Snapshot if !self.active => {
                Reply::error("no_session", "reset must come first")
            }
            Request::Act { cmd } => match cmd.check() {
                Err(e) => Reply::error("bad_request", e.to_string()),
                Ok(()) => match self.env.apply(&cmd) {
                    Ok(out) => Reply::with_outcome(&out),
                    Err(e) => env_error(e),
                },
            },
            Request::Snapshot => match self.env.snapshot() {
                Ok(snap) => Reply::with_snapshot(&snap),
                Err(e) => env_error(e),
            },
            Request::Bye => {
                self.env.close();
                self.active = false;
                self.done = true;
                Reply::ok()
            }
        }
    }

    pub fn handle_line(&mut self, line: &str) -> String {
        match parse_request(line) {
            Ok(req) => self.handle(req),
            Err(reply) => reply,
        }
        .to_line()
    }

    /// Reads requests until `bye` or end of input. Blank lines are skipped.
    pub fn serve(&mut self, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
            if self.done {
                break;
            }
        }
        Ok(())
    }
}

/// Drops whitespace outside JSON string literals.
pub fn normalize_ws(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let (mut in_str, mut escaped) = (false, false);
    for c in text.chars() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
            out.push(c);
        } else if !c.is_whitespace() {
            out.push(c);
        }
    }
    out
}
