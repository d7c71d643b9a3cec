use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use guardweave_core::gateway::backend::read_cassette;
use guardweave_core::gateway::templates;
use guardweave_core::gateway::{
    vars, BackendKind, Gateway, GatewayError, ImageRef, Recorder, Remote, RemoteConfig, Replay, Script, Scripted,
};

fn judge_vars(task: &str) -> guardweave_core::gateway::Vars {
    vars(&[("task", task), ("answer", "$412")])
}

fn scripted() -> Gateway {
    let mut script = Script::default();
    script.defaults.insert("judge".into(), "Yes. Fare shown.".into());
    Gateway::new(Scripted::new(script))
}

#[test]
fn scripted_prefers_exact_digest() {
    let base = scripted();
    let req = base.request("judge", &judge_vars("find a fare"), vec![]).unwrap();
    let mut script = Script::default();
    script.defaults.insert("judge".into(), "Yes.".into());
    script.by_digest.insert(req.digest(), "No. Wrong city.".into());
    let gw = Gateway::new(Scripted::new(script));
    assert_eq!(gw.complete(&req).unwrap().text, "No. Wrong city.");
    assert_eq!(gw.ask("judge", &judge_vars("other"), vec![]).unwrap().text, "Yes.");
    let t = templates::template("plan_learning").unwrap();
    let all = t.required_vars.iter().map(|v| (v.clone(), "x".to_string())).collect();
    assert!(matches!(gw.ask("plan_learning", &all, vec![]), Err(GatewayError::NoScriptMatch(_))));
}

#[test]
fn recorded_cassette_replays_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("judge.jsonl");
    let file = std::fs::File::create(&path).unwrap();
    let rec = Gateway::new(Recorder::new(scripted().backend(), Box::new(file)));
    let tasks = ["a", "b", "c"];
    let live: Vec<String> = tasks.iter().map(|t| rec.ask("judge", &judge_vars(t), vec![]).unwrap().text).collect();
    drop(rec);
    assert_eq!(read_cassette(&path).unwrap().len(), 3);

    let replay = Gateway::new(Replay::open(&path).unwrap());
    assert_eq!(replay.kind(), BackendKind::Replay);
    let again: Vec<String> = tasks.iter().map(|t| replay.ask("judge", &judge_vars(t), vec![]).unwrap().text).collect();
    assert_eq!(again, live);
    assert!(matches!(replay.ask("judge", &judge_vars("d"), vec![]), Err(GatewayError::DigestMismatch { .. })));

    let drift = Gateway::new(Replay::open(&path).unwrap());
    let err = drift.ask("judge", &judge_vars("b"), vec![]).unwrap_err();
    assert!(matches!(err, GatewayError::DigestMismatch { .. }), "{err}");
}

/// One-shot HTTP server; hands back the request body it saw.
fn stub(status: u16, body: &'static str) -> (String, Arc<Mutex<Option<serde_json::Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(None));
    let out = seen.clone();
    std::thread::spawn(move || {
        let (mut sock, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(sock.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if line == "\r\n" {
                break;
            }
        }
        let mut buf = vec![0; len];
        reader.read_exact(&mut buf).unwrap();
        *out.lock().unwrap() = serde_json::from_slice(&buf).ok();
        let reply = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        sock.write_all(reply.as_bytes()).unwrap();
    });
    (format!("http://{addr}/v1"), seen)
}

fn remote(api_base: String) -> Gateway {
    let cfg = RemoteConfig { api_base, api_key: "k".into(), model: "m-1".into(), timeout: Duration::from_secs(5), max_in_flight: 2 };
    Gateway::new(Remote::new(cfg).unwrap())
}

#[test]
fn remote_posts_chat_completions() {
    let (base, seen) = stub(200, r#"{"choices":[{"message":{"role":"assistant","content":"Yes. Looks right."}}]}"#);
    let gw = remote(base);
    let img = ImageRef { digest: "d".into(), png: Some(Arc::new(vec![137, 80, 78, 71])) };
    let reply = gw.ask("judge", &judge_vars("find a fare"), vec![img]).unwrap();
    assert_eq!(reply.text, "Yes. Looks right.");
    assert_eq!(reply.backend, BackendKind::Remote);
    let body = seen.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "m-1");
    let content = body["messages"][0]["content"].as_array().unwrap();
    assert!(content[0]["text"].as_str().unwrap().contains("find a fare"));
    assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
}

#[test]
fn remote_failures_are_unavailable() {
    let (base, _) = stub(500, "{}");
    assert!(matches!(remote(base).ask("judge", &judge_vars("t"), vec![]), Err(GatewayError::BackendUnavailable(_))));
    let (base, _) = stub(200, r#"{"choices":[]}"#);
    assert!(matches!(remote(base).ask("judge", &judge_vars("t"), vec![]), Err(GatewayError::BackendUnavailable(_))));
    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    assert!(matches!(remote(format!("http://{closed}")).ask("judge", &judge_vars("t"), vec![]), Err(GatewayError::BackendUnavailable(_))));
}
