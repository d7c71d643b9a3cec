//! Golden wire transcripts for the SimWeb adapter, over stdio and HTTP.

use std::io::Write;
use std::process::{Command, Stdio};

use guardweave_cli::adapter::{http_router, sim_server};
use guardweave_core::env::action::ActionCommand;
use guardweave_core::env::adapter::AdapterSpec;
use guardweave_core::env::protocol::normalize_ws;
use guardweave_core::env::sim::{FaultMode, SimWeb};
use guardweave_core::env::{EnvSpec, Environment};

const SESSION: &str = include_str!("fixtures/protocol/skyfare_session.txt");

/// (request, expected reply) pairs from a `> ` / `< ` transcript.
fn transcript(text: &str) -> Vec<(String, String)> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    lines
        .chunks(2)
        .map(|pair| {
            let req = pair[0].strip_prefix("> ").expect("request line");
            let rep = pair[1].strip_prefix("< ").expect("reply line");
            (req.to_string(), rep.to_string())
        })
        .collect()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_guardweave")
}

#[test]
fn stdio_transcript() {
    let pairs = transcript(SESSION);
    let mut child = Command::new(bin())
        .args(["adapter", "--site", "skyfare.sim", "--no-faults"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        for (req, _) in &pairs {
            writeln!(stdin, "{req}").unwrap();
        }
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let got: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(str::to_string).collect();
    assert_eq!(got.len(), pairs.len());
    for ((req, want), got) in pairs.iter().zip(&got) {
        assert_eq!(normalize_ws(got), normalize_ws(want), "reply to {req}");
    }
}

#[test]
fn http_transcript() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let router = http_router(sim_server("skyfare.sim", false).unwrap());
    rt.spawn(async move { axum::serve(listener, router).await.unwrap() });
    let client = reqwest::blocking::Client::new();
    for (req, want) in transcript(SESSION) {
        let got = client.post(format!("http://{addr}/v1/act")).body(req.clone()).send().unwrap().text().unwrap();
        assert_eq!(normalize_ws(&got), normalize_ws(&want), "reply to {req}");
    }
}

/// The engine's adapter client, talking to the adapter binary, sees what a
/// direct SimWeb session sees.
#[test]
fn client_over_stdio_matches_direct() {
    let spec = EnvSpec {
        adapter: Some(AdapterSpec::Stdio {
            command: bin().into(),
            args: vec!["adapter".into(), "--site".into(), "skyfare.sim".into(), "--no-faults".into()],
        }),
        ..EnvSpec::fault_free()
    };
    let mut remote = spec.open("skyfare.sim").unwrap();
    let mut direct = SimWeb::new(EnvSpec::fault_free().sim_site("skyfare.sim").unwrap(), FaultMode::Enabled);
    assert_eq!(remote.reset(4).unwrap(), direct.reset(4).unwrap());
    let cmds = [
        ActionCommand::VisitUrl { url: "https://skyfare.sim/".into() },
        ActionCommand::Click { target: "one-way".into() },
        ActionCommand::TypeText { target: "From".into(), text: "Boston".into() },
        ActionCommand::Click { target: "Missing".into() },
    ];
    for c in &cmds {
        assert_eq!(remote.apply(c).unwrap(), direct.apply(c).unwrap(), "{c:?}");
    }
    remote.close();
}
