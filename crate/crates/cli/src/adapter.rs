//! SimWeb served over the adapter wire protocol, on stdio or HTTP.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::Router;
use guardweave_core::env::protocol::ProtocolServer;
use guardweave_core::env::sim::{FaultMode, SimWeb};
use guardweave_core::env::EnvSpec;

pub fn sim_server(site: &str, faults: bool) -> anyhow::Result<ProtocolServer<SimWeb>> {
    let spec = if faults { EnvSpec::default() } else { EnvSpec::fault_free() };
    let site = spec.sim_site(site)?;
    Ok(ProtocolServer::new(SimWeb::new(site, FaultMode::Enabled)))
}

pub fn serve_stdio(site: &str, faults: bool) -> anyhow::Result<()> {
    let mut server = sim_server(site, faults)?;
    let stdin = std::io::stdin();
    server.serve(stdin.lock(), std::io::stdout().lock())?;
    Ok(())
}

type Shared = Arc<Mutex<ProtocolServer<SimWeb>>>;

async fn act(State(server): State<Shared>, body: String) -> impl IntoResponse {
    let reply = server.lock().expect("adapter lock").handle_line(body.trim());
    ([(header::CONTENT_TYPE, "application/json")], reply)
}

/// One session shared by all requests; each POST carries one request line.
pub fn http_router(server: ProtocolServer<SimWeb>) -> Router {
    Router::new().route("/v1/act", post(act)).with_state(Arc::new(Mutex::new(server)))
}

pub async fn serve_http(site: &str, faults: bool, addr: SocketAddr) -> anyhow::Result<()> {
    let router = http_router(sim_server(site, faults)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("adapter listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router).await?;
    Ok(())
}
