//! Serves the HTTP API over a freshly built workspace on an ephemeral port,
//! issues a few requests against it, then stops.
//!
//! cargo run -p hybridrag --example serve_api

use std::path::{Path, PathBuf};

use hybridrag::config::Config;
use hybridrag::service::{self, AppState, Loaded};
use hybridrag::workspace::Workspace;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus");
    let dir = tempfile::tempdir()?;
    let config = Config::load(&corpus.join("hybridrag.toml"))?;
    let ws = Workspace::with_config(dir.path(), config.clone())?;
    let layouts: Vec<PathBuf> = ["harbor-lease", "orchard-annual", "tide-physics"]
        .iter()
        .map(|n| corpus.join(format!("{n}.layout.json")))
        .collect();
    // The blocking providers and client stay off the async worker threads.
    let ws = tokio::task::spawn_blocking(move || -> Result<Workspace, String> {
        let p = ws.providers().map_err(|e| e.to_string())?;
        ws.ingest(&layouts).map_err(|e| e.to_string())?;
        ws.enrich(p.chat.as_ref(), false).map_err(|e| e.to_string())?;
        ws.chunk(p.chat.as_ref(), false).map_err(|e| e.to_string())?;
        ws.genqa(p.chat.as_ref(), false).map_err(|e| e.to_string())?;
        ws.index(p.embed.as_ref(), None, false).map_err(|e| e.to_string())?;
        Ok(ws)
    })
    .await??;

    let loader = Box::new(move || {
        let providers = ws.providers().map_err(|e| e.to_string())?;
        let router = ws.router(&providers, false, false).map_err(|e| e.to_string())?;
        let bank_size = ws.load_bank(false).map_err(|e| e.to_string())?.qa_pairs.len();
        Ok(Loaded { router, bank_size })
    });
    let state = AppState::new(loader, config.router.clone(), None);
    state.reload()?;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let server = tokio::spawn(service::serve_on(listener, state, std::future::pending()));

    tokio::task::spawn_blocking(move || -> Result<(), reqwest::Error> {
        let client = reqwest::blocking::Client::new();
        println!("GET /v1/health -> {}", client.get(format!("{base}/v1/health")).send()?.text()?);
        for query in ["How long is the term of the Warehouse 14 lease?", "Who painted the lighthouse?"] {
            let body: serde_json::Value = client
                .post(format!("{base}/v1/query"))
                .json(&json!({ "query": query }))
                .send()?
                .json()?;
            println!("POST /v1/query {query:?} -> {} {:.4}: {}", body["mode"], body["top_score"], body["answer"]);
        }
        Ok(())
    })
    .await??;

    server.abort();
    Ok(())
}
