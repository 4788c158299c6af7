//! Builds the bundled corpus, then routes a stored question (answered
//! straight from the bank) and an unseen one (answered by generation).
//!
//! cargo run -p hybridrag --example route_queries

use std::path::{Path, PathBuf};

use hybridrag::config::Config;
use hybridrag::workspace::Workspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus");
    let dir = tempfile::tempdir()?;
    let ws = Workspace::with_config(dir.path(), Config::load(&corpus.join("hybridrag.toml"))?)?;
    let p = ws.providers()?;
    let layouts: Vec<PathBuf> = ["harbor-lease", "orchard-annual", "tide-physics"]
        .iter()
        .map(|n| corpus.join(format!("{n}.layout.json")))
        .collect();
    ws.ingest(&layouts)?;
    ws.enrich(p.chat.as_ref(), false)?;
    ws.chunk(p.chat.as_ref(), false)?;
    ws.genqa(p.chat.as_ref(), false)?;
    ws.index(p.embed.as_ref(), None, false)?;

    let router = ws.router(&p, false, false)?;
    let stored = ws.load_bank(false)?.qa_pairs[0].question.clone();
    for (query, threshold) in [
        (stored.as_str(), None),
        ("What happens to the rent after the first year?", None),
        ("What happens to the rent after the first year?", Some(0.0)),
    ] {
        let a = router.answer_query(query, threshold)?;
        println!("{query}");
        println!("  {:?} at score {:.4} in {:.2} ms", a.mode, a.top_score, a.latency_ms);
        println!("  sources {:?}", a.source_node_ids);
        println!("  {}", a.text);
    }
    Ok(())
}
