//! Evaluates the bundled dataset and sweeps the routing threshold, printing
//! the report table and the sweep CSV.
//!
//! cargo run -p hybridrag --example threshold_sweep

use std::path::{Path, PathBuf};

use hybridrag::config::Config;
use hybridrag::eval::sweep_csv;
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
    let sweep = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95];
    let (report, rows) = ws.eval(&router, &corpus.join("dataset.jsonl"), Some(&sweep))?;
    print!("{}", report.to_table());
    println!();
    print!("{}", sweep_csv(&rows.unwrap_or_default()));

    let judged = ws.judge(p.judge.as_ref(), 5)?;
    println!("\njudge mean over {} pairs: {:?}", judged.judged, judged.mean);
    Ok(())
}
