//! Runs every offline stage over the bundled corpus into a workspace and
//! prints the cost ledger. Pass a directory to keep the artifacts.
//!
//! cargo run -p hybridrag --example full_pipeline [-- <workspace-dir>]

use std::path::{Path, PathBuf};

use hybridrag::config::Config;
use hybridrag::workspace::{ledger_table, Workspace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus");
    let tmp = tempfile::tempdir()?;
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());

    let ws = Workspace::with_config(&root, Config::load(&corpus.join("hybridrag.toml"))?)?;
    let p = ws.providers()?;
    let mut layouts: Vec<PathBuf> = std::fs::read_dir(&corpus)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    layouts.retain(|p| p.to_string_lossy().ends_with(".layout.json"));
    layouts.sort();

    println!("ingest:  {}", ws.ingest(&layouts)?);
    println!("enrich:  {}", ws.enrich(p.chat.as_ref(), false)?);
    println!("chunk:   {}", ws.chunk(p.chat.as_ref(), false)?);
    println!("genqa:   {}", ws.genqa(p.chat.as_ref(), false)?);
    println!("index:   {}", ws.index(p.embed.as_ref(), None, false)?);
    // A second run finds every stage fresh.
    println!("rerun:   {}", ws.enrich(p.chat.as_ref(), false)?);

    let bank = ws.load_bank(false)?;
    println!("\n{} QA pairs in {}", bank.qa_pairs.len(), root.display());
    print!("{}", ledger_table(&bank.manifest.ledger));
    Ok(())
}
