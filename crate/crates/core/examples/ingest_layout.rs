//! Parses the bundled layout files and prints corpus statistics.
//!
//! cargo run -p hybridrag --example ingest_layout

use std::path::Path;

use hybridrag::ingest::{parse_layout_file, validate_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus");
    let mut docs = Vec::new();
    for name in ["harbor-lease", "orchard-annual", "tide-physics"] {
        let bytes = std::fs::read(corpus.join(format!("{name}.layout.json")))?;
        let doc = parse_layout_file(&bytes)?;
        println!("{:<16} {} page(s), {} element(s)", doc.doc_id, doc.page_count, doc.elements.len());
        docs.push(doc);
    }
    let report = validate_corpus(&docs);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
