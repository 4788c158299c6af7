//! Describes the tables and figures of one document with the mock chat
//! provider; one scripted failure shows the placeholder path.
//!
//! cargo run -p hybridrag --example enrich_elements

use std::path::Path;

use hybridrag::enrich::enrich_document;
use hybridrag::gateway::{MockChat, MockRule};
use hybridrag::ingest::{parse_layout_file, ElementKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus/harbor-lease.layout.json");
    let doc = parse_layout_file(&std::fs::read(path)?)?;
    let first_figure = doc.elements.iter().find(|e| e.kind != ElementKind::Text).map(|e| e.content.clone());

    let mut chat = MockChat::new(7);
    if let Some(content) = first_figure.filter(|c| !c.trim().is_empty()) {
        chat = chat.with_rule(MockRule::fail_on(content.trim()));
    }
    let out = enrich_document(&doc, &chat, 0.0);
    for e in out.document.elements.iter().filter(|e| e.kind != ElementKind::Text) {
        println!("{} [{}] {}", e.element_id, e.kind, e.text);
    }
    for f in &out.failures {
        println!("failed: {} ({})", f.element_id, f.error);
    }
    Ok(())
}
