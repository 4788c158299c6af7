//! Packs a document into leaves and summarizes them into a tree.
//!
//! cargo run -p hybridrag --example chunk_tree

use std::path::Path;

use hybridrag::chunk::{build_leaves, build_tree, TreeParams};
use hybridrag::enrich::enrich_document;
use hybridrag::gateway::MockChat;
use hybridrag::ingest::parse_layout_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus/orchard-annual.layout.json");
    let chat = MockChat::new(7);
    let doc = enrich_document(&parse_layout_file(&std::fs::read(path)?)?, &chat, 0.0).document;

    let leaves = build_leaves(&doc.doc_id, &doc.elements, 40)?;
    let tree = build_tree(leaves, TreeParams { fan_out: 3, ..TreeParams::default() }, &chat)?;
    tree.validate()?;
    println!("{}: {} nodes, height {}", tree.doc_id, tree.nodes.len(), tree.height);
    for node in tree.top_down() {
        let indent = "  ".repeat((tree.height - node.level) as usize);
        let preview: String = node.text.chars().take(60).collect();
        println!("{indent}{} ({} tokens) {preview}", node.node_id, node.token_count);
    }
    Ok(())
}
