//! Embeds a handful of questions into the exact index and searches it.
//!
//! cargo run -p hybridrag --example index_search

use hybridrag::gateway::{Embedder, MockEmbedder};
use hybridrag::index::build_index;
use hybridrag::qagen::QAPair;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let questions = [
        ("When was the lighthouse built?", "In 1871."),
        ("How far is the light visible?", "Twenty nautical miles."),
        ("What is in the keeper's cottage?", "A maritime museum."),
        ("When is the museum open?", "From May to October."),
    ];
    let pairs: Vec<QAPair> = questions
        .iter()
        .enumerate()
        .map(|(i, (q, a))| QAPair {
            qa_id: format!("lighthouse:L00:N00000:Q{i:02}"),
            doc_id: "lighthouse".into(),
            node_id: "lighthouse:L00:N00000".into(),
            node_level: 0,
            question: q.to_string(),
            answer: a.to_string(),
            keywords_used: vec![],
            created_at: chrono::DateTime::UNIX_EPOCH,
        })
        .collect();
    let embedder = MockEmbedder::new(128, 1);
    let index = build_index(&pairs, &embedder, 2)?;
    println!("{} vectors of dim {} ({})", index.len(), index.dim(), index.fingerprint());

    for query in ["When was the lighthouse built?", "Is the museum open in winter?"] {
        let v = embedder.embed(&[query.to_string()])?.remove(0);
        println!("{query}");
        for hit in index.search(&v, 2)? {
            println!("  #{} {:.4} {} -> {}", hit.rank, hit.score, hit.qa_id, index.meta(&hit.qa_id).unwrap().answer);
        }
    }
    Ok(())
}
