//! Extracts level-scaled keywords for each node of a small tree and
//! generates one QA pair per keyword.
//!
//! cargo run -p hybridrag --example keywords_and_qa

use hybridrag::chunk::{build_leaves, build_tree, TreeParams};
use hybridrag::enrich::{EnrichedElement, Provenance};
use hybridrag::gateway::MockChat;
use hybridrag::ingest::ElementKind;
use hybridrag::keywords::{extract_keywords, KeywordScale};
use hybridrag::qagen::{generate_qa_for_node, QaGenConfig};

const PARAGRAPHS: [&str; 4] = [
    "The lighthouse on Gull Point was built in 1871 and automated in 1969.",
    "Its lens is a second-order Fresnel lens visible for twenty nautical miles.",
    "A keeper's cottage next to the tower now houses a small maritime museum.",
    "The museum is open from May to October and admission is free for children.",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let elements: Vec<EnrichedElement> = PARAGRAPHS
        .iter()
        .enumerate()
        .map(|(i, t)| EnrichedElement {
            element_id: format!("p{i}"),
            page: 1,
            order: i as u32,
            bbox: [0.0, 0.0, 1.0, 1.0],
            kind: ElementKind::Text,
            text: t.to_string(),
            image_ref: None,
            provenance: Provenance::Ocr,
        })
        .collect();
    let chat = MockChat::new(3);
    let leaves = build_leaves("lighthouse", &elements, 15)?;
    let tree = build_tree(leaves, TreeParams { fan_out: 2, ..TreeParams::default() }, &chat)?;

    let scale = KeywordScale::default();
    let cfg = QaGenConfig::default();
    let mut prior = Vec::new();
    for node in tree.top_down() {
        let kw = extract_keywords(node, scale.count(node.level), &chat, 0.0)?;
        println!("{} level {} keywords {:?}", node.node_id, node.level, kw.keywords);
        let qa = generate_qa_for_node(node, &kw, &prior, &cfg, &chat)?;
        for p in &qa.pairs {
            println!("  Q: {}\n  A: {}", p.question, p.answer);
            prior.push(p.question.clone());
        }
    }
    Ok(())
}
