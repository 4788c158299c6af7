//! Stage behaviour over the bundled corpus and through the binary.

mod common;

use std::process::Command;

use hybridrag::enrich::{enrich_document, Provenance, PLACEHOLDER};
use hybridrag::gateway::{ChatProvider, MockChat, MockRule, MockScript};
use hybridrag::ingest::{ElementKind, LayoutElement, ParsedDocument};
use hybridrag::workspace::{StageOutcome, Workspace};

fn fifty_elements() -> ParsedDocument {
    let elements = (0..50u32)
        .map(|i| {
            let kind = match i % 5 {
                0 => ElementKind::Table,
                1 => ElementKind::Figure,
                _ => ElementKind::Text,
            };
            LayoutElement {
                element_id: format!("e{i:02}"),
                doc_id: "big".into(),
                page: 1 + i / 10,
                order: i,
                bbox: [10.0, 20.0 * (i % 10) as f64, 500.0, 20.0 * (i % 10) as f64 + 15.0],
                kind,
                content: format!("content of element {i:02}"),
                image_ref: (kind == ElementKind::Figure).then(|| format!("fig{i}.png")),
            }
        })
        .collect();
    ParsedDocument {
        doc_id: "big".into(),
        source_path: "big.pdf".into(),
        domain_tag: None,
        page_count: 5,
        elements,
    }
    .validated()
    .unwrap()
}

#[test]
fn failed_descriptions_become_placeholders() {
    let doc = fifty_elements();
    let chat = MockChat::new(1)
        .with_rule(MockRule::fail_on("content of element 05"))
        .with_rule(MockRule::fail_on("content of element 31"));
    let out = enrich_document(&doc, &chat, 0.0);

    assert_eq!(out.document.elements.len(), 50);
    let failed: Vec<&str> = out.failures.iter().map(|f| f.element_id.as_str()).collect();
    assert_eq!(failed, ["e05", "e31"]);
    let placeholders: Vec<&str> = out
        .document
        .elements
        .iter()
        .filter(|e| e.text == PLACEHOLDER)
        .map(|e| e.element_id.as_str())
        .collect();
    assert_eq!(placeholders, ["e05", "e31"]);

    for (src, e) in doc.elements.iter().zip(&out.document.elements) {
        assert_eq!((e.element_id.as_str(), e.order, e.kind), (src.element_id.as_str(), src.order, src.kind));
        if src.kind == ElementKind::Text {
            assert_eq!((e.text.as_str(), e.provenance), (src.content.as_str(), Provenance::Ocr));
        } else {
            assert_eq!(e.provenance, Provenance::Generated);
            assert!(!e.text.is_empty());
        }
    }
    // 20 tables and figures, each described once.
    assert_eq!((chat.usage().calls, chat.usage().failures), (20, 2));
}

#[test]
fn judge_mean_over_a_scripted_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, _) = common::build_pipeline(dir.path(), common::corpus_config());

    // CQAR always 5, answerability 3, clarity falls through to the mock's 4,
    // fluency 2 for questions whose passage tag starts with 0-7, else 4.
    let mut script = MockScript::default();
    let dim = |system: &str, contains: Option<String>, reply: &str| MockRule {
        contains,
        system_contains: Some(system.into()),
        response: Some(reply.into()),
        fail: false,
    };
    script.rules.push(dim("(CQAR)", None, "5"));
    script.rules.push(dim("Answerability", None, "Score: 3"));
    for d in "01234567".chars() {
        script.rules.push(dim("Fluency", Some(format!("Question: Regarding passage {d}")), "2"));
    }
    let judge = MockChat::new(7).with_script(script);

    let report = ws.judge(&judge, 10).unwrap();
    assert_eq!(report.judged, 10);
    assert!(report.failures.is_empty());

    let bank = ws.load_bank(false).unwrap();
    let fluency: Vec<f64> = report
        .scores
        .keys()
        .map(|id| {
            let q = &bank.qa_pairs.iter().find(|p| &p.qa_id == id).unwrap().question;
            let tag = q.strip_prefix("Regarding passage ").unwrap().chars().next().unwrap();
            if tag.to_digit(16).unwrap() < 8 { 2.0 } else { 4.0 }
        })
        .collect();
    let mean = report.mean.unwrap();
    assert_eq!((mean.cqar, mean.answerability, mean.clarity), (5.0, 3.0, 4.0));
    let want = fluency.iter().sum::<f64>() / 10.0;
    assert!((mean.fluency - want).abs() < 1e-12, "{} vs {want}", mean.fluency);
    for s in report.scores.values() {
        assert!([2.0, 4.0].contains(&s.fluency));
    }
    assert!(ws.reports_dir().join("judge.json").exists());
}

#[test]
fn eval_report_accounts_for_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let (ws, providers) = common::build_pipeline(dir.path(), common::corpus_config());
    let router = ws.router(&providers, false, false).unwrap();
    let dataset = common::corpus_dir().join("dataset.jsonl");
    let lines = std::fs::read_to_string(&dataset).unwrap().lines().filter(|l| !l.trim().is_empty()).count();

    let (report, rows) = ws.eval(&router, &dataset, None).unwrap();
    assert!(rows.is_none());
    assert_eq!(report.records.len(), lines);
    assert_eq!(report.per_domain.values().map(|d| d.count).sum::<usize>(), lines);
    assert_eq!(report.overall.count, lines);
    assert_eq!(report.overall.errors, 0);

    let f1 = 100.0 * report.records.iter().map(|r| r.f1).sum::<f64>() / lines as f64;
    assert!((report.overall.f1 - f1).abs() < 1e-9);
    let direct = report.records.iter().filter(|r| r.top_score.unwrap() as f64 + 1e-6 >= 0.9).count();
    assert!((report.overall.direct_fraction - direct as f64 / lines as f64).abs() < 1e-12);
    for (domain, stats) in &report.per_domain {
        let n = report.records.iter().filter(|r| &r.domain == domain).count();
        assert_eq!(stats.count, n);
        assert!((stats.direct_fraction + stats.generated_fraction - 1.0).abs() < 1e-12);
    }
}

#[test]
fn stages_skip_when_inputs_are_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::with_config(dir.path(), common::corpus_config()).unwrap();
    let chat = ws.providers().unwrap().chat;
    ws.ingest(&common::layout_files()).unwrap();
    assert!(matches!(ws.enrich(chat.as_ref(), false).unwrap(), StageOutcome::Built(_)));
    let calls = chat.usage().calls;
    assert_eq!(ws.enrich(chat.as_ref(), false).unwrap(), StageOutcome::UpToDate);
    assert_eq!(chat.usage().calls, calls);
    assert!(matches!(ws.enrich(chat.as_ref(), true).unwrap(), StageOutcome::Built(_)));
}

fn cli(workspace: &std::path::Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hybridrag"))
        .arg("--workspace")
        .arg(workspace)
        .arg("--config")
        .arg(common::corpus_dir().join("hybridrag.toml"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

#[test]
fn cli_reports_missing_stages_and_reruns() {
    let dir = tempfile::tempdir().unwrap();

    let out = cli(dir.path(), &["chunk"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("enrich"));

    let files: Vec<String> = common::layout_files().iter().map(|p| p.display().to_string()).collect();
    let mut ingest = vec!["ingest"];
    ingest.extend(files.iter().map(String::as_str));
    assert!(cli(dir.path(), &ingest).status.success());

    let first = cli(dir.path(), &["enrich"]);
    assert!(first.status.success());
    assert!(!String::from_utf8_lossy(&first.stdout).contains("up to date"));
    // The workspace can also come from the environment.
    let second = Command::new(env!("CARGO_BIN_EXE_hybridrag"))
        .args(["--config", common::corpus_dir().join("hybridrag.toml").to_str().unwrap(), "enrich"])
        .env("HYBRIDRAG_WORKSPACE", dir.path())
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert!(String::from_utf8_lossy(&second.stdout).contains("up to date"));

    for stage in ["chunk", "genqa", "index"] {
        let out = cli(dir.path(), &[stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cli(dir.path(), &["query", "How long is the term of the Warehouse 14 lease?"]);
    assert!(out.status.success());
    let resp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(["direct", "generated"].contains(&resp["mode"].as_str().unwrap()));
    assert_eq!(resp["threshold"], 0.9);

    let out = cli(dir.path(), &["query", "x", "--threshold", "2"]);
    assert_eq!(out.status.code(), Some(1));
}
