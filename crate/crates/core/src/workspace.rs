//! On-disk workspace and the offline pipeline stages that fill it.
//!
//! ```text
//! <root>/layout/<doc>.layout.json      ingest
//! <root>/enriched/<doc>.enriched.json  enrich
//! <root>/trees/<doc>.tree.json         chunk
//! <root>/bank.jsonl, bank.manifest.json genqa
//! <root>/bank.index                    index
//! <root>/reports/                      stage reports, eval output
//! <root>/.stamps/<stage>.json          idempotence records
//! ```
//!
//! A stage is skipped when its stamp matches the current config hash, the
//! digest of its inputs, and the digest of its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunk::{build_leaves, build_tree, ChunkError, ChunkTree, TREE_EXTENSION};
use crate::config::{Config, ConfigError, StageHashes, CONFIG_FILE};
use crate::enrich::{enrich_document, ElementFailure, EnrichedDocument, ENRICHED_EXTENSION};
use crate::eval::{self, EvalError, EvalReport, JudgeError, QAQualityScores, SweepRow};
use crate::gateway::{build_chat, build_embedder, ChatProvider, Embedder, ProviderError};
use crate::index::{build_index, IndexError, QAIndex, INDEX_FILE};
use crate::ingest::{parse_layout_file, validate_corpus, CorpusReport, IngestError, ParsedDocument, LAYOUT_EXTENSION};
use crate::qagen::{generate_bank, BuildFailure, QABank, QaGenError, StageLedger, BANK_FILE, MANIFEST_FILE};
use crate::router::{ChunkStore, Router, RouterError};

pub const LAYOUT_DIR: &str = "layout";
pub const ENRICHED_DIR: &str = "enriched";
pub const TREES_DIR: &str = "trees";
pub const REPORTS_DIR: &str = "reports";
pub const STAMPS_DIR: &str = ".stamps";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("missing {artifact}; run `hybridrag {run}` first")]
    MissingArtifact { artifact: String, run: &'static str },
    #[error("{artifact} was built under config {found}, current config is {expected}; rerun `hybridrag {run}` or pass --force")]
    ConfigHashMismatch {
        artifact: String,
        expected: String,
        found: String,
        run: &'static str,
    },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{failed} of {total} documents failed to chunk: {first}")]
    ChunkFailed { failed: usize, total: usize, first: String },
    #[error("{path}: {reason}")]
    BadArtifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    QaGen(#[from] QaGenError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl WorkspaceError {
    /// Process exit code: 3 missing artifact, 4 provider failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        let provider = |e: &ProviderError| !matches!(e, ProviderError::Config(_));
        match self {
            WorkspaceError::MissingArtifact { .. } => 3,
            WorkspaceError::Provider(e) => if provider(e) { 4 } else { 1 },
            WorkspaceError::ChunkFailed { .. } => 4,
            WorkspaceError::QaGen(QaGenError::Provider(_))
            | WorkspaceError::Index(IndexError::Provider(_))
            | WorkspaceError::Router(RouterError::Provider(_))
            | WorkspaceError::Judge(JudgeError::Provider(_)) => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<Vec<u8>, WorkspaceError> {
    std::fs::read(path).map_err(io_err(path))
}

fn read_string(path: &Path) -> Result<String, WorkspaceError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a temporary sibling so readers never see partial files.
fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), WorkspaceError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_pretty_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Sorted files in `dir` whose names end with `suffix`; empty if `dir` is absent.
fn list(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, WorkspaceError> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// SHA-256 over (file name, length, contents) of each file, in the given order.
fn digest_files(paths: &[PathBuf]) -> Result<String, WorkspaceError> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = read(p)?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_hash: String,
    pub input_digest: String,
    pub outputs: Vec<String>,
    pub output_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Built(String),
    UpToDate,
}

impl std::fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StageOutcome::Built(s) => f.write_str(s),
            StageOutcome::UpToDate => f.write_str("up to date"),
        }
    }
}

/// The providers a workspace configuration describes.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub embed: Arc<dyn Embedder>,
    pub generator: Arc<dyn ChatProvider>,
    pub judge: Arc<dyn ChatProvider>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichReport {
    pub ledger: StageLedger,
    pub failures: BTreeMap<String, Vec<ElementFailure>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub ledger: StageLedger,
    pub trees: BTreeMap<String, TreeSummary>,
    pub failures: Vec<BuildFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub leaves: usize,
    pub nodes: usize,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub judged: usize,
    pub failures: Vec<String>,
    pub mean: Option<QAQualityScores>,
    pub scores: BTreeMap<String, QAQualityScores>,
}

pub struct Workspace {
    root: PathBuf,
    config: Config,
    hashes: StageHashes,
}

impl Workspace {
    /// Uses `config_path` if given, else `<root>/hybridrag.toml` if present,
    /// else defaults; then applies `HYBRIDRAG_*` environment overrides.
    pub fn open(root: &Path, config_path: Option<&Path>) -> Result<Workspace, WorkspaceError> {
        let default_path = root.join(CONFIG_FILE);
        let config = match config_path {
            Some(p) => Config::load(p)?,
            None if default_path.exists() => Config::load(&default_path)?,
            None => Config {
                base_dir: root.to_path_buf(),
                ..Config::default()
            },
        };
        let config = config.with_env(std::env::vars())?;
        Self::with_config(root, config)
    }

    pub fn with_config(root: &Path, config: Config) -> Result<Workspace, WorkspaceError> {
        config.validate()?;
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Workspace {
            root: root.to_path_buf(),
            hashes: config.stage_hashes(),
            config,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn hashes(&self) -> &StageHashes {
        &self.hashes
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.path(REPORTS_DIR)
    }

    pub fn providers(&self) -> Result<Providers, WorkspaceError> {
        let p = &self.config.providers;
        let base = &self.config.base_dir;
        Ok(Providers {
            chat: build_chat(&p.chat, base)?,
            embed: build_embedder(&p.embed)?,
            generator: build_chat(p.generator(), base)?,
            judge: build_chat(p.judge(), base)?,
        })
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.path(STAMPS_DIR).join(format!("{stage}.json"))
    }

    fn is_fresh(&self, stage: &str, config_hash: &str, input_digest: &str) -> Result<bool, WorkspaceError> {
        let Ok(text) = std::fs::read_to_string(self.stamp_path(stage)) else {
            return Ok(false);
        };
        let Ok(stamp) = serde_json::from_str::<Stamp>(&text) else {
            return Ok(false);
        };
        if stamp.config_hash != config_hash || stamp.input_digest != input_digest {
            return Ok(false);
        }
        let outputs: Vec<PathBuf> = stamp.outputs.iter().map(|o| self.path(o)).collect();
        if outputs.iter().any(|p| !p.exists()) {
            return Ok(false);
        }
        Ok(digest_files(&outputs)? == stamp.output_digest)
    }

    fn write_stamp(&self, stage: &str, config_hash: &str, input_digest: &str, outputs: &[PathBuf]) -> Result<(), WorkspaceError> {
        let rel: Vec<String> = outputs
            .iter()
            .map(|p| p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        let stamp = Stamp {
            stage: stage.into(),
            config_hash: config_hash.into(),
            input_digest: input_digest.into(),
            outputs: rel,
            output_digest: digest_files(outputs)?,
        };
        write(&self.stamp_path(stage), to_pretty_json(&stamp))
    }

    fn require(&self, paths: Vec<PathBuf>, artifact: &str, run: &'static str) -> Result<Vec<PathBuf>, WorkspaceError> {
        if paths.is_empty() {
            return Err(WorkspaceError::MissingArtifact {
                artifact: artifact.into(),
                run,
            });
        }
        Ok(paths)
    }

    fn check_hash(&self, artifact: &Path, found: &str, expected: &str, run: &'static str, force: bool) -> Result<(), WorkspaceError> {
        if found != expected && !force {
            return Err(WorkspaceError::ConfigHashMismatch {
                artifact: artifact.strip_prefix(&self.root).unwrap_or(artifact).display().to_string(),
                expected: expected.into(),
                found: found.into(),
                run,
            });
        }
        Ok(())
    }

    /// Parses and validates layout files into `layout/`. Re-ingesting an
    /// identical document is a no-op.
    pub fn ingest(&self, files: &[PathBuf]) -> Result<StageOutcome, WorkspaceError> {
        let mut docs = Vec::new();
        for f in files {
            let doc = parse_layout_file(&read(f)?).map_err(|source| WorkspaceError::Ingest {
                path: f.clone(),
                source,
            })?;
            docs.push(doc);
        }
        let mut written = Vec::new();
        for doc in &docs {
            let path = self.path(LAYOUT_DIR).join(doc.file_name());
            let canonical = doc.to_canonical_json();
            if std::fs::read_to_string(&path).ok().as_deref() != Some(canonical.as_str()) {
                write(&path, canonical)?;
                written.push(doc.doc_id.clone());
            }
        }
        let all = self.load_layout()?;
        write(&self.reports_dir().join("corpus.json"), to_pretty_json(&validate_corpus(&all)))?;
        if written.is_empty() {
            return Ok(StageOutcome::UpToDate);
        }
        Ok(StageOutcome::Built(format!(
            "ingested {} document(s): {}",
            written.len(),
            written.join(", ")
        )))
    }

    pub fn load_layout(&self) -> Result<Vec<ParsedDocument>, WorkspaceError> {
        list(&self.path(LAYOUT_DIR), LAYOUT_EXTENSION)?
            .into_iter()
            .map(|p| {
                parse_layout_file(&read(&p)?).map_err(|source| WorkspaceError::Ingest { path: p, source })
            })
            .collect()
    }

    pub fn corpus_report(&self) -> Result<CorpusReport, WorkspaceError> {
        Ok(validate_corpus(&self.load_layout()?))
    }

    /// Describes tables and figures of every ingested document.
    pub fn enrich(&self, chat: &dyn ChatProvider, force: bool) -> Result<StageOutcome, WorkspaceError> {
        let inputs = self.require(list(&self.path(LAYOUT_DIR), LAYOUT_EXTENSION)?, "layout/*.layout.json", "ingest")?;
        let hash = &self.hashes.enrich;
        let digest = digest_files(&inputs)?;
        if !force && self.is_fresh("enrich", hash, &digest)? {
            return Ok(StageOutcome::UpToDate);
        }
        let docs = self.load_layout()?;
        let before = chat.usage();
        let start = Instant::now();
        let dir = self.path(ENRICHED_DIR);
        clear(&dir, ENRICHED_EXTENSION)?;
        let mut outputs = Vec::new();
        let mut failures = BTreeMap::new();
        let mut described = 0;
        for doc in &docs {
            let mut outcome = enrich_document(doc, chat, self.config.enrich.temperature);
            outcome.document.config_hash = hash.clone();
            described += doc.elements.iter().filter(|e| e.kind != crate::ingest::ElementKind::Text).count();
            let path = dir.join(outcome.document.file_name());
            write(&path, to_pretty_json(&outcome.document))?;
            outputs.push(path);
            if !outcome.failures.is_empty() {
                failures.insert(doc.doc_id.clone(), outcome.failures);
            }
        }
        let ledger = StageLedger::from_usage("description", ms(start), described, chat.usage().since(&before));
        let report_path = self.reports_dir().join("enrich.json");
        let failed: usize = failures.values().map(Vec::len).sum();
        write(&report_path, to_pretty_json(&EnrichReport { ledger, failures }))?;
        self.write_stamp("enrich", hash, &digest, &outputs)?;
        Ok(StageOutcome::Built(format!(
            "enriched {} document(s), {described} element(s) described, {failed} placeholder(s)",
            docs.len()
        )))
    }

    pub fn load_enriched(&self, force: bool) -> Result<Vec<EnrichedDocument>, WorkspaceError> {
        let paths = self.require(list(&self.path(ENRICHED_DIR), ENRICHED_EXTENSION)?, "enriched/*.enriched.json", "enrich")?;
        paths
            .iter()
            .map(|p| {
                let doc: EnrichedDocument = serde_json::from_slice(&read(p)?).map_err(|e| WorkspaceError::BadArtifact {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
                self.check_hash(p, &doc.config_hash, &self.hashes.enrich, "enrich", force)?;
                Ok(doc)
            })
            .collect()
    }

    /// Builds one summary tree per enriched document.
    pub fn chunk(&self, chat: &dyn ChatProvider, force: bool) -> Result<StageOutcome, WorkspaceError> {
        let inputs = self.require(list(&self.path(ENRICHED_DIR), ENRICHED_EXTENSION)?, "enriched/*.enriched.json", "enrich")?;
        let docs = self.load_enriched(force)?;
        let hash = &self.hashes.chunk;
        let digest = digest_files(&inputs)?;
        if !force && self.is_fresh("chunk", hash, &digest)? {
            return Ok(StageOutcome::UpToDate);
        }
        let c = &self.config.chunking;
        let before = chat.usage();
        let start = Instant::now();
        let results: Vec<Result<ChunkTree, ChunkError>> = docs
            .iter()
            .map(|d| build_tree(build_leaves(&d.doc_id, &d.elements, c.target_tokens)?, c.tree_params(), chat))
            .collect();
        let dir = self.path(TREES_DIR);
        clear(&dir, TREE_EXTENSION)?;
        let mut outputs = Vec::new();
        let mut trees = BTreeMap::new();
        let mut failures = Vec::new();
        let mut summaries = 0;
        for (doc, r) in docs.iter().zip(results) {
            match r {
                Ok(tree) => {
                    let path = dir.join(tree.file_name());
                    write(&path, tree.to_json(hash))?;
                    outputs.push(path);
                    let leaves = tree.leaves().count();
                    summaries += tree.nodes.len() - leaves;
                    trees.insert(
                        doc.doc_id.clone(),
                        TreeSummary {
                            leaves,
                            nodes: tree.nodes.len(),
                            height: tree.height,
                        },
                    );
                }
                Err(e) => failures.push(BuildFailure {
                    doc_id: doc.doc_id.clone(),
                    node_id: None,
                    stage: "summarization".into(),
                    error: e.to_string(),
                }),
            }
        }
        let ledger = StageLedger::from_usage("summarization", ms(start), summaries, chat.usage().since(&before));
        let report = ChunkReport { ledger, trees, failures };
        write(&self.reports_dir().join("chunk.json"), to_pretty_json(&report))?;
        if let Some(first) = report.failures.first() {
            return Err(WorkspaceError::ChunkFailed {
                failed: report.failures.len(),
                total: docs.len(),
                first: format!("{}: {}", first.doc_id, first.error),
            });
        }
        self.write_stamp("chunk", hash, &digest, &outputs)?;
        Ok(StageOutcome::Built(format!(
            "built {} tree(s), {} node(s)",
            report.trees.len(),
            report.trees.values().map(|t| t.nodes).sum::<usize>()
        )))
    }

    pub fn load_trees(&self, force: bool) -> Result<Vec<ChunkTree>, WorkspaceError> {
        let paths = self.require(list(&self.path(TREES_DIR), TREE_EXTENSION)?, "trees/*.tree.json", "chunk")?;
        paths
            .iter()
            .map(|p| {
                let (tree, found) = ChunkTree::from_json(&read_string(p)?).map_err(|e| WorkspaceError::BadArtifact {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
                self.check_hash(p, &found, &self.hashes.chunk, "chunk", force)?;
                Ok(tree)
            })
            .collect()
    }

    /// Keywords and QA pairs for every tree node; the manifest carries the
    /// per-stage cost ledger of the whole offline build.
    pub fn genqa(&self, chat: &dyn ChatProvider, force: bool) -> Result<StageOutcome, WorkspaceError> {
        let inputs = self.require(list(&self.path(TREES_DIR), TREE_EXTENSION)?, "trees/*.tree.json", "chunk")?;
        let trees = self.load_trees(force)?;
        let hash = &self.hashes.genqa;
        let digest = digest_files(&inputs)?;
        if !force && self.is_fresh("genqa", hash, &digest)? {
            return Ok(StageOutcome::UpToDate);
        }
        let kw = &self.config.keywords;
        let mut bank = generate_bank(&trees, kw.scale(), kw.temperature, &self.config.qa, chat)?;
        bank.manifest.config_hash = hash.clone();
        let mut ledger = self.upstream_ledgers();
        ledger.append(&mut bank.manifest.ledger);
        bank.manifest.ledger = ledger;
        bank.save(&self.root)?;
        self.write_stamp("genqa", hash, &digest, &[self.path(BANK_FILE), self.path(MANIFEST_FILE)])?;
        Ok(StageOutcome::Built(format!(
            "generated {} QA pair(s) from {} node(s), {} failure(s)\n{}",
            bank.qa_pairs.len(),
            bank.manifest.nodes.len(),
            bank.manifest.failures.len(),
            ledger_table(&bank.manifest.ledger)
        )))
    }

    fn upstream_ledgers(&self) -> Vec<StageLedger> {
        let enrich = std::fs::read(self.reports_dir().join("enrich.json"))
            .ok()
            .and_then(|b| serde_json::from_slice::<EnrichReport>(&b).ok())
            .map(|r| r.ledger);
        let chunk = std::fs::read(self.reports_dir().join("chunk.json"))
            .ok()
            .and_then(|b| serde_json::from_slice::<ChunkReport>(&b).ok())
            .map(|r| r.ledger);
        enrich.into_iter().chain(chunk).collect()
    }

    pub fn load_bank(&self, force: bool) -> Result<QABank, WorkspaceError> {
        let bank_path = self.path(BANK_FILE);
        if !bank_path.exists() || !self.path(MANIFEST_FILE).exists() {
            return Err(WorkspaceError::MissingArtifact {
                artifact: BANK_FILE.into(),
                run: "genqa",
            });
        }
        let bank = QABank::load(&self.root)?;
        self.check_hash(&bank_path, &bank.manifest.config_hash, &self.hashes.genqa, "genqa", force)?;
        Ok(bank)
    }

    /// Embeds every bank question into `bank.index`.
    pub fn index(&self, embedder: &dyn Embedder, batch_size: Option<usize>, force: bool) -> Result<StageOutcome, WorkspaceError> {
        let bank = self.load_bank(force)?;
        let hash = &self.hashes.index;
        let digest = digest_files(&[self.path(BANK_FILE)])?;
        if !force && self.is_fresh("index", hash, &digest)? {
            return Ok(StageOutcome::UpToDate);
        }
        let mut index = build_index(&bank.qa_pairs, embedder, batch_size.unwrap_or(self.config.index.batch_size))?;
        index.set_config_hash(hash.clone());
        let path = self.path(INDEX_FILE);
        write(&path, index.to_bytes())?;
        self.write_stamp("index", hash, &digest, std::slice::from_ref(&path))?;
        Ok(StageOutcome::Built(format!(
            "indexed {} question(s), dim {}, embedder {}",
            index.len(),
            index.dim(),
            index.fingerprint()
        )))
    }

    pub fn load_index(&self, embedder: &dyn Embedder, force_fingerprint: bool, force: bool) -> Result<QAIndex, WorkspaceError> {
        let path = self.path(INDEX_FILE);
        if !path.exists() {
            return Err(WorkspaceError::MissingArtifact {
                artifact: INDEX_FILE.into(),
                run: "index",
            });
        }
        let index = QAIndex::load(&path, Some(&embedder.fingerprint()), force_fingerprint)?;
        self.check_hash(&path, index.config_hash(), &self.hashes.index, "index", force || force_fingerprint)?;
        Ok(index)
    }

    /// Index, chunk store and providers wired into a query router.
    pub fn router(&self, providers: &Providers, force_fingerprint: bool, force: bool) -> Result<Router, WorkspaceError> {
        let index = self.load_index(providers.embed.as_ref(), force_fingerprint, force)?;
        let trees = self.load_trees(force)?;
        Ok(Router::new(
            Arc::new(index),
            Arc::new(ChunkStore::from_trees(&trees)),
            providers.embed.clone(),
            providers.generator.clone(),
            self.config.router.clone(),
            force_fingerprint,
        )?)
    }

    /// Evaluates the router on a dataset and writes `reports/eval.{json,txt}`,
    /// plus `reports/sweep.csv` when thresholds are given.
    pub fn eval(&self, router: &Router, dataset: &Path, sweep: Option<&[f64]>) -> Result<(EvalReport, Option<Vec<SweepRow>>), WorkspaceError> {
        let data = eval::load_dataset(dataset)?;
        let report = if self.config.eval.parallel {
            let mut r = eval::run_eval_parallel(&data, |q| router.answer_query(q, None))?;
            r.threshold = Some(router.config().threshold);
            r
        } else {
            eval::eval_router(&data, router, None)?
        };
        let dir = self.reports_dir();
        write(&dir.join("eval.json"), to_pretty_json(&report))?;
        write(&dir.join("eval.txt"), report.to_table())?;
        let rows = match sweep {
            Some(ts) => {
                let rows = eval::threshold_sweep(&data, router, ts)?;
                write(&dir.join("sweep.csv"), eval::sweep_csv(&rows))?;
                Some(rows)
            }
            None => None,
        };
        Ok((report, rows))
    }

    /// Judges up to `sample` QA pairs, spread evenly over the bank, against
    /// the text of the node each was generated from.
    pub fn judge(&self, judge: &dyn ChatProvider, sample: usize) -> Result<JudgeReport, WorkspaceError> {
        let bank = self.load_bank(false)?;
        let store = ChunkStore::from_trees(&self.load_trees(false)?);
        let n = bank.qa_pairs.len();
        let take = sample.min(n);
        let mut scores = BTreeMap::new();
        let mut failures = Vec::new();
        for i in 0..take {
            let qa = &bank.qa_pairs[i * n / take];
            let Some(node) = store.get(&qa.node_id) else {
                failures.push(format!("{}: node {} missing", qa.qa_id, qa.node_id));
                continue;
            };
            match eval::judge_qa_quality(qa, &node.text, judge, self.config.eval.judge_temperature) {
                Ok(s) => {
                    scores.insert(qa.qa_id.clone(), s);
                }
                Err(JudgeError::Provider(e)) => return Err(e.into()),
                Err(e) => failures.push(format!("{}: {e}", qa.qa_id)),
            }
        }
        let values: Vec<QAQualityScores> = scores.values().copied().collect();
        let report = JudgeReport {
            judged: values.len(),
            failures,
            mean: QAQualityScores::mean(&values),
            scores,
        };
        write(&self.reports_dir().join("judge.json"), to_pretty_json(&report))?;
        Ok(report)
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn clear(dir: &Path, suffix: &str) -> Result<(), WorkspaceError> {
    for p in list(dir, suffix)? {
        std::fs::remove_file(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Per-stage cost table: calls, failures, tokens, wall time.
pub fn ledger_table(ledger: &[StageLedger]) -> String {
    let mut out = format!(
        "{:<20} {:>7} {:>7} {:>9} {:>13} {:>17} {:>10}\n",
        "stage", "items", "calls", "failures", "prompt_tokens", "completion_tokens", "wall_s"
    );
    for l in ledger {
        out.push_str(&format!(
            "{:<20} {:>7} {:>7} {:>9} {:>13} {:>17} {:>10.2}\n",
            l.stage,
            l.items,
            l.calls,
            l.failures,
            l.prompt_tokens,
            l.completion_tokens,
            l.wall_ms / 1e3
        ));
    }
    out
}
