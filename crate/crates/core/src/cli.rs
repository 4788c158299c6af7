//! Command-line front end over a [`Workspace`].

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::service::{self, AppState, Loaded};
use crate::workspace::{Workspace, WorkspaceError};

#[derive(Debug, Parser)]
#[command(name = "hybridrag", version, about = "QA-bank routed question answering over documents")]
pub struct Cli {
    /// Workspace directory holding all pipeline artifacts.
    #[arg(long, short = 'w', global = true, default_value = ".", env = crate::config::WORKSPACE_ENV)]
    pub workspace: PathBuf,
    /// Config file; defaults to <workspace>/hybridrag.toml when present.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    /// Rebuild even if up to date, and accept artifacts built under another config.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate layout files into the workspace.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Describe tables and figures with the chat provider.
    Enrich,
    /// Build summary trees.
    Chunk,
    /// Extract keywords and generate the QA bank.
    Genqa,
    /// Embed bank questions into the search index.
    Index {
        #[arg(long)]
        batch_size: Option<usize>,
        /// Accept an index built by a different embedder.
        #[arg(long)]
        force_fingerprint: bool,
    },
    /// Answer one query and print the result as JSON.
    Query {
        text: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        force_fingerprint: bool,
    },
    /// Evaluate against a JSONL dataset of {query, answer, domain}.
    Eval {
        dataset: PathBuf,
        /// Comma-separated thresholds, e.g. 0.5,0.7,0.9.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        sweep: Option<Vec<f64>>,
        /// Also judge this many bank QA pairs with the judge provider.
        #[arg(long)]
        judge: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long)]
        force_fingerprint: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Workspace(e) => e.exit_code(),
            CliError::Other(_) => 1,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ws = Workspace::open(&cli.workspace, cli.config.as_deref())?;
    let force = cli.force;
    match cli.command {
        Command::Ingest { files } => emit_line(ws.ingest(&files)?),
        Command::Enrich => emit_line(ws.enrich(ws.providers()?.chat.as_ref(), force)?),
        Command::Chunk => emit_line(ws.chunk(ws.providers()?.chat.as_ref(), force)?),
        Command::Genqa => emit_line(ws.genqa(ws.providers()?.chat.as_ref(), force)?),
        Command::Index {
            batch_size,
            force_fingerprint,
        } => emit_line(ws.index(ws.providers()?.embed.as_ref(), batch_size, force || force_fingerprint)?),
        Command::Query {
            text,
            threshold,
            force_fingerprint,
        } => {
            let providers = ws.providers()?;
            let router = ws.router(&providers, force_fingerprint, force)?;
            let used = threshold.unwrap_or(router.config().threshold);
            let answer = router.answer_query(&text, threshold).map_err(WorkspaceError::from)?;
            let resp = service::QueryResponse::from_answer(answer, used, &router);
            emit_line(serde_json::to_string_pretty(&resp).expect("serializable"));
        }
        Command::Eval { dataset, sweep, judge } => {
            let providers = ws.providers()?;
            let router = ws.router(&providers, false, force)?;
            let (report, rows) = ws.eval(&router, &dataset, sweep.as_deref())?;
            emit(report.to_table());
            if let Some(rows) = rows {
                emit(crate::eval::sweep_csv(&rows));
            }
            if let Some(n) = judge {
                let j = ws.judge(providers.judge.as_ref(), n)?;
                emit_line(serde_json::to_string_pretty(&j.mean).expect("serializable"));
            }
            emit_line(format_args!("reports written to {}", ws.reports_dir().display()));
        }
        Command::Serve {
            addr,
            force_fingerprint,
        } => serve(ws, addr, force_fingerprint, force)?,
    }
    Ok(())
}

fn emit_line(s: impl std::fmt::Display) {
    emit(format_args!("{s}\n"));
}

/// Writes to stdout; a closed pipe (`hybridrag query ... | head`) ends the
/// process quietly instead of panicking.
fn emit(s: impl std::fmt::Display) {
    use std::io::Write;
    if let Err(e) = write!(std::io::stdout().lock(), "{s}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        tracing::error!(error = %e, "writing to stdout");
    }
}

fn serve(ws: Workspace, addr: Option<SocketAddr>, force_fingerprint: bool, force: bool) -> Result<(), CliError> {
    let cfg = ws.config().clone();
    let addr = match addr {
        Some(a) => a,
        None => cfg
            .service
            .addr
            .parse()
            .map_err(|e| CliError::Other(format!("service.addr {:?}: {e}", cfg.service.addr)))?,
    };
    let ui_dir = cfg.service.ui_dir.as_deref().map(|d| cfg.resolve(d));
    let loader = Box::new(move || {
        let providers = ws.providers().map_err(|e| e.to_string())?;
        let router = ws.router(&providers, force_fingerprint, force).map_err(|e| e.to_string())?;
        let bank_size = ws.load_bank(force).map(|b| b.qa_pairs.len()).unwrap_or(router.index().len());
        Ok(Loaded { router, bank_size })
    });
    let state = AppState::new(loader, cfg.router.clone(), ui_dir);
    if let Err(e) = state.reload() {
        tracing::warn!(error = %e, "starting without an index; POST /v1/reload once artifacts exist");
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    rt.block_on(service::serve(addr, state))
        .map_err(|e| CliError::Other(format!("serving on {addr}: {e}")))
}
