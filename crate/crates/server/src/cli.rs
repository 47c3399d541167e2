//! Command-line entry points. Exit codes: 0 ok, 2 configuration or input
//! error, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use deckflow_core::adapters::{load_adapter_config, AdapterSet};
use deckflow_core::assets::DEFAULT_MAX_ASSET_BYTES;
use deckflow_core::replay::{replay, ReplayError};
use deckflow_core::templates::Templates;
use deckflow_core::{Canvas, CardId, DocId, IdGen};
use thiserror::Error;

use crate::gateway::{self, Gateway, GatewayConfig};
use crate::storage::{DataDir, StorageError};
use crate::worker::{self, parse_capabilities, WorkerOptions};

#[derive(Debug, Parser)]
#[command(name = "deckflow", version, about = "Generative canvas server, worker and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Doc,
    Clip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway and scheduler.
    Serve {
        #[arg(long, default_value_t = 8640)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value = "deckflow-data")]
        data_dir: PathBuf,
        /// Adapter config (JSON). Defaults to the built-in mocks.
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// Directory of prompt template overrides.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        max_tokens: Option<u32>,
        /// Also run jobs in-process on the server's adapters.
        #[arg(long)]
        inline_worker: bool,
    },
    /// Run a worker that pulls jobs from a server.
    Worker {
        #[arg(long, default_value = "ws://127.0.0.1:8640")]
        connect: String,
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// Comma-separated job types; defaults to everything the adapters provide.
        #[arg(long)]
        capabilities: Option<String>,
        #[arg(long, default_value_t = 5000)]
        heartbeat_ms: u64,
    },
    /// Re-execute a recorded session against the mock adapters and print
    /// the document hash.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Write the final document here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a stored document as a document file or clipboard text.
    Export {
        #[arg(long, default_value = "deckflow-data")]
        data_dir: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long, value_enum, default_value_t = ExportFormat::Doc)]
        format: ExportFormat,
        /// Entities to include in a clipboard export; all by default.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn adapters_from(path: Option<&Path>) -> Result<AdapterSet, CliError> {
    match path {
        Some(p) => load_adapter_config(p).map_err(config),
        None => Ok(AdapterSet::walkthrough()),
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(runtime)
        }
    }
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)
}

async fn terminated() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}

/// Replay a log file and return the final document hash.
pub fn replay_file(log: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let text = std::fs::read_to_string(log).map_err(|e| config(format!("{}: {e}", log.display())))?;
    let outcome = replay(&text).map_err(|e| match e {
        ReplayError::LogFormat { .. } => config(e),
        other => runtime(other),
    })?;
    if let Some(p) = out {
        std::fs::write(p, outcome.document.to_json()).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(outcome.hash)
}

/// Render a stored document in the requested format.
pub fn export(data_dir: &Path, doc: &str, format: ExportFormat, ids: &[String]) -> Result<String, CliError> {
    let doc_id = DocId::new(doc);
    if !doc_id.is_valid() {
        return Err(config(format!("invalid document id {doc:?}")));
    }
    let data = DataDir::open(data_dir, DEFAULT_MAX_ASSET_BYTES).map_err(config)?;
    let document = data.docs.load(&doc_id).map_err(|e| match e {
        StorageError::NotFound(_) => runtime(format!("document not found: {doc_id}")),
        other => runtime(other),
    })?;
    match format {
        ExportFormat::Doc => Ok(document.to_json()),
        ExportFormat::Clip => {
            let selection: Vec<CardId> = if ids.is_empty() {
                document
                    .data_cards
                    .keys()
                    .chain(document.action_cards.keys())
                    .chain(document.clusters.keys())
                    .copied()
                    .collect()
            } else {
                ids.iter()
                    .map(|s| s.parse().map_err(|_| config(format!("invalid card id {s:?}"))))
                    .collect::<Result<_, _>>()?
            };
            let canvas = Canvas::from_document(document, IdGen::system());
            canvas.serialize_selection(&selection, &data.assets).map_err(runtime)
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve {
            port,
            bind,
            data_dir,
            adapters,
            templates,
            max_tokens,
            inline_worker,
        } => {
            let mut cfg = GatewayConfig {
                adapters: adapters_from(adapters.as_deref())?,
                inline_worker,
                ..GatewayConfig::default()
            };
            if let Some(dir) = templates {
                cfg.templates = Templates::load_dir(&dir).map_err(config)?;
            }
            if let Some(m) = max_tokens {
                if m == 0 {
                    return Err(config("--max-tokens must be positive"));
                }
                cfg.max_tokens = m;
            }
            let cap = cfg.asset_cap;
            let data = DataDir::open(&data_dir, cap).map_err(|e| config(format!("{}: {e}", data_dir.display())))?;
            let rt = tokio_runtime()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await.map_err(|e| {
                    if e.kind() == std::io::ErrorKind::AddrInUse {
                        runtime(format!("port {port} is in use"))
                    } else {
                        runtime(format!("{bind}:{port}: {e}"))
                    }
                })?;
                let gw = Gateway::new(cfg, data);
                let handle = gateway::spawn(gw, listener, cap).map_err(runtime)?;
                tracing::info!("listening on {}", handle.addr);
                println!("listening on {}", handle.addr);
                terminated().await;
                tracing::info!("shutting down");
                handle.shutdown().await.map_err(runtime)
            })
        }
        Command::Worker {
            connect,
            adapters,
            capabilities,
            heartbeat_ms,
        } => {
            let adapters = adapters_from(adapters.as_deref())?;
            let caps = match capabilities {
                Some(list) => parse_capabilities(&list).map_err(config)?,
                None => WorkerOptions::all_capabilities(&adapters),
            };
            let mut opts = WorkerOptions::new(connect, adapters, caps);
            opts.heartbeat = Duration::from_millis(heartbeat_ms.max(1));
            opts.validate().map_err(config)?;
            tokio_runtime()?.block_on(worker::run(opts, terminated())).map_err(runtime)
        }
        Command::Replay { log, out } => {
            let hash = replay_file(&log, out.as_deref())?;
            write_out(None, &hash)
        }
        Command::Export {
            data_dir,
            doc,
            format,
            ids,
            out,
        } => {
            let text = export(&data_dir, &doc, format, &ids)?;
            write_out(out.as_deref(), &text)
        }
    }
}
