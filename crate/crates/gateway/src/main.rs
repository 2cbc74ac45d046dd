use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cis_core::Settings;
use cis_gateway::attachments::AttachmentStore;
use cis_gateway::{batch, http, repl, Engine, Gateway};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "cis", version, about = "Conversational information seeking engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run topics through the pipeline and write a run file.
    Batch {
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Interactive console.
    Repl {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// HTTP chat gateway.
    Serve {
        #[arg(long)]
        listen: SocketAddr,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_settings(config: Option<&PathBuf>) -> anyhow::Result<Settings> {
    Settings::load(config.map(PathBuf::as_path)).context("loading configuration")
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Batch { topics, corpus, out, config } => {
            let settings = load_settings(config.as_ref())?;
            let summary = batch::run_batch(&topics, &corpus, &out, settings).await?;
            eprintln!(
                "wrote {} lines for {} topics ({} turns) to {}",
                summary.lines,
                summary.topics,
                summary.turns,
                summary.out.display()
            );
        }
        Command::Repl { corpus, config } => {
            let settings = load_settings(config.as_ref())?;
            let engine = Engine::build(settings, &corpus)?;
            let conversation_id = format!("repl-{}", std::process::id());
            let stdin = std::io::stdin();
            let mut out = std::io::stdout();
            let mut err = std::io::stderr();
            repl::run_repl(&engine, &conversation_id, stdin.lock(), &mut out, &mut err).await?;
            engine.store.close();
        }
        Command::Serve { listen, corpus, config } => {
            let settings = load_settings(config.as_ref())?;
            let attachments = match &settings.attachments_dir {
                Some(dir) => AttachmentStore::on_disk(dir.clone(), settings.attachments_max_bytes)?,
                None => AttachmentStore::in_memory(settings.attachments_max_bytes),
            };
            let engine = Arc::new(Engine::build(settings, &corpus)?);
            let gateway = Gateway::new(Arc::clone(&engine), Arc::new(attachments));
            tokio::select! {
                r = http::serve(gateway, listen) => r?,
                _ = tokio::signal::ctrl_c() => {}
            }
            engine.store.close();
        }
    }
    Ok(())
}
