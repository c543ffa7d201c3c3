//! `serve`: the 2AFC annotation service over a MAD set.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use mad_annotate::{Session, SessionConfig};

use crate::manifest::Manifest;
use crate::report::read_madset;
use crate::settings::Settings;

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "madset.jsonl")]
    pub madset: PathBuf,
    /// Append-only choice log; existing entries are replayed on start.
    #[arg(long, default_value = "choices.jsonl")]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

pub fn open_session(args: &ServeArgs, s: &Settings) -> Result<Session> {
    let manifest = Manifest::load(&args.manifest)?;
    let mad = read_madset(&args.madset)?;
    let cfg = SessionConfig {
        seed: s.seed,
        repeats: s.repeats,
    };
    Session::open(
        mad,
        manifest.catalog.clone(),
        manifest.stores(),
        Some(manifest.corpus_root.clone()),
        &args.log,
        cfg,
    )
    .with_context(|| format!("opening session on {}", args.log.display()))
}

/// Blocks until ctrl-c. Port 0 picks a free port; the bound address is
/// printed as `listening on http://ADDR`.
pub fn cmd_serve(args: &ServeArgs, s: &Settings) -> Result<()> {
    let session = Arc::new(open_session(args, s)?);
    let summary = session.summary();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let addr = format!("{}:{}", args.host, s.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!(
            "{} trials over {} records, {} choices replayed",
            summary.trials,
            summary.records,
            summary.choices
        );
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        mad_annotate::serve(session, listener, shutdown).await?;
        Ok(())
    })
}
