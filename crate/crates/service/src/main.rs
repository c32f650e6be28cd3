use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use wikisurvey_service::{Service, ServiceConfig};

/// Serve pairwise wiki surveys over HTTP.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML configuration file. `WIKISURVEY_*` environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let config = ServiceConfig::load(args.config.as_deref())?;
    let addr = config.addr();
    let service = Service::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, service.router()).await?;
    Ok(())
}
