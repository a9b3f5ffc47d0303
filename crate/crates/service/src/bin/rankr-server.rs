use clap::Parser;
use std::net::SocketAddr;
use tracing_subscriber::EnvFilter;

/// Serves the rankr HTTP API.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    tokio::select! {
        r = rankr_service::serve(listener) => r,
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}
