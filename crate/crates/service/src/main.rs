use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use fabula_service::{serve, ServiceConfig};

/// Session server for interactive and step-by-step scenario runs.
#[derive(Parser)]
#[command(name = "fabula-service", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Directory scenario-relative paths resolve against.
    #[arg(long, default_value = ".")]
    base_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    capacity: usize,
    /// Seconds a human turn waits before the actor waits instead.
    #[arg(long, default_value_t = 300)]
    human_timeout: u64,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::init();
    let args = Args::parse();
    let config = ServiceConfig {
        capacity: args.capacity,
        human_timeout: Duration::from_secs(args.human_timeout),
        base_dir: args.base_dir,
        ..ServiceConfig::default()
    };
    let listener = tokio::net::TcpListener::bind(&args.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve(listener, config).await
}
