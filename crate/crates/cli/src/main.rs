use clap::Parser;
use tracing_subscriber::EnvFilter;
use wayfinder_cli::{run, Cli};

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("{e}");
        std::process::exit(e.exit);
    }
}
