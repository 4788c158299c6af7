use clap::Parser;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("HYBRIDRAG_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let cli = hybridrag::cli::Cli::parse();
    if let Err(e) = hybridrag::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
