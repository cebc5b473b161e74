use clap::Parser;

fn main() {
    let cli = retrace_service::cli::Cli::parse();
    if let Err(e) = retrace_service::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
