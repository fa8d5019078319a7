use clap::Parser;

fn main() {
    let cli = brx::cli::Cli::parse();
    if let Err(e) = brx::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
