use clap::Parser;

fn main() {
    let cli = recon::cli::Cli::parse();
    if let Err(err) = recon::cli::run(cli) {
        eprintln!("recon: {err}");
        std::process::exit(err.exit_code());
    }
}
