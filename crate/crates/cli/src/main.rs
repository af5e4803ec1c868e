use clap::Parser;
use fpg_cli::config::SEED_ENV;
use fpg_cli::Cli;

fn main() {
    let cli = Cli::parse();
    let seed = std::env::var(SEED_ENV).ok();
    if let Err(e) = fpg_cli::run(cli, seed.as_deref()) {
        if e.is_broken_pipe() {
            return;
        }
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
