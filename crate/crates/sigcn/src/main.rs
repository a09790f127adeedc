use clap::Parser;

use sigcn::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = cli::run(&cli) {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(1);
    }
}
