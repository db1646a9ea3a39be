use clap::Parser;

use qjl_cli::args::Cli;
use qjl_cli::error::exit;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = qjl_cli::run(cli) {
        eprintln!("qjl: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(exit::OK);
}
