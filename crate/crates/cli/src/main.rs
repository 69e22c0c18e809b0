use clap::Parser;
use lspd_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("lspd: {e}");
        std::process::exit(e.exit_code());
    }
}
