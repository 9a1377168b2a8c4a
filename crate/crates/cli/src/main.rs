use std::process::ExitCode;

use clap::Parser;
use upseg_cli::{exit_status, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    if let Err(e) = &result {
        eprintln!("upseg: {e}");
    }
    ExitCode::from(exit_status(&result))
}
