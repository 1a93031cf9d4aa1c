use std::process::ExitCode;

use clap::Parser;
use coopemit::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(o) => {
            if !cli.quiet {
                println!("{}", o.summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("coopemit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
