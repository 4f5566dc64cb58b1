use std::process::ExitCode;

use clap::Parser;
use sde_lab_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDE_LAB_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if let Some(line) = summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sde-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
