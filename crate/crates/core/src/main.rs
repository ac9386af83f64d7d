use std::process::ExitCode;

use clap::Parser;
use slotfill::commands::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("slotfill: finished with errors; see manifest.tsv");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("slotfill: {e:#}");
            ExitCode::FAILURE
        }
    }
}
