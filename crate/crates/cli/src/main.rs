use std::process::ExitCode;

use clap::Parser;
use tipforce_cli::args::Cli;
use tipforce_cli::pipeline::StageError;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match tipforce_cli::commands::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<StageError>() {
                Some(se) => eprintln!("error: stage {} failed: {:#}", se.stage, se.source),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
