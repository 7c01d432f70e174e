use std::process::ExitCode;

use clap::Parser;
use diffnet_cli::{exit_code, run, Cli};
use log::error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
