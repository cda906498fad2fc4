use std::process::ExitCode;

use clap::Parser;
use fkd::cli::{execute, workers_from_env, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = match workers_from_env() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("fkd: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    match execute(cli, workers) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fkd: {e}");
            ExitCode::from(2)
        }
    }
}
