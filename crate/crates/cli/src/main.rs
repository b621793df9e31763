mod args;
mod jobs;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ubs::UbsError;

use args::Cli;

fn is_usage(err: &anyhow::Error) -> bool {
    matches!(err.downcast_ref::<UbsError>(), Some(UbsError::Usage(_)))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = jobs::resolve(cli).and_then(|job| jobs::run(&job));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
