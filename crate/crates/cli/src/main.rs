//! `ortholens` command-line entry point.
//!
//! Exit status: 0 on success, 1 on validation errors (including bad flags),
//! 2 on I/O errors.

mod args;
mod commands;
mod input;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ortholens::{Error, Result};

use args::{Cli, Command};
use commands::Config;

const THREADS_ENV: &str = "ORTHOLENS_THREADS";

fn thread_count(flag: Option<usize>) -> Result<usize> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!("{THREADS_ENV}=`{v}` is not a thread count"))
        })?),
        Err(_) => flag,
    };
    if requested == Some(0) {
        return Err(Error::InvalidArgument(
            "thread count must be positive".into(),
        ));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = requested {
        builder = builder.num_threads(n);
    }
    builder
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(rayon::current_num_threads())
}

fn run(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let name = cli.command.name();
    macro_rules! dispatch {
        ($f:path, $a:expr) => {
            $f(
                $a,
                &Config {
                    command: name,
                    seed: cli.seed,
                    threads,
                    args: $a,
                },
            )
        };
    }
    match &cli.command {
        Command::FitManifold(a) => dispatch!(commands::fit_manifold, a),
        Command::Debias(a) => dispatch!(commands::debias, a),
        Command::Align(a) => dispatch!(commands::align, a),
        Command::SubspaceSim(a) => dispatch!(commands::subspace_sim, a),
        Command::Probe(a) => dispatch!(commands::probe, a),
        Command::Lens(a) => dispatch!(commands::lens, a),
        Command::Chair(a) => dispatch!(commands::chair_cmd, a),
        Command::Cooccur(a) => dispatch!(commands::cooccur, a),
        Command::Sweep(a) => dispatch!(commands::sweep, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            eprint!(
                "error[cli.usage]: {}",
                text.strip_prefix("error: ").unwrap_or(&text)
            );
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
