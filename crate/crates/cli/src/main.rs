//! `synsel` command-line tool.
//!
//! Exit status: 0 on success, 2 for usage, I/O, parse and data errors, 3 when
//! training does not converge or inverse-HVP solves fail.

mod args;
mod commands;
mod run;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use run::RunDir;

fn exit_code(err: &anyhow::Error) -> u8 {
    use synsel::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. } | Error::SolverFailure { .. } | Error::ContractionViolated { .. }) => 3,
        _ => 2,
    }
}

/// Runs a command that writes into `out`, then records the manifest.
fn in_run_dir(out: &std::path::Path, name: &'static str, body: impl FnOnce(&mut RunDir) -> Result<()>) -> Result<()> {
    let mut run = RunDir::create(out, name)?;
    let result = body(&mut run);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed: {e:#}"),
    };
    run.finish(&status)?;
    result
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => in_run_dir(&a.out, "ingest", |r| commands::ingest(a, r)),
        Command::Train(a) => in_run_dir(&a.out, "train", |r| commands::train(a, r)),
        Command::Score(a) => in_run_dir(&a.out, "score", |r| commands::score(a, r)),
        Command::Select(a) => in_run_dir(&a.out, "select", |r| commands::select_cmd(a, r)),
        Command::Relabel(a) => in_run_dir(&a.out, "relabel", |r| commands::relabel_cmd(a, r)),
        Command::Pipeline(a) => in_run_dir(&a.out, "pipeline", |r| commands::pipeline(a, r)),
        Command::Eval(a) => commands::eval(a),
        Command::Trace(a) => commands::trace(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GDAUG_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
