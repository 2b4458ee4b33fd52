//! `tempocoh` command-line entry point.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage, 3 I/O,
//! 4 numeric abort, 5 input mismatch.

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use error::CliError;
use manifest::RunManifest;

const THREADS_VAR: &str = "TEMPOCOH_THREADS";

fn parse(argv: &[String]) -> Result<Cli, CliError> {
    Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
        _ => CliError::Usage(e.render().to_string()),
    })
}

/// Runs one command and writes its manifest, also on failure.
fn run(argv: &[String]) -> Result<RunManifest, CliError> {
    let argv = config::resolve(argv)?;
    let cli = parse(&argv)?;
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| commands::default_manifest(&cli.command));
    let mut m = RunManifest::new(cli.command.name(), &argv);
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a, &mut m),
        Command::Train(a) => commands::train_cmd(a, &mut m),
        Command::Evaluate(a) => commands::evaluate(a, &mut m),
        Command::Verify(a) => commands::verify_cmd(a, &mut m),
        Command::Inspect(a) => commands::inspect(a, &mut m),
        Command::Replay(a) => replay(&a.manifest_path, &mut m),
    };
    if let Err(e) = &result {
        m.exit_code = e.exit_code();
        m.error = Some(e.to_string());
    }
    let written = m.write(&manifest_path);
    result?;
    written?;
    Ok(m)
}

/// Re-executes a recorded run and checks that every output is byte-identical.
fn replay(path: &std::path::Path, m: &mut RunManifest) -> Result<(), CliError> {
    m.config(&json!({ "manifest_path": path.display().to_string() }));
    let old = RunManifest::read(path)?;
    if old.command == "replay" {
        return Err(CliError::Usage("cannot replay a replay manifest".into()));
    }
    let new = match run(&old.argv) {
        Ok(new) => new,
        Err(e) if e.exit_code() == old.exit_code => {
            println!("replayed {}: failed again with exit code {} as recorded", old.command, old.exit_code);
            m.metrics = json!({ "identical": true, "exit_code": old.exit_code });
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let mut differing: Vec<String> = Vec::new();
    for (file, digest) in &old.outputs {
        if new.outputs.get(file) != Some(digest) {
            differing.push(file.clone());
        }
    }
    differing.extend(new.outputs.keys().filter(|k| !old.outputs.contains_key(*k)).cloned());
    if new.metrics != old.metrics {
        differing.push("metrics".into());
    }
    m.outputs = new.outputs.clone();
    m.metrics = json!({ "identical": differing.is_empty(), "differing": differing });
    if differing.is_empty() {
        println!("replayed {}: {} outputs identical", old.command, old.outputs.len());
        Ok(())
    } else {
        Err(CliError::Verification(format!("replay differs in {}", differing.join(", "))))
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    if let Err(e) = configure_threads().and_then(|_| run(&argv).map(|_| ())) {
        match &e {
            CliError::Usage(msg) => eprint!("{msg}{}", if msg.ends_with('\n') { "" } else { "\n" }),
            other => eprintln!("error: {other}"),
        }
        std::process::exit(e.exit_code());
    }
}
