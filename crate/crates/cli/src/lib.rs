//! Command-line front end. [`run`] parses an argument list, writes the run
//! manifest, executes one subcommand and returns the process exit status:
//! 0 on success, 1 on usage errors, 2 on data errors.

mod args;
mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command};
pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const THREADS_ENV: &str = "APERTURE_FORGE_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values.
    Usage(String),
    /// Unreadable, malformed or inconsistent inputs, or failed writes.
    Data(aperture_forge::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(aperture_forge::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<aperture_forge::Error> for CliError {
    fn from(e: aperture_forge::Error) -> Self {
        CliError::Data(e)
    }
}

/// Thread cap from the environment; `0` or unset means all cores.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}='{v}' is not a non-negative integer"))),
    }
}

/// Runs one invocation. `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("aperture-forge: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    let threads = thread_count()?;
    let start = Instant::now();
    let mut job = commands::plan(&cli.command)?;
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| job.default_manifest.clone());
    let mut manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        argv,
        parameters: serde_json::to_value(&cli.command).expect("arguments serialize"),
        inputs: std::mem::take(&mut job.inputs),
        outputs: std::mem::take(&mut job.outputs),
        seeds: std::mem::take(&mut job.seeds),
        threads,
        duration_s: None,
    };
    manifest.write(&manifest_path)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| commands::execute(&cli.command, cli.csv))?;

    manifest.duration_s = Some(start.elapsed().as_secs_f64());
    manifest.write(&manifest_path)
}

/// What a subcommand will read and write, known before it runs.
#[derive(Debug, Default)]
pub(crate) struct Job {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: std::collections::BTreeMap<String, u64>,
    pub default_manifest: PathBuf,
}
