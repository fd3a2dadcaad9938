//! Command-line front end for the `edgecnn` library.

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use thiserror::Error;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<edgecnn::Error> for CliError {
    fn from(e: edgecnn::Error) -> Self {
        use edgecnn::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Schedule(_) => CliError::Usage(msg),
            E::Data { .. } | E::Image { .. } | E::Label { .. } | E::Format(_) | E::Condense(_) => CliError::Data(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

impl CliError {
    /// Prefixes the message with the input it concerns.
    pub fn about(self, input: &std::path::Path) -> Self {
        let p = input.display();
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{p}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{p}: {m}")),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Output goes to `out`, diagnostics to `err`.
pub fn run_with<I, S>(argv: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(argv) {
        Ok(c) => c,
        Err(Parse::Clap(e)) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
        Err(Parse::Config(e)) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    match commands::dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

enum Parse {
    Clap(clap::Error),
    Config(CliError),
}

fn parse(argv: Vec<OsString>) -> Result<Cli, Parse> {
    let first = Cli::command().try_get_matches_from(&argv).map_err(Parse::Clap)?;
    let Some((sub, sub_matches)) = first.subcommand() else {
        return Cli::from_arg_matches(&first).map_err(Parse::Clap);
    };
    let Some(path) = sub_matches.get_one::<std::path::PathBuf>("config") else {
        return Cli::from_arg_matches(&first).map_err(Parse::Clap);
    };
    let injected = config::flags_from_file(path, &Cli::command(), sub).map_err(Parse::Config)?;
    // file values come first so that explicit flags override them
    let pos = argv.iter().position(|a| a.to_str() == Some(sub)).unwrap_or(1);
    let mut full = argv[..=pos].to_vec();
    full.extend(injected);
    full.extend_from_slice(&argv[pos + 1..]);
    let m = Cli::command().try_get_matches_from(full).map_err(Parse::Clap)?;
    Cli::from_arg_matches(&m).map_err(Parse::Clap)
}
