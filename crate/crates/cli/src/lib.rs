//! Command-line front end and HTTP query service for `fieldfuse`.

pub mod commands;
pub mod error;
pub mod server;

use clap::Parser;

pub use commands::{Cli, Command};
pub use error::CliError;

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Usage errors print help and return 1.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                error::EXIT_INVALID
            } else {
                0
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `fieldfuse --help` for usage");
            }
            e.exit_code()
        }
    }
}
