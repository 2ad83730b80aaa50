use std::io;
use std::process::ExitCode;

use hatdfed::cli;

fn main() -> ExitCode {
    let parsed = match cli::parse_args(std::env::args_os(), &mut io::stdout(), &mut io::stderr()) {
        Ok(c) => c,
        Err(code) => return ExitCode::from(code as u8),
    };
    let level = match parsed.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = cli::execute(parsed.command, &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
