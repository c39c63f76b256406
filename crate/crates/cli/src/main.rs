//! `sser`: generate event data, train and quantize per-pixel recurrent
//! encoders, stream-encode event files, simulate the hardware pipeline and
//! render representations.

mod args;
mod commands;
mod config;
mod manifest;
mod render;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

/// Environment variable naming the directory relative output paths resolve to.
pub const OUT_DIR_ENV: &str = "SSER_OUT_DIR";

#[derive(Debug)]
pub enum Failure {
    Core(sser::Error),
    Usage(String),
    Config(String),
}

impl Failure {
    pub fn code(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.code(),
            Failure::Usage(_) => "E_USAGE",
            Failure::Config(_) => "E_CONFIG",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let msg = match self {
            Failure::Core(e) => e.to_string(),
            Failure::Usage(m) | Failure::Config(m) => m.clone(),
        };
        f.write_str(&msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl From<sser::Error> for Failure {
    fn from(e: sser::Error) -> Self {
        match e {
            sser::Error::Config(m) => Failure::Config(m),
            e => Failure::Core(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(sser::Error::Io(e))
    }
}

fn parse(mut argv: Vec<String>) -> Result<Option<Cli>, Failure> {
    let root = Cli::command();
    if let Some(path) = config::take_config_flag(&mut argv)? {
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Config(format!("cannot read config {path}: {e}")))?;
        config::inject(&mut argv, &config::parse_config(&text)?, &root)?;
    }
    match root.try_get_matches_from(argv) {
        Ok(m) => Cli::from_arg_matches(&m).map(Some).map_err(|e| Failure::Usage(first_line(&e))),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            Ok(None)
        }
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            Err(Failure::Usage("a subcommand is required".into()))
        }
        Err(e) => Err(Failure::Usage(first_line(&e))),
    }
}

fn first_line(e: &clap::Error) -> String {
    let text = e.to_string();
    let body: Vec<&str> = text
        .lines()
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let line = body.join(" ");
    let line = line.trim_start_matches("error: ");
    if line.is_empty() { "invalid arguments".into() } else { line.to_string() }
}

fn run(argv: Vec<String>) -> Result<(), Failure> {
    let Some(cli) = parse(argv)? else {
        return Ok(());
    };
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Quantize(a) => commands::quantize(&a),
        Command::Encode(a) => commands::encode(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Render(a) => commands::render(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {f}", f.code());
            ExitCode::from(f.exit_code())
        }
    }
}
