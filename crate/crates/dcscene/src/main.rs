use std::process::ExitCode;

use clap::Parser;

use dcscene::cli::{self, Cli};
use dcscene::{exit, Error};

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result: anyhow::Result<()> = cli::run(&cli).map_err(anyhow::Error::from);
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("dc-scene: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(exit::IO, Error::exit_code);
            ExitCode::from(code)
        }
    }
}
