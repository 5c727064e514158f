use clap::error::ErrorKind as ClapKind;
use clap::Parser;

use cirt_cli::CliError;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match cirt_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::config(first.trim_start_matches("error: "));
            eprintln!("{}", err.to_line());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = cirt_cli::run(&cli) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.exit_code());
    }
}
