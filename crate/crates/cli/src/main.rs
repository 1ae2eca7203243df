use std::process::ExitCode;

use clap::Parser;
use ct_kit_cli::{cmd_bench, cmd_detect, cmd_generate, cmd_validate_codebook, Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Detect(a) => cmd_detect(a).map(|_| ExitCode::SUCCESS),
        Command::Generate(a) => cmd_generate(a).map(|_| ExitCode::SUCCESS),
        Command::Bench(a) => cmd_bench(a).map(|_| ExitCode::SUCCESS),
        Command::ValidateCodebook(a) => cmd_validate_codebook(a).map(|out| {
            if out.report.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("codebook validation failed");
                ExitCode::from(1)
            }
        }),
        Command::Template => {
            print!("{}", ct_kit::canonical_template().to_toml());
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
