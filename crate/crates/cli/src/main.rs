use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use biaslab::runner::{self, Command, Format, RunOptions};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "biaslab",
    version,
    about = "Selection-bias sweeps and stop-level search simulations"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// JSON config, or a manifest.json from an earlier run
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for stochastic runs; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; outputs do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Sweep the bias parameter over a population
    Sweep,
    /// Run the stop-level search simulation
    Sqf,
    /// Check every worked example against its oracle
    OracleCheck,
    /// Write a synthetic stop-level dataset
    Generate,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    #[value(name = "csv")]
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

fn run(cli: Cli) -> Result<i32> {
    let command = match cli.cmd {
        Cmd::Sweep => Command::Sweep,
        Cmd::Sqf => Command::Sqf,
        Cmd::OracleCheck => Command::OracleCheck,
        Cmd::Generate => Command::Generate,
    };
    let opts = RunOptions {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        format: cli.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::CsvSvg => Format::CsvSvg,
        }),
    };
    let report = runner::run(command, &opts)?;
    for line in &report.lines {
        println!("{line}");
    }
    if let Some(out) = opts
        .out
        .as_ref()
        .or(Some(&PathBuf::from(runner::DEFAULT_OUT)))
    {
        if report.manifest.is_some() {
            println!("manifest: {}", out.join(runner::MANIFEST_FILE).display());
        }
    }
    Ok(report.status.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
