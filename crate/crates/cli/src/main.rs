//! `multifreq` command-line driver.

mod commands;
mod config;
mod sink;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::{parse_config, RunConfig};
use sink::{Format, Sink};

const AFTER_HELP: &str = "Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.\n\
Errors are written to standard error as one JSON object per line.\n\
All physical quantities in the config are in units of the fundamental frequency.";

#[derive(Parser)]
#[command(name = "multifreq", version, about = "Two-level system in a commensurate multi-frequency quantized field", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output tables and plots.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for parallel scans (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also render SVG line plots next to the tables.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Shell distribution gamma_N^2 of a coherent product state (the shell-occupation histogram).
    Gamma,
    /// Dressed energies against spin detuning (the avoided-crossing spectrum); optional crossing table.
    Spectrum {
        /// Also write the shell basis used for the scan.
        #[arg(long)]
        dump_basis: bool,
    },
    /// Effective two-level model at resonance q: shifts, coupling and excitation spectrum (the multi-photon line shapes).
    Effective,
    /// Fock and shell population inversion traces with their L2 discrepancy (the collapse-and-revival panels).
    Evolve,
    /// L2 discrepancy over a two-parameter grid with its contour (the region map).
    Scan,
    /// Degenerate Fock-basis levels against shell doublets (the level-assignment comparison).
    Pathology,
    /// Run the acceptance suite and print one pass/fail line per criterion.
    Selftest,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(CliError::Config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config(vec![config::ConfigError { path: "--threads".into(), message: "must be >= 1".into() }]));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(std::io::Error::other)?;
    }
    let cfg = load_config(cli.config.as_ref())?;
    let mut sink = Sink::new(&cli.out, cli.format, cli.svg)?;
    match &cli.command {
        Command::Gamma => commands::gamma(&cfg, &mut sink),
        Command::Spectrum { dump_basis } => commands::spectrum(&cfg, &mut sink, *dump_basis),
        Command::Effective => commands::effective(&cfg, &mut sink),
        Command::Evolve => commands::evolve(&cfg, &mut sink),
        Command::Scan => commands::scan(&cfg, &mut sink),
        Command::Pathology => commands::pathology(&cfg, &mut sink),
        Command::Selftest => commands::selftest(&mut sink),
    }?;
    for p in sink.written() {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for r in e.records() {
                eprintln!("{r}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
