//! `msresp`: simulate, process and evaluate two-radar respiration scenes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use multisite_resp::config::{parse_config, RunConfig, CONFIG_KEYS};
use multisite_resp::error::{Error, Result};
use multisite_resp::eval::{evaluate, parse_rates_csv};
use multisite_resp::pipeline::{process_dir, render_report, simulate, write_outputs};

const EXIT_CODES: &str = "\
Exit codes: 0 ok, 1 usage, 2 configuration, 3 I/O or unreadable input,
4 no detections, 5 no associations, 6 evaluation id mismatch.";

#[derive(Parser)]
#[command(name = "msresp", version, about = "Two-radar FMCW respiration simulator and processing pipeline")]
#[command(after_help = format!("{CONFIG_KEYS}\n\n{EXIT_CODES}"))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one MSRC cube file per radar, plus a manifest.
    #[command(after_help = CONFIG_KEYS)]
    Simulate {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Localize subjects and estimate breathing rates from cube files.
    #[command(after_help = CONFIG_KEYS)]
    Process {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also write range maps, profiles, respiration traces, pair grid,
        /// candidates, correlations and spectra.
        #[arg(long)]
        emit_intermediates: bool,
    },
    /// Simulate into DIR, then process the cubes written there.
    #[command(after_help = CONFIG_KEYS)]
    Run {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        emit_intermediates: bool,
    },
    /// Compare estimated rates with reference rates by target id.
    Eval {
        /// CSV with `target_id` and `rate_bpm` columns, e.g. a summary.csv.
        #[arg(long, value_name = "FILE")]
        estimates: PathBuf,
        #[arg(long, value_name = "FILE")]
        reference: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_config(path: &Path, out: &Path, emit: bool) -> Result<RunConfig> {
    let mut cfg = parse_config(&read_text(path)?)?;
    cfg.emit_intermediates |= emit;
    cfg.output_dir = Some(out.to_owned());
    Ok(cfg)
}

fn process_and_write(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let report = process_dir(cfg, input)?;
    write_outputs(&report, out, cfg.emit_intermediates)?;
    print!("{}", render_report(&report));
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config, &out, false)?;
            for path in simulate(&cfg, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Process {
            input,
            config,
            out,
            emit_intermediates,
        } => {
            let cfg = load_config(&config, &out, emit_intermediates)?;
            process_and_write(&cfg, &input, &out)?;
        }
        Command::Run {
            config,
            out,
            emit_intermediates,
        } => {
            let cfg = load_config(&config, &out, emit_intermediates)?;
            simulate(&cfg, &out)?;
            process_and_write(&cfg, &out, &out)?;
        }
        Command::Eval { estimates, reference } => {
            let est = parse_rates_csv(&read_text(&estimates)?)?;
            let refs = parse_rates_csv(&read_text(&reference)?)?;
            let report = evaluate(&est, &refs)?;
            println!("target_id,estimate_bpm,reference_bpm,error_bpm");
            for r in &report.rows {
                println!("{},{},{},{}", r.target_id, g(r.estimate), g(r.reference), g(r.error()));
            }
            println!("rmse_bpm = {}", g(report.rmse));
        }
    }
    Ok(())
}

fn g(x: f64) -> String {
    multisite_resp::csvfmt::g9(x)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let start = Instant::now();
    let result = execute(cli.command);
    eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
