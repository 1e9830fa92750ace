//! `spinbath` batch front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure.

mod commands;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, FitRequest, Run};
use output::Format;
use scenario::{FitKind, Scenario};

#[derive(Debug, Parser)]
#[command(name = "spinbath", version, about = "Spin-bath decoherence, charge transport and fitting toolkit")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed; overrides the scenario's `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Columnar)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise the Lorentzian-broadened spectrum of the configured bath.
    Spectrum,
    /// Suppression factors of every species by exact diagonalisation and by peaks.
    Alpha,
    /// Before/after coherence times and DEER curves.
    Coherence,
    /// Pump/recovery charge-transport simulation.
    Transport,
    /// Fit a spectrum, a decay trace or a pixel frame set.
    Fit(FitArgs),
    /// Validate a scenario without running anything.
    ScenarioValidate,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Input data file; overrides the scenario's `fit.input`.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// spectrum, decay or frames; overrides `fit.kind`.
    #[arg(long)]
    kind: Option<String>,
    /// Number of Lorentzian peaks.
    #[arg(long)]
    peaks: Option<usize>,
    /// Pixel tile as ROWSxCOLS, e.g. 4x4.
    #[arg(long)]
    tile: Option<String>,
}

fn load(cli: &Cli, required: bool) -> Result<Scenario, Failure> {
    match &cli.config {
        Some(p) => Ok(scenario::load(p)?),
        None if required => Err(Failure::Validation("--config is required for this command".into())),
        None => Ok(scenario::parse("", std::path::Path::new("."))?),
    }
}

fn fit_request(sc: &Scenario, args: &FitArgs) -> Result<FitRequest, Failure> {
    let kind = match &args.kind {
        Some(k) => FitKind::parse(k)
            .ok_or_else(|| Failure::Validation(format!("--kind must be spectrum, decay or frames, got `{k}`")))?,
        None => sc.fit.kind.ok_or_else(|| Failure::Validation("fit kind not given (--kind or fit.kind)".into()))?,
    };
    let input = args
        .input
        .clone()
        .or_else(|| sc.fit.input.clone())
        .ok_or_else(|| Failure::Validation("fit input not given (--input or fit.input)".into()))?;
    let peaks = args.peaks.unwrap_or(sc.fit.peaks);
    if peaks == 0 {
        return Err(Failure::Validation("--peaks must be at least 1".into()));
    }
    let tile = match &args.tile {
        None => sc.fit.tile,
        Some(t) => {
            let parsed = t
                .split_once('x')
                .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
            match parsed {
                Some((h, w)) if h > 0 && w > 0 => (h, w),
                _ => return Err(Failure::Validation(format!("--tile must look like 4x4, got `{t}`"))),
            }
        }
    };
    Ok(FitRequest { kind, input, peaks, tile })
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, Failure> {
    let required = !matches!(cli.command, Command::Fit(_) | Command::Transport);
    let sc = load(cli, required)?;
    let run = Run { scenario: &sc, seed: cli.seed.unwrap_or(sc.seed), out: &cli.out, format: cli.format };
    match &cli.command {
        Command::Spectrum => commands::spectrum(&run),
        Command::Alpha => commands::alpha(&run),
        Command::Coherence => commands::coherence(&run),
        Command::Transport => commands::transport(&run),
        Command::Fit(args) => {
            let req = fit_request(&sc, args)?;
            commands::fit(&run, &req)
        }
        Command::ScenarioValidate => {
            println!("scenario ok: sha256 {}", sc.hash);
            println!(
                "species {}, bath before {}, after {}, transport {}",
                sc.species.len(),
                sc.before.len(),
                sc.after.len(),
                if sc.transport.is_some() { "configured" } else { "default" }
            );
            Ok(Vec::new())
        }
    }
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
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
