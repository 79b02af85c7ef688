use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use asynclqr::harness::config::{ModeKind, NominalSource, Overrides, Preset, ZO_EXPLORATORY_REDRAWS};
use asynclqr::harness::summary::summarize_artifacts;
use asynclqr::harness::{run_preset, run_suite, summarize_dir, Suite, DEFAULT_THRESHOLD};

#[derive(Parser)]
#[command(name = "asynclqr", version, about = "Asynchronous heterogeneous LQR policy-gradient simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset and write traces, metadata and a report into --out.
    Run {
        #[arg(long, value_parser = parse::<Preset>)]
        preset: Preset,
        #[arg(long, env = "ASYNCLQR_SEED", default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse::<ModeKind>)]
        mode: Option<ModeKind>,
        /// Number of systems.
        #[arg(long = "M")]
        agents: Option<usize>,
        #[arg(long)]
        bs: Option<usize>,
        /// Step size (base step size for presets that scale it per run).
        #[arg(long)]
        eta: Option<f64>,
        /// Multiplies the preset's heterogeneity radii.
        #[arg(long)]
        radius_scale: Option<f64>,
        #[arg(long)]
        tau_cap: Option<usize>,
        /// Redraw (up to 10 times) a zeroth-order perturbation that destabilizes a
        /// system instead of aborting.
        #[arg(long)]
        zo_redraw: bool,
        /// Number of server updates.
        #[arg(long = "N")]
        iterations: Option<usize>,
        /// Nominal system JSON (`a`, `b`, `q`, `r`, `k0`); defaults to the built-in plant.
        #[arg(long)]
        nominal: Option<PathBuf>,
        /// Full-size fleet (M = 100, unscaled reference radii).
        #[arg(long)]
        full_scale: bool,
    },
    /// Run a verification suite and print one line per criterion.
    Verify {
        #[arg(long, value_parser = parse::<Suite>)]
        suite: Suite,
        #[arg(long, env = "ASYNCLQR_SEED", default_value_t = 7)]
        seed: u64,
        /// Keep figure artifacts here instead of a temporary directory.
        #[arg(long)]
        work: Option<PathBuf>,
    },
    /// Summarize the runs in a directory as JSON on stdout.
    Summarize {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
}

fn parse<T: std::str::FromStr<Err = asynclqr::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: asynclqr::Error| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            preset,
            seed,
            out,
            mode,
            agents,
            bs,
            eta,
            radius_scale,
            tau_cap,
            zo_redraw,
            iterations,
            nominal,
            full_scale,
        } => {
            let ov = Overrides {
                mode,
                agents,
                batch_size: bs,
                eta,
                radius_scale,
                tau_cap,
                zo_redraws: zo_redraw.then_some(ZO_EXPLORATORY_REDRAWS),
                iterations,
                nominal: nominal.map(NominalSource::Path),
                full_scale,
            };
            let runs = run_preset(preset, seed, &ov, &out).with_context(|| format!("running preset {preset}"))?;
            for r in &runs {
                eprintln!(
                    "{}: {} records, final gap (system 1) {:.6e}, max staleness {}",
                    r.meta.config.label,
                    r.meta.records,
                    r.meta.final_gaps[0],
                    r.meta.staleness.max
                );
            }
            let report = summarize_artifacts(&runs, DEFAULT_THRESHOLD)?;
            std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            Ok(true)
        }
        Command::Verify { suite, seed, work } => {
            let results = run_suite(suite, seed, work.as_deref())?;
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Summarize { dir, threshold } => {
            let report = summarize_dir(&dir, threshold).with_context(|| format!("summarizing {}", dir.display()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
    }
}
