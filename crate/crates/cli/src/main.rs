use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mamba_wireless::experiment::{plot, run_path, selftest, PlotKind};

// Latency tables are timed in-process; the system allocator returns large
// freed blocks to the OS and adds page-fault jitter to every sample.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Worker threads for data-parallel evaluation; unset uses every core.
const THREADS_VAR: &str = "MAMBA_WIRELESS_THREADS";

#[derive(Parser)]
#[command(name = "mamba-wireless", version, about = "Run, plot and self-check mamba-wireless experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Render a figure from a run directory: latency, layer-latency, bleu or scan.
    Plot { dir: PathBuf, kind: PlotKind },
    /// Fast invariant checks over every module.
    Selftest,
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = value.parse().map_err(|_| format!("{THREADS_VAR}={value} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Run { config } => match run_path(&config) {
            Ok(report) => {
                println!("{}", report.dir.display());
                for t in &report.tables {
                    println!("  {}", t.file);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Plot { dir, kind } => match plot(&dir, kind) {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Selftest => {
            let results = selftest();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
