use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybridprec::{run_experiment, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(
    name = "hybridprec",
    version,
    about = "Hybrid precoding experiments for mmWave MIMO links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `threads` from the config (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check GMD invariants on random matrices.
    GmdCheck(RunArgs),
    /// BER versus SNR.
    Ber(RunArgs),
    /// Spectral efficiency versus SNR.
    Se(RunArgs),
    /// Factorization MSE versus iteration.
    Mse(RunArgs),
    /// Train the precoding network and save it.
    Train(RunArgs),
    /// Factorization runtime versus array size.
    ComplexityBench(RunArgs),
    /// Write a matplotlib script for a result CSV.
    PlotScript {
        csv: PathBuf,
        /// Script path; defaults to the CSV path with a `.py` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(kind: Kind, args: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    let report = run_experiment(&cfg, kind, &args.out)?;
    for line in &report.summary {
        println!("{line}");
    }
    for path in &report.outputs {
        println!("wrote {}", path.display());
    }
    println!("wrote {}", report.manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GmdCheck(a) => run(Kind::GmdCheck, a),
        Command::Ber(a) => run(Kind::Ber, a),
        Command::Se(a) => run(Kind::Se, a),
        Command::Mse(a) => run(Kind::Mse, a),
        Command::Train(a) => run(Kind::Train, a),
        Command::ComplexityBench(a) => run(Kind::ComplexityBench, a),
        Command::PlotScript { csv, out } => hybridprec::plot::plot_script(&csv)
            .map_err(Into::into)
            .and_then(|script| {
                let out = out.unwrap_or_else(|| csv.with_extension("py"));
                std::fs::write(&out, script)?;
                println!("wrote {}", out.display());
                Ok(())
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
