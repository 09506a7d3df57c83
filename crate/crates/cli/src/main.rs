use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cimsim_cli::config::explain_config;
use cimsim_cli::run::load_config;
use cimsim_cli::{run, CliError, Experiment, RunOptions};

/// Behavioral simulator of a 16Kb SRAM compute-in-memory macro.
#[derive(Debug, Parser)]
#[command(name = "cimsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: Global,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed of the chip instance and all noise (overrides noise.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override one config key, e.g. `--set analog.boost=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Zero all noise and mismatch.
    #[arg(long, global = true)]
    ideal: bool,

    /// Print the effective configuration with value provenance and exit.
    #[arg(long, global = true)]
    explain_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Random workloads on the full macro.
    Simulate {
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Transfer curve, DNL/INL and signal margin.
    Characterize {
        /// MAC stride of the transfer-curve sweep.
        #[arg(long)]
        step: Option<usize>,
        /// Noisy conversions per sweep point.
        #[arg(long)]
        trials: Option<usize>,
        /// Random workloads for the signal margin.
        #[arg(long)]
        points: Option<usize>,
    },
    /// 1-sigma error with and without enhancements, and the convolution experiment.
    Montecarlo {
        #[arg(long)]
        points: Option<usize>,
        /// Feature maps for the convolution experiment (0 skips it).
        #[arg(long)]
        images: Option<usize>,
    },
    /// Energy efficiency across input sparsity.
    Sweep {
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Tile a weight matrix onto the macro and run one input through it.
    Map {
        /// Weight matrix: one comma-separated row per line, values in -7..=7.
        #[arg(long)]
        matrix: PathBuf,
        /// Activation file (values in 0..=15); random when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Allow matrices that need several macro invocations.
        #[arg(long)]
        streaming: bool,
    },
    /// Throughput, efficiency and figure of merit.
    Fom {
        #[arg(long)]
        cycles: Option<usize>,
    },
}

fn options(cli: Cli) -> (Experiment, RunOptions, Global) {
    let g = cli.global;
    let mut o = RunOptions {
        config: g.config.clone(),
        overrides: g.set.clone(),
        seed: g.seed,
        ideal: g.ideal,
        workers: g.workers,
        ..RunOptions::default()
    };
    let exp = match cli.command {
        Command::Simulate { cycles } => {
            o.cycles = cycles;
            Experiment::Simulate
        }
        Command::Characterize { step, trials, points } => {
            o.step = step;
            o.trials = trials;
            o.points = points;
            Experiment::Characterize
        }
        Command::Montecarlo { points, images } => {
            o.points = points;
            o.images = images;
            Experiment::Montecarlo
        }
        Command::Sweep { cycles } => {
            o.cycles = cycles;
            Experiment::Sweep
        }
        Command::Map { matrix, input, streaming } => {
            o.matrix = Some(matrix);
            o.input = input;
            o.streaming = streaming;
            Experiment::Map
        }
        Command::Fom { cycles } => {
            o.cycles = cycles;
            Experiment::Fom
        }
    };
    (exp, o, g)
}

fn main() -> ExitCode {
    let (exp, opts, g) = options(Cli::parse());
    let result = if g.explain_config {
        load_config(&opts).map(|c| print!("{}", explain_config(&c)))
    } else {
        run(exp, &opts).and_then(|rep| {
            rep.write(&g.out)?;
            print!("{}", rep.summary_text());
            Ok(())
        })
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            exit_code(&e)
        }
    }
}

fn exit_code(e: &CliError) -> ExitCode {
    match e {
        CliError::Usage(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}
