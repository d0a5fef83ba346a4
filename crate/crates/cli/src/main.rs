use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtjsnn::harness::{self, Backend, ExperimentConfig, Mode};
use mtjsnn::Error;

#[derive(Parser)]
#[command(
    name = "mtjsnn",
    version,
    about = "ME-MTJ device co-simulation and stochastic temporal SNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map τ_P / τ_AP over a (V1, V2) grid with the LLG simulator.
    Characterize(Opts),
    /// Fit the exponential activation along V1 at the operating V2.
    Fit(Opts),
    /// Train a network on MNIST with the KL lifetime loss.
    Train(Opts),
    /// Software and stochastic k-spike accuracy of a checkpoint.
    Eval(Opts),
    /// Output layer on LLG devices vs the behavioral model.
    Cosim(Opts),
}

#[derive(Args)]
struct Opts {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Spike count(s) for eval/cosim, e.g. `--k 3` or `--k 1,2,3`.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Behavioral,
    Llg,
}

fn build(opts: &Opts) -> mtjsnn::Result<ExperimentConfig> {
    let mut config = match &opts.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(dir) = &opts.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(b) = opts.backend {
        config.backend = match b {
            BackendArg::Behavioral => Backend::Behavioral,
            BackendArg::Llg => Backend::Llg,
        };
    }
    if let Some(k) = &opts.k {
        config.eval.k_list = k.clone();
        config.cosim.k_list = k.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, opts) = match &cli.command {
        Command::Characterize(o) => (Mode::Characterize, o),
        Command::Fit(o) => (Mode::Fit, o),
        Command::Train(o) => (Mode::Train, o),
        Command::Eval(o) => (Mode::Eval, o),
        Command::Cosim(o) => (Mode::Cosim, o),
    };
    let result = build(opts).and_then(|config| harness::run(Some(mode), &config).map(|r| (config, r)));
    match result {
        Ok((config, report)) => {
            if let Some(acc) = report.software_accuracy {
                println!("software accuracy {:.4}", acc);
            }
            for s in &report.summary {
                println!(
                    "{:?} k={} accuracy {:.4} ± {:.4}, spikes/neuron {:?}",
                    s.backend, s.k, s.mean, s.se, s.spikes_per_neuron
                );
            }
            for note in &report.notes {
                println!("{note}");
            }
            println!(
                "{} done in {:.1} s, artifacts in {}",
                mode.name(),
                report.wall_clock_s,
                config.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
