use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efp::config::{read_pairs, split_override, Experiment, RunConfig};
use efp::{run, CliResult};

#[derive(Parser)]
#[command(name = "efp", version, about = "Entropic fictitious play experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-field two-layer tanh network on a cosine-teacher regression task.
    TrainNn(Common),
    /// Mixture density estimation with Gaussian-kernel likelihood terms.
    Density(Common),
    /// Fit a grayscale image by an average of soft triangles.
    SynthImage(Common),
    /// One-dimensional problem with a closed-form fixed point.
    Toy1d(Common),
    /// Run the acceptance criteria.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo samples for the log-partition estimate.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Neighbour index of the entropy estimator.
    #[arg(long)]
    knn_k: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn pairs(&self) -> CliResult<Vec<(String, String)>> {
        let mut pairs = match &self.config {
            Some(path) => read_pairs(path)?,
            None => Vec::new(),
        };
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|s| s.to_string()));
        push("output.dir", self.out.as_ref().map(|p| p.display().to_string()));
        push("diagnostics.mc_samples", self.mc_samples.map(|s| s.to_string()));
        push("diagnostics.knn_k", self.knn_k.map(|s| s.to_string()));
        for o in &self.overrides {
            pairs.push(split_override(o)?);
        }
        Ok(pairs)
    }
}

fn config(cli: &Cli) -> CliResult<RunConfig> {
    let (experiment, common) = match &cli.command {
        Command::TrainNn(c) => (Experiment::TrainNn, c),
        Command::Density(c) => (Experiment::Density, c),
        Command::SynthImage(c) => (Experiment::SynthImage, c),
        Command::Toy1d(c) => (Experiment::Toy1d, c),
        Command::Verify { common, .. } => (Experiment::Verify, common),
    };
    let mut pairs = common.pairs()?;
    if let Command::Verify { criteria, .. } = &cli.command {
        if !criteria.is_empty() {
            let list: Vec<String> = criteria.iter().map(u32::to_string).collect();
            pairs.push(("verify.criteria".into(), list.join(",")));
        }
        if common.out.is_none() && !pairs.iter().any(|(k, _)| k == "output.dir") {
            pairs.push(("output.dir".into(), String::new()));
        }
    }
    RunConfig::from_pairs(experiment, &pairs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match config(&cli).and_then(|cfg| run::run(&cfg)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
