use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dksh_core::pipeline::stages;
use dksh_core::{run_pipeline, run_sweep, ExperimentConfig, SweepParam};

#[derive(Parser)]
#[command(name = "dksh", version, about = "Deep kernel supervised hashing for node classification")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the edge list and sample random walks.
    Walk(Common),
    /// Accumulate the structure matrix from the walks.
    Structure(Common),
    /// Split the labels and build the supervision matrix.
    Similarity(Common),
    /// Fit the deep kernel mixing weights.
    DklTrain(Common),
    /// Learn hash functions and encode every node.
    Hash(Common),
    /// Train the linear classifier on the codes and score the test split.
    Classify(Common),
    /// Run every (ratio, seed) cell end to end and write results.csv.
    Evaluate(Common),
    /// Vary one parameter at the 90% ratio and write sweep_<param>.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of R, M, p, l, gamma.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
    #[arg(long)]
    walks_per_node: Option<usize>,
    #[arg(long)]
    landmarks: Option<usize>,
    #[arg(long)]
    code_bits: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Labeled ratio used for training.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact / output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> dksh_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.window_size {
            cfg.walk.window_size = v;
        }
        if let Some(v) = self.walk_length {
            cfg.walk.walk_length = v;
        }
        if let Some(v) = self.walks_per_node {
            cfg.walk.walks_per_node = v;
        }
        if let Some(v) = self.landmarks {
            cfg.landmarks = v;
        }
        if let Some(v) = self.code_bits {
            cfg.code_bits = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.ratio {
            cfg.ratios = vec![v];
        }
        if let Some(v) = self.seed {
            cfg.seeds = vec![v];
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| dksh_core::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> dksh_core::Result<()> {
    let (common, sweep) = match &cli.command {
        Command::Sweep { common, param, values } => (common, Some((param, values))),
        Command::Walk(c)
        | Command::Structure(c)
        | Command::Similarity(c)
        | Command::DklTrain(c)
        | Command::Hash(c)
        | Command::Classify(c)
        | Command::Evaluate(c) => (c, None),
    };
    let cfg = common.config()?;
    let out = cfg.out_dir.clone();
    let (ratio, seed) = (cfg.ratios[0], cfg.seeds[0]);
    match &cli.command {
        Command::Walk(_) => println!("{}", stages::walk(&cfg, &out)?),
        Command::Structure(_) => println!("{}", stages::structure(&cfg, &out)?),
        Command::Similarity(_) => println!("{}", stages::similarity(&cfg, &out, ratio, seed)?),
        Command::DklTrain(_) => println!("{}", stages::dkl_train(&cfg, &out, ratio, seed)?),
        Command::Hash(_) => println!("{}", stages::hash(&cfg, &out, seed)?),
        Command::Classify(_) => {
            let acc = stages::classify_stage(&cfg, &out, ratio, seed)?;
            println!("accuracy {acc:.6}");
        }
        Command::Evaluate(_) => {
            let table = run_pipeline(&cfg)?;
            print!("{}", table.render());
            println!("wrote {}", out.join("results.csv").display());
        }
        Command::Sweep { .. } => {
            let (param, values) = sweep.expect("sweep arguments");
            let param: SweepParam = param.parse()?;
            let result = run_sweep(&cfg, param, values)?;
            print!("{}", result.to_csv());
            println!("wrote {}", out.join(format!("sweep_{}.csv", param.name())).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
