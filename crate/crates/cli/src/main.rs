//! `refinery`: success maps, fine-tuning, deployment, chained execution and
//! the four-strategy benchmark over synthetic success landscapes.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refinery_core::engine::StrategyKind;
use refinery_core::AcquisitionKind;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "refinery", version, about = "GP-guided fine-tuning and GMM deployment over synthetic success landscapes")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "REFINERY_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: logical cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "refinery-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Export the true success probability over a 2-D slice as CSV.
    EvalMap(EvalMapArgs),
    /// Run GP-guided fine-tuning on one stage.
    Finetune(FinetuneArgs),
    /// Fit the success mixture and deploy from it.
    Deploy(DeployArgs),
    /// Execute a multi-stage chain under one strategy.
    Chain(ChainArgs),
    /// Run all four strategies over the generated suite.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    /// Generated chain to use.
    #[arg(long)]
    landscape: Option<usize>,
    /// Dimension of generated landscapes.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalMapArgs {
    #[command(flatten)]
    land: LandscapeArgs,
    #[arg(long)]
    stage: Option<usize>,
    /// `N` or `RxC`.
    #[arg(long)]
    resolution: Option<String>,
    /// Comma-separated values per dimension, `*` for the two plotted ones.
    #[arg(long)]
    slice: Option<String>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    land: LandscapeArgs,
    #[arg(long)]
    stage: Option<usize>,
    #[command(flatten)]
    ft: FinetuneFlags,
}

#[derive(Args, Debug)]
struct FinetuneFlags {
    /// ucb, pi or ei.
    #[arg(long)]
    acquisition: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    rollouts: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    finetune_width: Option<f64>,
    /// Propose uniformly at random instead of maximizing the acquisition.
    #[arg(long)]
    uniform_proposals: bool,
}

#[derive(Args, Debug)]
struct DeployArgs {
    #[command(flatten)]
    land: LandscapeArgs,
    #[arg(long)]
    stage: Option<usize>,
    /// deployment or refinery.
    #[arg(long)]
    strategy: Option<String>,
    /// Uniform rollouts collected for the mixture (N).
    #[arg(long)]
    n: Option<usize>,
    /// Candidates drawn per deployment (M).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    deployments: Option<u64>,
    #[command(flatten)]
    ft: FinetuneFlags,
}

#[derive(Args, Debug)]
struct ChainArgs {
    #[command(flatten)]
    land: LandscapeArgs,
    /// Stages per generated chain.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Retries allowed per sequence (0, 1 or 2).
    #[arg(long)]
    retries: Option<u32>,
    #[command(flatten)]
    ft: FinetuneFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    seeds: Option<usize>,
    /// Stages per generated chain.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    landscapes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Re-check every mixture deployment against all its candidates.
    #[arg(long)]
    audit: bool,
    #[command(flatten)]
    ft: FinetuneFlags,
}

fn parse<T: std::str::FromStr<Err = refinery_core::Error>>(s: &str) -> Result<T, CliError> {
    s.parse::<T>().map_err(CliError::from)
}

fn apply_land(cfg: &mut RunConfig, a: &LandscapeArgs) {
    if let Some(l) = a.landscape {
        cfg.landscape = l;
    }
    if let Some(d) = a.dim {
        cfg.suite.dim = d;
    }
}

fn apply_finetune(cfg: &mut RunConfig, f: &FinetuneFlags) -> Result<(), CliError> {
    let ft = &mut cfg.finetune;
    if let Some(a) = &f.acquisition {
        ft.acquisition.kind = parse::<AcquisitionKind>(a)?;
    }
    if let Some(b) = f.beta {
        ft.acquisition.beta = b;
    }
    if let Some(p) = f.probes {
        ft.probe_count = p;
    }
    if let Some(r) = f.rollouts {
        ft.rollouts_per_probe = r;
    }
    if let Some(b) = f.batch {
        ft.batch = b;
    }
    if let Some(e) = f.max_epochs {
        ft.max_epochs = e;
    }
    if let Some(e) = f.eta {
        ft.eta = e;
    }
    if let Some(w) = f.finetune_width {
        ft.finetune_width = w;
    }
    if f.uniform_proposals {
        ft.uniform_proposals = true;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let name = match &cli.command {
        Command::EvalMap(a) => {
            apply_land(&mut cfg, &a.land);
            if let Some(s) = a.stage {
                cfg.stage = s;
            }
            if let Some(r) = &a.resolution {
                cfg.map.resolution = commands::parse_resolution(r)?;
            }
            if let Some(s) = &a.slice {
                cfg.map.slice = Some(commands::parse_slice(s)?);
            }
            "eval-map"
        }
        Command::Finetune(a) => {
            apply_land(&mut cfg, &a.land);
            apply_finetune(&mut cfg, &a.ft)?;
            if let Some(s) = a.stage {
                cfg.stage = s;
            }
            "finetune"
        }
        Command::Deploy(a) => {
            apply_land(&mut cfg, &a.land);
            apply_finetune(&mut cfg, &a.ft)?;
            if let Some(s) = a.stage {
                cfg.stage = s;
            }
            if let Some(s) = &a.strategy {
                cfg.deploy.strategy = parse::<StrategyKind>(s)?;
            }
            if let Some(n) = a.n {
                cfg.gmm.rollouts = n;
            }
            if let Some(m) = a.m {
                cfg.gmm.candidates = m;
            }
            if let Some(d) = a.deployments {
                cfg.deploy.deployments = d;
            }
            "deploy"
        }
        Command::Chain(a) => {
            apply_land(&mut cfg, &a.land);
            apply_finetune(&mut cfg, &a.ft)?;
            if let Some(s) = a.stages {
                cfg.suite.stages = s;
            }
            if let Some(s) = &a.strategy {
                cfg.chain.strategy = parse::<StrategyKind>(s)?;
            }
            if let Some(t) = a.trials {
                cfg.chain.trials = t;
            }
            if let Some(r) = a.retries {
                cfg.chain.retries = r;
            }
            "chain"
        }
        Command::Bench(a) => {
            apply_finetune(&mut cfg, &a.ft)?;
            if let Some(s) = a.seeds {
                cfg.bench.seeds = s;
            }
            if let Some(s) = a.stages {
                cfg.suite.stages = s;
            }
            if let Some(l) = a.landscapes {
                cfg.suite.landscapes = l;
            }
            if let Some(d) = a.dim {
                cfg.suite.dim = d;
            }
            if a.audit {
                cfg.bench.audit = true;
            }
            "bench"
        }
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match name {
        "eval-map" => commands::eval_map(&cfg, &cli.out),
        "finetune" => commands::finetune(&cfg, &cli.out),
        "deploy" => commands::deploy(&cfg, &cli.out),
        "chain" => commands::chain(&cfg, &cli.out),
        _ => commands::bench(&cfg, &cli.out),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("refinery: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
