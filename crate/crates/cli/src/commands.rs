use std::path::Path;

use refinery_core::engine::{
    self, deploy as deploy_once, fit_success_model, generate_suite, prepare_artifacts, run_benchmark, run_chain,
    ChainSpec, StageArtifacts, StrategyKind,
};
use refinery_core::oracle::success_map;
use refinery_core::report;
use refinery_core::{gmm, GmmModel, InitState, RngStream, StageSpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutputDir;

pub fn parse_resolution(s: &str) -> Result<[usize; 2], CliError> {
    let bad = || CliError::Config(format!("resolution: expected N or RxC, got `{s}`"));
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums: Vec<usize> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    match nums[..] {
        [n] => Ok([n, n]),
        [r, c] => Ok([r, c]),
        _ => Err(bad()),
    }
}

pub fn parse_slice(s: &str) -> Result<Vec<Option<f64>>, CliError> {
    s.split(',')
        .map(|t| match t.trim() {
            "*" => Ok(None),
            v => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("slice: bad value `{v}`"))),
        })
        .collect()
}

/// The configured chain: explicit stages, or generated chain `cfg.landscape`.
fn load_chain(cfg: &RunConfig) -> Result<ChainSpec, CliError> {
    if let Some(stages) = &cfg.stages {
        let n = stages.len();
        return Ok(ChainSpec::new("custom", stages.clone(), vec![cfg.chain.strategy; n])?);
    }
    let mut suite_cfg = cfg.suite.clone();
    suite_cfg.landscapes = suite_cfg.landscapes.max(cfg.landscape + 1);
    let mut suite = generate_suite(&suite_cfg, &suite_rng(cfg.seed))?;
    Ok(suite.swap_remove(cfg.landscape))
}

fn suite_rng(seed: u64) -> RngStream {
    RngStream::from_seed(seed).child_named("suite")
}

fn pick_stage(cfg: &RunConfig) -> Result<StageSpec, CliError> {
    let chain = load_chain(cfg)?;
    chain
        .stages
        .get(cfg.stage)
        .cloned()
        .ok_or_else(|| CliError::Config(format!("stage: {} out of range (chain has {})", cfg.stage, chain.stages.len())))
}

fn open(cfg: &RunConfig, out: &Path, command: &str) -> Result<OutputDir, CliError> {
    OutputDir::create(out, command, cfg.seed, &cfg.canonical_json())
}

pub fn eval_map(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let stage = pick_stage(cfg)?;
    let dom = stage.domain();
    let slice = match &cfg.map.slice {
        Some(s) => s.clone(),
        None => (0..dom.dim())
            .map(|j| if j < 2 { None } else { Some(dom.center().coords()[j]) })
            .collect(),
    };
    let map = success_map(stage.oracle(), cfg.map.resolution, &slice)?;
    let mut dir = open(cfg, out, "eval-map")?;
    let path = dir.write("success_map.csv", map.to_csv().as_bytes())?;
    dir.finish()?;
    println!("wrote {} ({}x{}, mean {:.4})", path.display(), map.resolution[0], map.resolution[1], map.mean());
    Ok(())
}

pub fn finetune(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.finetune.validate()?;
    let stage = pick_stage(cfg)?;
    let rng = RngStream::from_seed(cfg.seed).child_named("finetune");
    let (improved, record) = engine::finetune_stage(&stage, &cfg.finetune, &rng)?;
    let mut dir = open(cfg, out, "finetune")?;
    dir.write_json("finetune_record.json", &record)?;
    dir.write_json("finetuned_stage.json", &improved)?;
    dir.finish()?;
    println!(
        "fine-tuned stage {} in {} epochs: final rate {:.4}",
        record.stage, record.epochs, record.final_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct DeployEntry {
    chosen: InitState,
    density: Option<f64>,
    log_density: Option<f64>,
    success: bool,
    uniform_fallback: bool,
    selector_fallback: bool,
}

#[derive(Serialize)]
struct DeployLog {
    strategy: StrategyKind,
    stage: usize,
    rollouts: usize,
    candidates: usize,
    successes: usize,
    components: usize,
    gmm: Option<GmmModel>,
    warning: Option<String>,
    deployments: Vec<DeployEntry>,
    success_rate: f64,
}

pub fn deploy(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let strategy = cfg.deploy.strategy;
    if !strategy.uses_gmm() {
        return Err(CliError::Config(format!(
            "deploy.strategy: `{strategy}` does not use the mixture; expected deployment or refinery"
        )));
    }
    cfg.gmm.validate()?;
    if cfg.deploy.deployments == 0 {
        return Err(CliError::Config("deploy.deployments: must be at least 1".into()));
    }
    let stage = pick_stage(cfg)?;
    let rng = RngStream::from_seed(cfg.seed).child_named("deploy");
    let (art, _) = if strategy.uses_finetuned() {
        cfg.finetune.validate()?;
        prepare_artifacts(&stage, strategy, &cfg.finetune, &cfg.gmm, &rng.child_named("prepare"))?
    } else {
        let mut a = StageArtifacts::new(cfg.gmm.candidates);
        a.baseline_gmm = Some(fit_success_model(&stage, cfg.gmm.rollouts, cfg.gmm.k_max, &rng.child_named("gmm"))?);
        (a, None)
    };
    let model = if strategy == StrategyKind::Deployment { &art.baseline_gmm } else { &art.finetuned_gmm }
        .clone()
        .expect("prepared above");
    let warning = model
        .gmm
        .is_none()
        .then(|| "no successful rollouts to fit; deployed with uniform initialization".to_string());

    let mut entries = Vec::new();
    let deploy_rng = rng.child_named("deployments");
    for t in 0..cfg.deploy.deployments {
        let d = deploy_once(&stage, strategy, &art, &deploy_rng.child(t))?;
        let (density, log_density, selector_fallback) = match (&d.selection, &model.gmm) {
            (Some(sel), Some(m)) => (Some(gmm::density(m, &sel.point)?), Some(sel.log_density), sel.fallback),
            _ => (None, None, false),
        };
        entries.push(DeployEntry {
            chosen: d.chosen,
            density,
            log_density,
            success: d.success,
            uniform_fallback: d.uniform_fallback,
            selector_fallback,
        });
    }
    let wins = entries.iter().filter(|e| e.success).count();
    let log = DeployLog {
        strategy,
        stage: cfg.stage,
        rollouts: model.rollouts,
        candidates: cfg.gmm.candidates,
        successes: model.successes,
        components: model.gmm.as_ref().map_or(0, |g| g.n_components()),
        gmm: model.gmm.clone(),
        warning,
        success_rate: wins as f64 / entries.len() as f64,
        deployments: entries,
    };
    let mut dir = open(cfg, out, "deploy")?;
    dir.write_json("deploy_log.json", &log)?;
    dir.finish()?;
    if let Some(w) = &log.warning {
        eprintln!("warning: {w}");
    }
    println!(
        "{} deployments with {} ({} components from {} successes): success rate {:.4}",
        log.deployments.len(),
        strategy,
        log.components,
        log.successes,
        log.success_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct ChainLog {
    chain_id: String,
    strategy: StrategyKind,
    retries: u32,
    result: engine::ChainResult,
}

pub fn chain(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.finetune.validate()?;
    cfg.gmm.validate()?;
    let chain = load_chain(cfg)?.with_strategy(cfg.chain.strategy);
    let rng = RngStream::from_seed(cfg.seed).child_named("chain");
    let artifacts = chain
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            prepare_artifacts(s, cfg.chain.strategy, &cfg.finetune, &cfg.gmm, &rng.child(i as u64)).map(|(a, _)| a)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let result = run_chain(&chain, &artifacts, cfg.chain.trials, cfg.chain.retries, &rng.child_named("run"))?;
    let mut dir = open(cfg, out, "chain")?;
    dir.write_json(
        "chain_result.json",
        &ChainLog {
            chain_id: chain.id.clone(),
            strategy: cfg.chain.strategy,
            retries: cfg.chain.retries,
            result: result.clone(),
        },
    )?;
    dir.finish()?;
    let per: Vec<String> = result.per_stage_rates.iter().map(|r| format!("{r:.4}")).collect();
    println!(
        "{} stages with {}: sequence rate {:.4} (per stage {})",
        chain.stages.len(),
        cfg.chain.strategy,
        result.sequence_rate,
        per.join(", ")
    );
    Ok(())
}

pub fn bench(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let bcfg = cfg.bench_config();
    bcfg.validate()?;
    let suite = match &cfg.stages {
        Some(_) => vec![load_chain(cfg)?],
        None => generate_suite(&cfg.suite, &suite_rng(cfg.seed))?,
    };
    let report = run_benchmark(&suite, &bcfg, cfg.seed)?;
    let mut dir = open(cfg, out, "bench")?;
    dir.write("bench_report.json", format!("{}\n", report::to_json(&report)?).as_bytes())?;
    dir.write("bench_summary.csv", report::summary_csv(&report).as_bytes())?;
    dir.finish()?;
    let m = &report.strategy_means;
    println!("baseline   {:.4}", m.baseline);
    println!("deployment {:.4}", m.deployment);
    println!("finetune   {:.4}", m.finetune);
    println!("refinery   {:.4}", m.refinery);
    if let Some(a) = &report.audit {
        println!("selector audit: {} deployments, {} violations", a.deployments, a.violations);
    }
    Ok(())
}
