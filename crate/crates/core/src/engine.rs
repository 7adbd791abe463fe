//! End-to-end orchestration: surrogate-guided fine-tuning, success-mixture
//! deployment, the four deployment strategies, chained execution and the
//! benchmark driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcquisitionSpec, ProposalBatch};
use crate::dataset::{success_rate, EvalDataset, EvalRecord};
use crate::domain::{uniform_sample, Domain, InitState};
use crate::error::{invalid, Error, Result};
use crate::gmm::{self, GmmModel, Selection};
use crate::gp::{self, Hyperparameters};
use crate::oracle::{finetune_update, rollout, LandscapeGenerator, StageSpec};
use crate::rng::RngStream;

/// Algorithm-1 settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Uniform probe locations per evaluation.
    pub probe_count: usize,
    /// Rollouts aggregated at each probe.
    pub rollouts_per_probe: u64,
    /// Initializations proposed per epoch.
    pub batch: usize,
    /// Uniform candidates scored by the acquisition maximizer.
    pub candidates: usize,
    pub acquisition: AcquisitionSpec,
    /// Replace the acquisition argmax by uniform proposals (ablation).
    pub uniform_proposals: bool,
    pub max_epochs: usize,
    pub conv_window: usize,
    pub conv_tol: f64,
    /// Fraction of the remaining gap closed at a proposed point.
    pub eta: f64,
    /// Spatial reach of one fine-tuning update, in domain units.
    pub finetune_width: f64,
    pub hyperparameters: Hyperparameters,
    /// Uniform deployments used for the final rate of a fine-tuning run.
    pub final_trials: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            probe_count: 64,
            rollouts_per_probe: 20,
            batch: acquisition::DEFAULT_BATCH,
            candidates: acquisition::DEFAULT_CANDIDATES,
            acquisition: AcquisitionSpec::default(),
            uniform_proposals: false,
            max_epochs: 60,
            conv_window: 5,
            conv_tol: 0.05,
            eta: 0.3,
            finetune_width: 0.1,
            hyperparameters: Hyperparameters::Auto,
            final_trials: 1000,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_count == 0 {
            return Err(invalid("probe_count", "must be at least 1"));
        }
        if self.rollouts_per_probe == 0 {
            return Err(invalid("rollouts_per_probe", "must be at least 1"));
        }
        if (self.probe_count as u64) * self.rollouts_per_probe < 100 {
            return Err(invalid("probe_count", "probe_count × rollouts_per_probe must be at least 100"));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be at least 1"));
        }
        if self.candidates < self.batch {
            return Err(invalid("candidates", "must be at least the batch size"));
        }
        if self.conv_window < 2 {
            return Err(invalid("conv_window", "must be at least 2"));
        }
        if !(self.conv_tol > 0.0) {
            return Err(invalid("conv_tol", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid("eta", "must lie in (0, 1]"));
        }
        if !(self.finetune_width > 0.0 && self.finetune_width.is_finite()) {
            return Err(invalid("finetune_width", "must be positive"));
        }
        if self.final_trials == 0 {
            return Err(invalid("final_trials", "must be at least 1"));
        }
        if let Hyperparameters::Fixed(p) = &self.hyperparameters {
            p.validate()?;
        }
        self.acquisition.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Baseline policy, uniform initialization.
    Baseline,
    /// Baseline policy, mixture-selected initialization.
    Deployment,
    /// Fine-tuned policy, uniform initialization.
    Finetune,
    /// Fine-tuned policy, mixture-selected initialization.
    Refinery,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::Baseline, Self::Deployment, Self::Finetune, Self::Refinery];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Deployment => "deployment",
            Self::Finetune => "finetune",
            Self::Refinery => "refinery",
        }
    }

    pub fn uses_finetuned(self) -> bool {
        matches!(self, Self::Finetune | Self::Refinery)
    }

    pub fn uses_gmm(self) -> bool {
        matches!(self, Self::Deployment | Self::Refinery)
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid("strategy", format!("unknown strategy `{s}`")))
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per strategy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerStrategy<T> {
    pub baseline: T,
    pub deployment: T,
    pub finetune: T,
    pub refinery: T,
}

impl<T> PerStrategy<T> {
    pub fn from_fn(mut f: impl FnMut(StrategyKind) -> T) -> Self {
        Self {
            baseline: f(StrategyKind::Baseline),
            deployment: f(StrategyKind::Deployment),
            finetune: f(StrategyKind::Finetune),
            refinery: f(StrategyKind::Refinery),
        }
    }

    pub fn get(&self, k: StrategyKind) -> &T {
        match k {
            StrategyKind::Baseline => &self.baseline,
            StrategyKind::Deployment => &self.deployment,
            StrategyKind::Finetune => &self.finetune,
            StrategyKind::Refinery => &self.refinery,
        }
    }
}

/// Outcome of one strategy on one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: StrategyKind,
    pub stage: usize,
    pub epochs: usize,
    pub epoch_rates: Vec<f64>,
    pub final_rate: f64,
    pub rng: RngStream,
    pub config: FinetuneConfig,
}

/// Uniform probes with aggregated rollouts at each.
pub fn evaluate_policy(s: &StageSpec, cfg: &FinetuneConfig, rng: &RngStream) -> Result<(EvalDataset, f64)> {
    cfg.validate()?;
    let probes = uniform_sample(s.domain(), cfg.probe_count, &rng.child_named("probes"));
    let trials_rng = rng.child_named("trials");
    let mut ds = EvalDataset::new(s.domain().clone());
    for (i, p) in probes.iter().enumerate() {
        ds.push(rollout(s, p, cfg.rollouts_per_probe, &trials_rng.child(i as u64))?)?;
    }
    let rate = success_rate(&ds)?;
    Ok((ds, rate))
}

/// True once the last `window` rates span less than `tol` (max − min).
pub fn converged(history: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo < tol
}

/// Pooled rate over `trials` uniform deployments of a stage.
pub fn uniform_deployment_rate(s: &StageSpec, trials: u64, rng: &RngStream) -> Result<f64> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let artifacts = StageArtifacts::default();
    let mut wins = 0u64;
    for t in 0..trials {
        if deploy(s, StrategyKind::Baseline, &artifacts, &rng.child(t))?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / trials as f64)
}

fn propose_batch(
    s: &StageSpec,
    ds: &EvalDataset,
    cfg: &FinetuneConfig,
    rng: &RngStream,
) -> Result<ProposalBatch> {
    if cfg.uniform_proposals {
        return Ok(ProposalBatch {
            points: uniform_sample(s.domain(), cfg.batch, &rng.child_named("uniform")),
            scores: vec![0.0; cfg.batch],
        });
    }
    let model = gp::fit(ds, &cfg.hyperparameters, &rng.child_named("gp"))?;
    acquisition::propose(
        &model,
        &cfg.acquisition,
        s.domain(),
        cfg.batch,
        cfg.candidates,
        &rng.child_named("candidates"),
    )
}

/// Surrogate-guided fine-tuning loop.
///
/// Each epoch evaluates the current stage, stops if the evaluation history has
/// converged, and otherwise refits the GP on that epoch's data, proposes a
/// batch and applies the fine-tuning update at the proposed points.
pub fn finetune_stage(s: &StageSpec, cfg: &FinetuneConfig, rng: &RngStream) -> Result<(StageSpec, RunRecord)> {
    cfg.validate()?;
    let mut stage = s.clone();
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let erng = rng.child(epoch as u64);
        let (ds, rate) = evaluate_policy(&stage, cfg, &erng.child_named("evaluate"))?;
        history.push(rate);
        if converged(&history, cfg.conv_window, cfg.conv_tol) {
            break;
        }
        let batch = propose_batch(&stage, &ds, cfg, &erng.child_named("propose"))?;
        let oracle = finetune_update(stage.oracle(), &batch, cfg.eta, cfg.finetune_width)?;
        stage = stage.with_oracle(oracle);
    }
    let final_rate = uniform_deployment_rate(&stage, cfg.final_trials, &rng.child_named("final"))?;
    let record = RunRecord {
        strategy: StrategyKind::Finetune,
        stage: s.label(),
        epochs: history.len(),
        epoch_rates: history,
        final_rate,
        rng: *rng,
        config: cfg.clone(),
    };
    Ok((stage, record))
}

/// Mixture fitted to the successful rollouts of a uniform sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuccessModel {
    /// `None` when no rollout succeeded.
    pub gmm: Option<GmmModel>,
    pub rollouts: usize,
    pub successes: usize,
}

/// Collect `n` single uniform rollouts and fit a mixture to the successes.
///
/// Component count is chosen by BIC up to `k_max`. A lone success yields a
/// near-degenerate spherical component at that point; zero successes yield no
/// mixture (deployment then falls back to uniform initialization).
pub fn fit_success_model(s: &StageSpec, n: usize, k_max: usize, rng: &RngStream) -> Result<SuccessModel> {
    if n == 0 {
        return Err(invalid("gmm_rollouts", "must be at least 1"));
    }
    let points = uniform_sample(s.domain(), n, &rng.child_named("points"));
    let trials_rng = rng.child_named("trials");
    let mut succ = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if rollout(s, p, 1, &trials_rng.child(i as u64))?.successes == 1 {
            succ.push(p.clone());
        }
    }
    let gmm = match succ.len() {
        0 => None,
        1 => Some(gmm::fit_em(&succ, 1, &rng.child_named("em"))?.model),
        _ => Some(gmm::select_k(&succ, k_max, &rng.child_named("em"))?),
    };
    Ok(SuccessModel {
        gmm,
        rollouts: n,
        successes: succ.len(),
    })
}

/// Per-stage inputs needed by the non-baseline strategies.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageArtifacts {
    pub finetuned: Option<StageSpec>,
    pub baseline_gmm: Option<SuccessModel>,
    pub finetuned_gmm: Option<SuccessModel>,
    /// Candidate draws per mixture deployment.
    pub candidates: usize,
}

impl StageArtifacts {
    pub fn new(candidates: usize) -> Self {
        Self {
            candidates,
            ..Self::default()
        }
    }
}

/// Result of a single deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub chosen: InitState,
    pub success: bool,
    /// Mixture selection details, for the mixture strategies.
    pub selection: Option<Selection>,
    /// Mixture strategy fell back to uniform initialization (no successes to fit).
    pub uniform_fallback: bool,
}

fn choose_initialization(
    s: &StageSpec,
    strategy: StrategyKind,
    artifacts: &StageArtifacts,
    rng: &RngStream,
    trace: Option<&mut Vec<InitState>>,
) -> Result<(StageSpec, InitState, Option<Selection>, bool)> {
    let stage = if strategy.uses_finetuned() {
        artifacts
            .finetuned
            .clone()
            .ok_or(Error::MissingArtifact {
                strategy: strategy.name(),
                artifact: "finetuned",
            })?
    } else {
        s.clone()
    };
    let sel_rng = rng.child_named("select");
    if !strategy.uses_gmm() {
        let theta = uniform_sample(stage.domain(), 1, &sel_rng).remove(0);
        return Ok((stage, theta, None, false));
    }
    let (field, name) = match strategy {
        StrategyKind::Deployment => (&artifacts.baseline_gmm, "baseline_gmm"),
        _ => (&artifacts.finetuned_gmm, "finetuned_gmm"),
    };
    let model = field.as_ref().ok_or(Error::MissingArtifact {
        strategy: strategy.name(),
        artifact: name,
    })?;
    match &model.gmm {
        None => {
            let theta = uniform_sample(stage.domain(), 1, &sel_rng).remove(0);
            Ok((stage, theta, None, true))
        }
        Some(m) => {
            let count = if artifacts.candidates == 0 {
                gmm::DEFAULT_CANDIDATES
            } else {
                artifacts.candidates
            };
            let sel = match trace {
                Some(out) => {
                    let (sel, seen) = gmm::deploy_select_traced(m, count, stage.domain(), &sel_rng)?;
                    *out = seen;
                    sel
                }
                None => gmm::deploy_select(m, count, stage.domain(), &sel_rng)?,
            };
            Ok((stage, sel.point.clone(), Some(sel), false))
        }
    }
}

/// Choose an initialization for `strategy` and execute one rollout there.
pub fn deploy(
    s: &StageSpec,
    strategy: StrategyKind,
    artifacts: &StageArtifacts,
    rng: &RngStream,
) -> Result<Deployment> {
    deploy_inner(s, strategy, artifacts, rng, None)
}

/// [`deploy`] that also returns the scored mixture candidates.
pub fn deploy_traced(
    s: &StageSpec,
    strategy: StrategyKind,
    artifacts: &StageArtifacts,
    rng: &RngStream,
) -> Result<(Deployment, Vec<InitState>)> {
    let mut seen = Vec::new();
    let d = deploy_inner(s, strategy, artifacts, rng, Some(&mut seen))?;
    Ok((d, seen))
}

fn deploy_inner(
    s: &StageSpec,
    strategy: StrategyKind,
    artifacts: &StageArtifacts,
    rng: &RngStream,
    trace: Option<&mut Vec<InitState>>,
) -> Result<Deployment> {
    let (stage, chosen, selection, uniform_fallback) = choose_initialization(s, strategy, artifacts, rng, trace)?;
    let rec: EvalRecord = rollout(&stage, &chosen, 1, &rng.child_named("rollout"))?;
    Ok(Deployment {
        chosen,
        success: rec.successes == 1,
        selection,
        uniform_fallback,
    })
}

/// Build only the artifacts `strategy` needs for one stage.
pub fn prepare_artifacts(
    s: &StageSpec,
    strategy: StrategyKind,
    cfg: &FinetuneConfig,
    gmm_cfg: &GmmConfig,
    rng: &RngStream,
) -> Result<(StageArtifacts, Option<RunRecord>)> {
    let mut art = StageArtifacts::new(gmm_cfg.candidates);
    let mut record = None;
    if strategy.uses_finetuned() {
        let (improved, rec) = finetune_stage(s, cfg, &rng.child_named("finetune"))?;
        art.finetuned = Some(improved);
        record = Some(rec);
    }
    match strategy {
        StrategyKind::Deployment => {
            art.baseline_gmm = Some(fit_success_model(s, gmm_cfg.rollouts, gmm_cfg.k_max, &rng.child_named("gmm-baseline"))?);
        }
        StrategyKind::Refinery => {
            let improved = art.finetuned.as_ref().expect("fine-tuned above");
            art.finetuned_gmm = Some(fit_success_model(
                improved,
                gmm_cfg.rollouts,
                gmm_cfg.k_max,
                &rng.child_named("gmm-finetuned"),
            )?);
        }
        _ => {}
    }
    Ok((art, record))
}

/// Settings for success-mixture fitting and deployment-time selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    /// Uniform single rollouts collected before fitting (N).
    pub rollouts: usize,
    /// Candidates drawn per deployment (M).
    pub candidates: usize,
    pub k_max: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            rollouts: 1000,
            candidates: gmm::DEFAULT_CANDIDATES,
            k_max: gmm::DEFAULT_K_MAX,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 {
            return Err(invalid("gmm.rollouts", "must be at least 1"));
        }
        if self.candidates == 0 {
            return Err(invalid("gmm.candidates", "must be at least 1"));
        }
        if self.k_max == 0 {
            return Err(invalid("gmm.k_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// Ordered stages of one assembly and the strategy used at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub id: String,
    pub stages: Vec<StageSpec>,
    pub strategies: Vec<StrategyKind>,
}

impl ChainSpec {
    pub fn new(id: impl Into<String>, stages: Vec<StageSpec>, strategies: Vec<StrategyKind>) -> Result<Self> {
        if stages.is_empty() {
            return Err(invalid("stages", "a chain needs at least one stage"));
        }
        if strategies.len() != stages.len() {
            return Err(invalid("strategies", "one strategy per stage"));
        }
        Ok(Self {
            id: id.into(),
            stages,
            strategies,
        })
    }

    /// Same stages, one strategy everywhere.
    pub fn with_strategy(&self, k: StrategyKind) -> Self {
        Self {
            id: self.id.clone(),
            stages: self.stages.clone(),
            strategies: vec![k; self.stages.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub trials: u64,
    /// Fraction of trials in which every stage succeeded.
    pub sequence_rate: f64,
    /// Success rate of each stage among trials that reached it.
    pub per_stage_rates: Vec<f64>,
    pub per_stage_reached: Vec<u64>,
    /// Stage retries consumed across all trials.
    pub retries_used: u64,
}

/// Execute the chain `trials` times; a trial stops at the first stage that
/// fails once its retry budget (0, 1 or 2 retries per trial) is exhausted.
pub fn run_chain(
    c: &ChainSpec,
    artifacts: &[StageArtifacts],
    trials: u64,
    retries: u32,
    rng: &RngStream,
) -> Result<ChainResult> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if retries > 2 {
        return Err(invalid("retries", "at most 2 interventions per sequence"));
    }
    if artifacts.len() != c.stages.len() {
        return Err(invalid("artifacts", "one artifact set per stage"));
    }
    let n = c.stages.len();
    let mut reached = vec![0u64; n];
    let mut passed = vec![0u64; n];
    let mut complete = 0u64;
    let mut retries_used = 0u64;
    for t in 0..trials {
        let trng = rng.child(t);
        let mut budget = retries;
        let mut ok = true;
        for (i, (stage, strategy)) in c.stages.iter().zip(&c.strategies).enumerate() {
            reached[i] += 1;
            let srng = trng.child(i as u64);
            let mut attempt = 0u64;
            let stage_ok = loop {
                if deploy(stage, *strategy, &artifacts[i], &srng.child(attempt))?.success {
                    break true;
                }
                if budget == 0 {
                    break false;
                }
                budget -= 1;
                retries_used += 1;
                attempt += 1;
            };
            if !stage_ok {
                ok = false;
                break;
            }
            passed[i] += 1;
        }
        if ok {
            complete += 1;
        }
    }
    Ok(ChainResult {
        trials,
        sequence_rate: complete as f64 / trials as f64,
        per_stage_rates: reached
            .iter()
            .zip(&passed)
            .map(|(r, p)| if *r == 0 { 0.0 } else { *p as f64 / *r as f64 })
            .collect(),
        per_stage_reached: reached,
        retries_used,
    })
}

/// Benchmark settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seeds: usize,
    pub finetune: FinetuneConfig,
    pub gmm: GmmConfig,
    /// Deployments per (stage, strategy, seed).
    pub eval_trials: u64,
    /// Sequence executions per (chain, strategy, seed) for multi-stage chains.
    pub chain_trials: u64,
    pub retries: u32,
    /// Re-scan every mixture deployment's candidates to confirm the argmax.
    pub audit: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            finetune: FinetuneConfig::default(),
            gmm: GmmConfig::default(),
            eval_trials: 1000,
            chain_trials: 1000,
            retries: 0,
            audit: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds < 2 {
            return Err(invalid("seeds", "need at least 2 seeds"));
        }
        if self.eval_trials == 0 || self.chain_trials == 0 {
            return Err(invalid("eval_trials", "trial counts must be at least 1"));
        }
        if self.retries > 2 {
            return Err(invalid("retries", "at most 2"));
        }
        self.finetune.validate()?;
        self.gmm.validate()
    }
}

/// Settings for the generated benchmark suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub landscapes: usize,
    pub stages: usize,
    pub dim: usize,
    /// Rollout noise half-width as a fraction of the domain width.
    pub noise_fraction: f64,
    pub generator: LandscapeGenerator,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            landscapes: 10,
            stages: 1,
            dim: 2,
            noise_fraction: crate::oracle::DEFAULT_NOISE_FRACTION,
            generator: LandscapeGenerator::default(),
        }
    }
}

/// Generate `landscapes` chains of `stages` random stages over the unit box.
pub fn generate_suite(cfg: &SuiteConfig, rng: &RngStream) -> Result<Vec<ChainSpec>> {
    if cfg.landscapes == 0 || cfg.stages == 0 {
        return Err(invalid("suite", "need at least one landscape and one stage"));
    }
    let domain = Domain::unit(cfg.dim)?;
    (0..cfg.landscapes)
        .map(|l| {
            let stages = (0..cfg.stages)
                .map(|i| {
                    let field = cfg.generator.generate(&domain, &rng.child(l as u64).child(i as u64))?;
                    let noise = domain.widths().iter().map(|w| w * cfg.noise_fraction).collect();
                    StageSpec::new(i, field, noise)
                })
                .collect::<Result<Vec<_>>>()?;
            ChainSpec::new(format!("L{l:02}"), stages, vec![StrategyKind::Refinery; cfg.stages])
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorAudit {
    pub deployments: u64,
    pub candidates: u64,
    /// Deployments whose chosen point was out-scored by a candidate.
    pub violations: u64,
}

impl SelectorAudit {
    fn merge(&mut self, o: &SelectorAudit) {
        self.deployments += o.deployments;
        self.candidates += o.candidates;
        self.violations += o.violations;
    }
}

/// All four strategies on one stage for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCell {
    pub stage: usize,
    pub runs: Vec<RunRecord>,
    pub finetune_epochs: usize,
    pub baseline_successes: usize,
    pub finetuned_successes: usize,
    pub baseline_components: usize,
    pub finetuned_components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub chain_id: String,
    pub seed_index: usize,
    pub rng: RngStream,
    pub stages: Vec<StageCell>,
    pub sequence_rates: PerStrategy<f64>,
    pub audit: Option<SelectorAudit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n − 1) standard deviation.
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        if v.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub landscape_id: String,
    /// Sequence success across seeds.
    pub rates: PerStrategy<MeanStd>,
    /// Mean improvement over the baseline, in rate units.
    pub deltas: PerStrategy<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub master_seed: u64,
    pub config: BenchConfig,
    pub cells: Vec<CellRecord>,
    pub summary: Vec<SummaryRow>,
    /// Mean stage-level final rate over every (chain, stage, seed).
    pub strategy_means: PerStrategy<f64>,
    /// Standard deviation across landscapes of per-landscape mean sequence rates.
    pub across_landscape_std: PerStrategy<f64>,
    pub audit: Option<SelectorAudit>,
}

fn evaluate_strategy(
    stage: &StageSpec,
    strategy: StrategyKind,
    art: &StageArtifacts,
    trials: u64,
    audit: Option<&mut SelectorAudit>,
    rng: &RngStream,
) -> Result<f64> {
    let mut wins = 0u64;
    let mut local = SelectorAudit::default();
    let auditing = audit.is_some() && strategy.uses_gmm();
    for t in 0..trials {
        let drng = rng.child(t);
        let d = if auditing {
            let (d, seen) = deploy_traced(stage, strategy, art, &drng)?;
            if let Some(sel) = &d.selection {
                let model = match strategy {
                    StrategyKind::Deployment => art.baseline_gmm.as_ref(),
                    _ => art.finetuned_gmm.as_ref(),
                }
                .and_then(|m| m.gmm.as_ref())
                .expect("selection implies a mixture");
                let best = gmm::density(model, &sel.point)?;
                local.deployments += 1;
                local.candidates += seen.len() as u64;
                for c in &seen {
                    if gmm::density(model, c)? > best {
                        local.violations += 1;
                        break;
                    }
                }
            }
            d
        } else {
            deploy(stage, strategy, art, &drng)?
        };
        wins += d.success as u64;
    }
    if let Some(a) = audit {
        a.merge(&local);
    }
    Ok(wins as f64 / trials as f64)
}

fn run_cell(chain: &ChainSpec, seed_index: usize, cfg: &BenchConfig, rng: &RngStream) -> Result<CellRecord> {
    let mut stages = Vec::with_capacity(chain.stages.len());
    let mut all_art = Vec::with_capacity(chain.stages.len());
    let mut audit = cfg.audit.then(SelectorAudit::default);
    for (i, s) in chain.stages.iter().enumerate() {
        let srng = rng.child(i as u64);
        let (improved, ft_record) = finetune_stage(s, &cfg.finetune, &srng.child_named("finetune"))?;
        let base_gmm = fit_success_model(s, cfg.gmm.rollouts, cfg.gmm.k_max, &srng.child_named("gmm-baseline"))?;
        let ft_gmm = fit_success_model(&improved, cfg.gmm.rollouts, cfg.gmm.k_max, &srng.child_named("gmm-finetuned"))?;
        let art = StageArtifacts {
            finetuned: Some(improved),
            baseline_gmm: Some(base_gmm),
            finetuned_gmm: Some(ft_gmm),
            candidates: cfg.gmm.candidates,
        };
        // Common random numbers: every arm sees the same per-trial streams.
        let eval_rng = srng.child_named("evaluate");
        let mut runs = Vec::with_capacity(4);
        for k in StrategyKind::ALL {
            let rate = evaluate_strategy(s, k, &art, cfg.eval_trials, audit.as_mut(), &eval_rng)?;
            let (epochs, epoch_rates) = if k.uses_finetuned() {
                (ft_record.epochs, ft_record.epoch_rates.clone())
            } else {
                (0, Vec::new())
            };
            runs.push(RunRecord {
                strategy: k,
                stage: s.label(),
                epochs,
                epoch_rates,
                final_rate: rate,
                rng: eval_rng,
                config: cfg.finetune.clone(),
            });
        }
        let comps = |m: &Option<SuccessModel>| m.as_ref().and_then(|m| m.gmm.as_ref()).map_or(0, |g| g.n_components());
        let succ = |m: &Option<SuccessModel>| m.as_ref().map_or(0, |m| m.successes);
        stages.push(StageCell {
            stage: s.label(),
            finetune_epochs: ft_record.epochs,
            baseline_successes: succ(&art.baseline_gmm),
            finetuned_successes: succ(&art.finetuned_gmm),
            baseline_components: comps(&art.baseline_gmm),
            finetuned_components: comps(&art.finetuned_gmm),
            runs,
        });
        all_art.push(art);
    }
    let sequence_rates = if chain.stages.len() == 1 {
        PerStrategy::from_fn(|k| stages[0].runs.iter().find(|r| r.strategy == k).map_or(0.0, |r| r.final_rate))
    } else {
        let crng = rng.child_named("chain");
        let mut out = PerStrategy::<f64>::default();
        for k in StrategyKind::ALL {
            let res = run_chain(&chain.with_strategy(k), &all_art, cfg.chain_trials, cfg.retries, &crng)?;
            match k {
                StrategyKind::Baseline => out.baseline = res.sequence_rate,
                StrategyKind::Deployment => out.deployment = res.sequence_rate,
                StrategyKind::Finetune => out.finetune = res.sequence_rate,
                StrategyKind::Refinery => out.refinery = res.sequence_rate,
            }
        }
        out
    };
    Ok(CellRecord {
        chain_id: chain.id.clone(),
        seed_index,
        rng: *rng,
        stages,
        sequence_rates,
        audit,
    })
}

fn summarize(suite: &[ChainSpec], cells: &[CellRecord]) -> (Vec<SummaryRow>, PerStrategy<f64>, PerStrategy<f64>) {
    let rows: Vec<SummaryRow> = suite
        .iter()
        .map(|c| {
            let mine: Vec<&CellRecord> = cells.iter().filter(|r| r.chain_id == c.id).collect();
            let rates = PerStrategy::from_fn(|k| {
                MeanStd::of(&mine.iter().map(|r| *r.sequence_rates.get(k)).collect::<Vec<_>>())
            });
            let base = rates.baseline.mean;
            let deltas = PerStrategy::from_fn(|k| rates.get(k).mean - base);
            SummaryRow {
                landscape_id: c.id.clone(),
                rates,
                deltas,
            }
        })
        .collect();
    let means = PerStrategy::from_fn(|k| {
        let v: Vec<f64> = cells
            .iter()
            .flat_map(|c| c.stages.iter())
            .flat_map(|s| s.runs.iter())
            .filter(|r| r.strategy == k)
            .map(|r| r.final_rate)
            .collect();
        MeanStd::of(&v).mean
    });
    let spread = PerStrategy::from_fn(|k| {
        let v: Vec<f64> = rows.iter().map(|r| r.rates.get(k).mean).collect();
        MeanStd::of(&v).std
    });
    (rows, means, spread)
}

/// Run every strategy on every (chain, stage, seed) cell.
///
/// Per cell: fine-tune the stage, fit success mixtures for the baseline and
/// fine-tuned stages, then evaluate each strategy over `eval_trials`
/// deployments (and `chain_trials` full sequences for multi-stage chains).
/// Cells run in parallel on the current rayon pool; results do not depend on
/// the number of threads.
pub fn run_benchmark(suite: &[ChainSpec], cfg: &BenchConfig, master_seed: u64) -> Result<BenchReport> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(invalid("suite", "empty suite"));
    }
    let master = RngStream::from_seed(master_seed).child_named("benchmark");
    let jobs: Vec<(usize, usize)> = (0..suite.len())
        .flat_map(|c| (0..cfg.seeds).map(move |s| (c, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(c, s)| run_cell(&suite[c], s, cfg, &master.child(c as u64).child(s as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (summary, strategy_means, across_landscape_std) = summarize(suite, &cells);
    let audit = cfg.audit.then(|| {
        let mut total = SelectorAudit::default();
        for c in &cells {
            if let Some(a) = &c.audit {
                total.merge(a);
            }
        }
        total
    });
    Ok(BenchReport {
        master_seed,
        config: cfg.clone(),
        cells,
        summary,
        strategy_means,
        across_landscape_std,
        audit,
    })
}

/// Fine-tuning outcome for one proposal rule across a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalArm {
    /// `ucb`, `pi`, `ei` or `uniform`.
    pub name: String,
    /// `final_rates[landscape][seed]`.
    pub final_rates: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
}

/// Fine-tune every stage under each acquisition kind and under uniform
/// proposals, with the same per-(landscape, seed) streams for every arm.
pub fn compare_acquisitions(
    suite: &[ChainSpec],
    base: &FinetuneConfig,
    seeds: usize,
    master_seed: u64,
) -> Result<Vec<ProposalArm>> {
    base.validate()?;
    if seeds == 0 {
        return Err(invalid("seeds", "need at least 1 seed"));
    }
    let master = RngStream::from_seed(master_seed).child_named("acquisition-comparison");
    let mut arms: Vec<(String, FinetuneConfig)> = crate::acquisition::AcquisitionKind::ALL
        .iter()
        .map(|k| {
            let mut c = base.clone();
            c.acquisition.kind = *k;
            c.uniform_proposals = false;
            (k.name().to_string(), c)
        })
        .collect();
    let mut uni = base.clone();
    uni.uniform_proposals = true;
    arms.push(("uniform".to_string(), uni));

    arms.into_iter()
        .map(|(name, cfg)| {
            let final_rates = suite
                .par_iter()
                .enumerate()
                .map(|(l, chain)| {
                    (0..seeds)
                        .map(|s| {
                            let rng = master.child(l as u64).child(s as u64);
                            let mut acc = 0.0;
                            for (i, st) in chain.stages.iter().enumerate() {
                                acc += finetune_stage(st, &cfg, &rng.child(i as u64))?.1.final_rate;
                            }
                            Ok(acc / chain.stages.len() as f64)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let flat: Vec<f64> = final_rates.iter().flatten().copied().collect();
            let ms = MeanStd::of(&flat);
            Ok(ProposalArm {
                name,
                final_rates,
                mean: ms.mean,
                std: ms.std,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleField;

    #[test]
    fn convergence_examples() {
        assert!(converged(&[0.80, 0.81, 0.80, 0.80, 0.81], 5, 0.05));
        assert!(!converged(&[0.5, 0.6, 0.7, 0.8, 0.9], 5, 0.05));
        assert!(!converged(&[0.8, 0.8, 0.8, 0.8], 5, 0.05));
        assert!(converged(&[0.1, 0.9, 0.80, 0.81, 0.80, 0.80, 0.81], 5, 0.05));
        assert!(!converged(&[0.80, 0.86, 0.80, 0.80, 0.80], 5, 0.05));
    }

    #[test]
    fn config_validation() {
        let mut c = FinetuneConfig::default();
        assert!(c.validate().is_ok());
        c.probe_count = 4;
        c.rollouts_per_probe = 5;
        assert!(c.validate().is_err());
        let c = FinetuneConfig { conv_window: 1, ..FinetuneConfig::default() };
        assert!(c.validate().is_err());
        let c = FinetuneConfig { eta: 0.0, ..FinetuneConfig::default() };
        assert!(c.validate().is_err());
        let err = serde_json::from_str::<FinetuneConfig>(r#"{"acquisition":{"kind":"xyz"}}"#).unwrap_err();
        assert!(err.to_string().contains("xyz"));
    }

    #[test]
    fn strategy_names() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("best".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn missing_artifacts_are_errors() {
        let dom = Domain::unit(2).unwrap();
        let s = StageSpec::with_default_noise(0, OracleField::constant(dom, 0.5).unwrap()).unwrap();
        let art = StageArtifacts::default();
        let rng = RngStream::from_seed(0);
        for k in [StrategyKind::Deployment, StrategyKind::Finetune, StrategyKind::Refinery] {
            assert!(matches!(deploy(&s, k, &art, &rng), Err(Error::MissingArtifact { .. })));
        }
        assert!(deploy(&s, StrategyKind::Baseline, &art, &rng).is_ok());
    }

    #[test]
    fn zero_success_mixture_falls_back_to_uniform() {
        let dom = Domain::unit(2).unwrap();
        let s = StageSpec::with_default_noise(0, OracleField::constant(dom, 0.0).unwrap()).unwrap();
        let m = fit_success_model(&s, 200, 8, &RngStream::from_seed(1)).unwrap();
        assert!(m.gmm.is_none());
        assert_eq!(m.successes, 0);
        let art = StageArtifacts {
            baseline_gmm: Some(m),
            ..StageArtifacts::new(10)
        };
        let d = deploy(&s, StrategyKind::Deployment, &art, &RngStream::from_seed(2)).unwrap();
        assert!(d.uniform_fallback);
        assert!(!d.success);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }
}
