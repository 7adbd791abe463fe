//! Run configuration: a single JSON document, overridden field by field by
//! command-line flags.

use std::path::Path;

use refinery_core::engine::{BenchConfig, FinetuneConfig, GmmConfig, StrategyKind, SuiteConfig};
use refinery_core::StageSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub suite: SuiteConfig,
    /// Generated chain used by the single-landscape commands.
    pub landscape: usize,
    /// Stage of that chain used by eval-map, finetune and deploy.
    pub stage: usize,
    /// Explicit stages; replace the generated chain when present.
    pub stages: Option<Vec<StageSpec>>,
    pub finetune: FinetuneConfig,
    pub gmm: GmmConfig,
    pub bench: BenchSection,
    pub map: MapSection,
    pub deploy: DeploySection,
    pub chain: ChainSection,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub seeds: usize,
    pub eval_trials: u64,
    pub chain_trials: u64,
    pub retries: u32,
    pub audit: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            seeds: b.seeds,
            eval_trials: b.eval_trials,
            chain_trials: b.chain_trials,
            retries: b.retries,
            audit: b.audit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub resolution: [usize; 2],
    /// One entry per dimension, `null` for the two plotted ones. Defaults to
    /// the first two dimensions free and the rest at the domain centre.
    pub slice: Option<Vec<Option<f64>>>,
}

impl Default for MapSection {
    fn default() -> Self {
        Self {
            resolution: [256, 256],
            slice: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploySection {
    pub strategy: StrategyKind,
    pub deployments: u64,
}

impl Default for DeploySection {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Deployment,
            deployments: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub strategy: StrategyKind,
    pub trials: u64,
    pub retries: u32,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Refinery,
            trials: 1000,
            retries: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            seeds: self.bench.seeds,
            finetune: self.finetune.clone(),
            gmm: self.gmm.clone(),
            eval_trials: self.bench.eval_trials,
            chain_trials: self.bench.chain_trials,
            retries: self.bench.retries,
            audit: self.bench.audit,
        }
    }

    /// Canonical serialization; its SHA-256 identifies the run.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
