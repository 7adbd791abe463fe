//! Surrogate-guided fine-tuning and deployment-time initialization selection
//! for chains of stochastic policies.
//!
//! The crate models each stage of a multi-part assembly as a success field
//! over a bounded initialization space. Fine-tuning fits a Gaussian-process
//! surrogate to rollout outcomes and proposes initializations by maximizing
//! an acquisition function ([`engine::finetune_stage`]). Deployment fits a
//! Gaussian mixture to successful rollouts and starts each execution at the
//! highest-density draw ([`gmm::deploy_select`]).

pub mod acquisition;
pub mod dataset;
pub mod domain;
pub mod engine;
pub mod error;
pub mod gmm;
pub mod gp;
pub mod linalg;
pub mod normal;
pub mod oracle;
pub mod report;
pub mod rng;

pub use acquisition::{AcquisitionKind, AcquisitionSpec, ProposalBatch};
pub use dataset::{success_rate, EvalDataset, EvalRecord};
pub use domain::{uniform_sample, Domain, InitState};
pub use error::{Error, Result};
pub use gmm::GmmModel;
pub use gp::{GpModel, Hyperparameters, KernelParams};
pub use oracle::{OracleField, StageSpec};
pub use rng::RngStream;
