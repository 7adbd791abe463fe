//! Acquisition functions over the GP posterior and the batch maximizer that
//! picks fine-tuning initializations.

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, InitState};
use crate::error::{invalid, Error, Result};
use crate::gp::{GpModel, NOISE_FLOOR};
use crate::normal;
use crate::rng::RngStream;

pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_CANDIDATES: usize = 4096;
pub const DEFAULT_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Ucb,
    Pi,
    Ei,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 3] = [Self::Ucb, Self::Pi, Self::Ei];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ucb => "ucb",
            Self::Pi => "pi",
            Self::Ei => "ei",
        }
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ucb" => Ok(Self::Ucb),
            "pi" => Ok(Self::Pi),
            "ei" => Ok(Self::Ei),
            other => Err(invalid(
                "acquisition.kind",
                format!("unknown acquisition `{other}`, expected ucb, pi or ei"),
            )),
        }
    }
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Acquisition function choice. The incumbent is always the best observed
/// empirical success rate among the model's training targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self::new(AcquisitionKind::Ucb)
    }
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self {
            kind,
            beta: DEFAULT_BETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(invalid("acquisition.beta", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn score(&self, mean: f64, std: f64, incumbent: f64) -> f64 {
        match self.kind {
            AcquisitionKind::Ucb => ucb(mean, std, self.beta),
            AcquisitionKind::Pi => pi(mean, std, incumbent),
            AcquisitionKind::Ei => ei(mean, std, incumbent),
        }
    }
}

/// Upper confidence bound `μ + βσ`.
pub fn ucb(mean: f64, std: f64, beta: f64) -> f64 {
    mean + beta * std
}

/// Probability of improvement `Φ((μ − J⁺)/σ)`; a step function at `σ = 0`.
pub fn pi(mean: f64, std: f64, incumbent: f64) -> f64 {
    if std <= 0.0 {
        return if mean > incumbent { 1.0 } else { 0.0 };
    }
    normal::cdf((mean - incumbent) / std)
}

/// Expected improvement `(μ − J⁺)Φ(Z) + σφ(Z)`, `Z = (μ − J⁺)/σ`.
pub fn ei(mean: f64, std: f64, incumbent: f64) -> f64 {
    let diff = mean - incumbent;
    if std <= 0.0 {
        return diff.max(0.0);
    }
    let z = diff / std;
    // h(z) = zΦ(z) + φ(z) and h(z) = z + h(−z); evaluating on the negative
    // side keeps both EI ≥ 0 and EI ≥ μ − J⁺ exact in floating point.
    let h = |z: f64| (z * normal::cdf(z) + normal::pdf(z)).max(0.0);
    if z >= 0.0 {
        diff + std * h(-z)
    } else {
        std * h(z)
    }
}

/// Initializations chosen for one fine-tuning epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalBatch {
    pub points: Vec<InitState>,
    pub scores: Vec<f64>,
}

impl ProposalBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Greedy batch argmax of the acquisition over a candidate set.
///
/// Candidates are `candidates` uniform draws followed by the training inputs.
/// After each pick, a pseudo-observation equal to the incumbent (noise
/// variance 1e-4) is conditioned into the posterior of every candidate
/// (constant liar), and picked candidates are excluded. Ties go to the
/// lowest candidate index.
pub fn propose(
    model: &GpModel,
    spec: &AcquisitionSpec,
    domain: &Domain,
    batch: usize,
    candidates: usize,
    rng: &RngStream,
) -> Result<ProposalBatch> {
    spec.validate()?;
    if batch == 0 {
        return Err(invalid("batch", "must be at least 1"));
    }
    if batch > candidates {
        return Err(invalid(
            "batch",
            format!("batch size {batch} exceeds candidate count {candidates}"),
        ));
    }
    if model.dim() != domain.dim() {
        return Err(Error::DimMismatch {
            expected: domain.dim(),
            got: model.dim(),
        });
    }

    let mut g = rng.generator();
    let mut pool: Vec<InitState> = (0..candidates).map(|_| domain.sample_point(&mut g)).collect();
    pool.extend(model.train_x().iter().filter(|x| domain.contains(x)).cloned());

    let incumbent = model
        .train_y()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);

    let n = model.len();
    let m = pool.len();
    let mut mean = Vec::with_capacity(m);
    let mut var = Vec::with_capacity(m);
    let mut whitened = Vec::with_capacity(m * n);
    for c in &pool {
        let (mu, v2, w) = model.predict_raw(c.coords());
        mean.push(mu);
        var.push(v2);
        whitened.extend_from_slice(&w);
    }

    let params = model.params();
    let mut picked = vec![false; m];
    // updates[t][c]: posterior covariance with pick t, scaled by its predictive sd.
    let mut updates: Vec<Vec<f64>> = Vec::with_capacity(batch);
    let mut out = ProposalBatch {
        points: Vec::with_capacity(batch),
        scores: Vec::with_capacity(batch),
    };

    for t in 0..batch {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..m {
            if picked[c] {
                continue;
            }
            let s = spec.score(mean[c], var[c].sqrt(), incumbent);
            if s.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((c, s));
            }
        }
        let Some((b, score)) = best else {
            return Err(Error::NonFinite("acquisition scores"));
        };
        picked[b] = true;
        out.points.push(pool[b].clone());
        out.scores.push(score);

        if t + 1 == batch {
            break;
        }
        let sd = (var[b] + NOISE_FLOOR).sqrt();
        let resid = incumbent - mean[b];
        let wb = &whitened[b * n..(b + 1) * n];
        let xb = pool[b].coords();
        let mut e = vec![0.0; m];
        for c in 0..m {
            let wc = &whitened[c * n..(c + 1) * n];
            let mut cov = params.eval(pool[c].coords(), xb)
                - wc.iter().zip(wb).map(|(a, b)| a * b).sum::<f64>();
            for u in &updates {
                cov -= u[c] * u[b];
            }
            e[c] = cov / sd;
        }
        for c in 0..m {
            mean[c] += e[c] * resid / sd;
            var[c] = (var[c] - e[c] * e[c]).max(0.0);
        }
        updates.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use std::f64::consts::PI;

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb(0.5, 0.1, 2.0), 0.7);
        assert_eq!(ucb(0.9, 0.0, 2.0), 0.9);
        assert_eq!(ucb(0.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn pi_examples() {
        assert!((pi(0.6, 0.2, 0.6) - 0.5).abs() < 1e-12);
        assert_eq!(pi(0.3, 0.0, 0.5), 0.0);
        assert_eq!(pi(0.7, 0.0, 0.5), 1.0);
        assert!((pi(0.7, 0.1, 0.5) - normal::cdf(2.0)).abs() < 1e-15);
    }

    #[test]
    fn ei_examples() {
        assert!((ei(0.4, 1.0, 0.4) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((ei(0.8, 0.0, 0.5) - 0.3).abs() < 1e-15);
        assert_eq!(ei(0.2, 0.0, 0.5), 0.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("UCB".parse::<AcquisitionKind>().unwrap(), AcquisitionKind::Ucb);
        let err = "thompson".parse::<AcquisitionKind>().unwrap_err();
        assert!(err.to_string().contains("acquisition.kind"));
        let spec: AcquisitionSpec = serde_json::from_str(r#"{"kind":"ei"}"#).unwrap();
        assert_eq!(spec.beta, 2.0);
        assert_eq!(spec.kind, AcquisitionKind::Ei);
    }

    fn toy_model() -> GpModel {
        let x = vec![
            InitState::new(vec![0.2, 0.2]),
            InitState::new(vec![0.25, 0.3]),
            InitState::new(vec![0.8, 0.7]),
        ];
        let p = KernelParams::isotropic(0.2, 0.15, 2).unwrap();
        GpModel::from_targets(p, 0.5, x, vec![0.3, 0.4, 0.9], vec![1e-3; 3]).unwrap()
    }

    #[test]
    fn batch_points_distinct_and_in_domain() {
        let dom = Domain::unit(2).unwrap();
        let m = toy_model();
        let spec = AcquisitionSpec::default();
        let b = propose(&m, &spec, &dom, 3, 64, &RngStream::from_seed(5)).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.scores.len(), 3);
        for i in 0..3 {
            assert!(dom.contains(&b.points[i]));
            for j in 0..i {
                assert_ne!(b.points[i], b.points[j]);
            }
        }
    }

    #[test]
    fn errors() {
        let dom = Domain::unit(2).unwrap();
        let m = toy_model();
        let spec = AcquisitionSpec::default();
        let rng = RngStream::from_seed(0);
        assert!(propose(&m, &spec, &dom, 5, 4, &rng).is_err());
        assert!(propose(&m, &spec, &dom, 0, 4, &rng).is_err());
        assert!(propose(&m, &spec, &Domain::unit(3).unwrap(), 1, 4, &rng).is_err());
        let bad = AcquisitionSpec {
            kind: AcquisitionKind::Ucb,
            beta: f64::NAN,
        };
        assert!(propose(&m, &bad, &dom, 1, 4, &rng).is_err());
    }

    #[test]
    fn deterministic_given_rng() {
        let dom = Domain::unit(2).unwrap();
        let m = toy_model();
        for kind in AcquisitionKind::ALL {
            let spec = AcquisitionSpec::new(kind);
            let a = propose(&m, &spec, &dom, 4, 200, &RngStream::new(9, 1)).unwrap();
            let b = propose(&m, &spec, &dom, 4, 200, &RngStream::new(9, 1)).unwrap();
            assert_eq!(a, b);
        }
    }
}
