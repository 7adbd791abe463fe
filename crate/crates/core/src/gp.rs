//! Gaussian-process surrogate of the success-rate field.
//!
//! Exact GP regression with a squared-exponential ARD kernel, a constant
//! prior mean equal to the pooled success rate, and per-point binomial
//! observation noise. Kernel hyperparameters are either supplied or chosen
//! by maximizing the log marginal likelihood with a seeded multi-start search
//! followed by coordinate-wise golden-section refinement.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dataset::{success_rate, EvalDataset};
use crate::domain::{Domain, InitState};
use crate::error::{invalid, Error, Result};
use crate::linalg::Cholesky;
use crate::rng::RngStream;

/// Training-set size limit for the dense solver.
pub const MAX_TRAINING_RECORDS: usize = 2000;
/// Lower bound on per-point observation noise variance.
pub const NOISE_FLOOR: f64 = 1e-4;
pub const DEFAULT_JITTER: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;

const AUTO_STARTS: usize = 32;
const AUTO_REFINE_ITERS: usize = 100;
const LENGTHSCALE_RANGE: (f64, f64) = (0.05, 2.0);
const SIGNAL_VARIANCE_RANGE: (f64, f64) = (0.01, 1.0);

/// Squared-exponential ARD kernel parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let p = Self {
            signal_variance,
            lengthscales,
            jitter: DEFAULT_JITTER,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same lengthscale in every dimension.
    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) {
            return Err(invalid("signal_variance", "must be positive and finite"));
        }
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(invalid("lengthscales", "must be non-empty, positive and finite"));
        }
        if !ok(self.jitter) {
            return Err(invalid("jitter", "must be positive and finite"));
        }
        Ok(())
    }

    /// Kernel evaluation on raw coordinates; dimensions are not checked.
    #[inline]
    pub(crate) fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let t = (x - y) / l;
            r2 += t * t;
        }
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// `σ² exp(−½ Σ ((a_j − b_j)/ℓ_j)²)`.
pub fn kernel(a: &InitState, b: &InitState, p: &KernelParams) -> Result<f64> {
    for x in [a, b] {
        if x.dim() != p.dim() {
            return Err(Error::DimMismatch {
                expected: p.dim(),
                got: x.dim(),
            });
        }
    }
    Ok(p.eval(a.coords(), b.coords()))
}

/// How kernel hyperparameters are chosen when fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hyperparameters {
    Fixed(KernelParams),
    Auto,
}

/// A fitted GP posterior.
#[derive(Clone, Debug)]
pub struct GpModel {
    params: KernelParams,
    mean_const: f64,
    train_x: Vec<InitState>,
    train_y: Vec<f64>,
    noise_var: Vec<f64>,
    jitter_used: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

/// Noisy Gram matrix `K + diag(noise) + jitter I`.
fn noisy_gram(params: &KernelParams, x: &[InitState], noise: &[f64], jitter: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = params.eval(x[i].coords(), x[j].coords());
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] = params.signal_variance + noise[i] + jitter;
    }
    k
}

/// Factor with escalating jitter (×10 per attempt, up to 1e-2).
fn factor_with_jitter(
    params: &KernelParams,
    x: &[InitState],
    noise: &[f64],
) -> Result<(Cholesky, f64)> {
    let n = x.len();
    let mut jitter = params.jitter;
    loop {
        let gram = noisy_gram(params, x, noise, jitter);
        if let Some(c) = Cholesky::new(&gram, n) {
            return Ok((c, jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    }
}

fn lml_from_parts(chol: &Cholesky, centered: &[f64], alpha: &[f64]) -> f64 {
    let n = centered.len() as f64;
    let fit: f64 = centered.iter().zip(alpha).map(|(a, b)| a * b).sum();
    -0.5 * fit - chol.sum_log_diag() - 0.5 * n * (2.0 * PI).ln()
}

impl GpModel {
    /// Condition a GP on explicit targets and noise variances.
    pub fn from_targets(
        params: KernelParams,
        mean_const: f64,
        train_x: Vec<InitState>,
        train_y: Vec<f64>,
        noise_var: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        if train_x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if train_x.len() > MAX_TRAINING_RECORDS {
            return Err(Error::TooManyRecords {
                got: train_x.len(),
                limit: MAX_TRAINING_RECORDS,
            });
        }
        if train_y.len() != train_x.len() || noise_var.len() != train_x.len() {
            return Err(invalid("train_y", "targets, noise and inputs differ in length"));
        }
        for x in &train_x {
            if x.dim() != params.dim() {
                return Err(Error::DimMismatch {
                    expected: params.dim(),
                    got: x.dim(),
                });
            }
            if x.coords().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("training inputs"));
            }
        }
        if !mean_const.is_finite() || train_y.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        if noise_var.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("noise_var", "must be finite and non-negative"));
        }
        let (chol, jitter_used) = factor_with_jitter(&params, &train_x, &noise_var)?;
        let centered: Vec<f64> = train_y.iter().map(|y| y - mean_const).collect();
        let alpha = chol.solve(&centered);
        Ok(Self {
            params,
            mean_const,
            train_x,
            train_y,
            noise_var,
            jitter_used,
            chol,
            alpha,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn mean_const(&self) -> f64 {
        self.mean_const
    }

    pub fn train_x(&self) -> &[InitState] {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn chol(&self) -> &Cholesky {
        &self.chol
    }

    /// Diagonal jitter actually applied after escalation.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn len(&self) -> usize {
        self.train_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.is_empty()
    }

    /// The noisy Gram matrix this model factored.
    pub fn gram(&self) -> Vec<f64> {
        noisy_gram(&self.params, &self.train_x, &self.noise_var, self.jitter_used)
    }

    /// Prior covariances `k(X, q)` with the training inputs.
    pub fn cross_cov(&self, q: &[f64]) -> Vec<f64> {
        self.train_x
            .iter()
            .map(|x| self.params.eval(x.coords(), q))
            .collect()
    }

    fn check(&self, q: &InitState) -> Result<()> {
        if q.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: q.dim(),
            });
        }
        Ok(())
    }

    /// Posterior mean and standard deviation of the latent success rate.
    pub fn predict(&self, q: &InitState) -> Result<(f64, f64)> {
        self.check(q)?;
        let (mean, var, _) = self.predict_raw(q.coords());
        Ok((mean, var.sqrt()))
    }

    /// Mean, clamped variance and whitened cross-covariance `L⁻¹ k_*`.
    pub(crate) fn predict_raw(&self, q: &[f64]) -> (f64, f64, Vec<f64>) {
        let ks = self.cross_cov(q);
        let mean = self.mean_const + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = self.chol.solve_lower(&ks);
        let explained: f64 = v.iter().map(|t| t * t).sum();
        let var = (self.params.signal_variance - explained).max(0.0);
        (mean, var, v)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let centered: Vec<f64> = self.train_y.iter().map(|y| y - self.mean_const).collect();
        lml_from_parts(&self.chol, &centered, &self.alpha)
    }
}

/// Targets and binomial noise derived from aggregated records.
struct Targets {
    x: Vec<InitState>,
    y: Vec<f64>,
    noise: Vec<f64>,
    mean: f64,
}

fn targets(ds: &EvalDataset) -> Result<Targets> {
    let mean = success_rate(ds).map_err(|_| Error::EmptyDataset)?;
    let mut t = Targets {
        x: Vec::new(),
        y: Vec::new(),
        noise: Vec::new(),
        mean,
    };
    for r in ds.records() {
        let Some(p) = r.rate() else { continue };
        t.x.push(r.state.clone());
        t.y.push(p);
        t.noise.push(p * (1.0 - p) / r.trials as f64 + NOISE_FLOOR);
    }
    Ok(t)
}

/// Fit the surrogate to a dataset.
///
/// The prior mean is the pooled success rate and each record contributes
/// noise variance `p̂(1 − p̂)/trials + 1e-4`. With [`Hyperparameters::Auto`] the
/// kernel is chosen by [`optimize_hyperparameters`], deterministically in `rng`.
pub fn fit(ds: &EvalDataset, hyper: &Hyperparameters, rng: &RngStream) -> Result<GpModel> {
    let t = targets(ds)?;
    if t.x.len() > MAX_TRAINING_RECORDS {
        return Err(Error::TooManyRecords {
            got: t.x.len(),
            limit: MAX_TRAINING_RECORDS,
        });
    }
    let params = match hyper {
        Hyperparameters::Fixed(p) => {
            if p.dim() != ds.domain().dim() {
                return Err(Error::DimMismatch {
                    expected: ds.domain().dim(),
                    got: p.dim(),
                });
            }
            p.clone()
        }
        Hyperparameters::Auto => {
            optimize_hyperparameters(ds.domain(), &t.x, &t.y, &t.noise, t.mean, rng)
        }
    };
    GpModel::from_targets(params, t.mean, t.x, t.y, t.noise)
}

fn lml_at(
    log_params: &[f64],
    x: &[InitState],
    centered: &[f64],
    noise: &[f64],
) -> f64 {
    let params = KernelParams {
        signal_variance: log_params[0].exp(),
        lengthscales: log_params[1..].iter().map(|v| v.exp()).collect(),
        jitter: DEFAULT_JITTER,
    };
    match factor_with_jitter(&params, x, noise) {
        Ok((chol, _)) => {
            let alpha = chol.solve(centered);
            lml_from_parts(&chol, centered, &alpha)
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Maximize the log marginal likelihood over `(σ², ℓ_1..ℓ_d)` in log space.
///
/// Search box: `σ² ∈ [0.01, 1]`, `ℓ_j ∈ [0.05, 2]·width_j`. 32 random starts
/// pick an incumbent, then coordinate sweeps of golden-section search refine
/// it for 100 line-search iterations, with the bracket halving every sweep.
pub fn optimize_hyperparameters(
    domain: &Domain,
    x: &[InitState],
    y: &[f64],
    noise: &[f64],
    mean: f64,
    rng: &RngStream,
) -> KernelParams {
    let d = domain.dim();
    let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut bounds = Vec::with_capacity(d + 1);
    bounds.push((SIGNAL_VARIANCE_RANGE.0.ln(), SIGNAL_VARIANCE_RANGE.1.ln()));
    for j in 0..d {
        let w = domain.width(j);
        bounds.push(((LENGTHSCALE_RANGE.0 * w).ln(), (LENGTHSCALE_RANGE.1 * w).ln()));
    }
    let objective = |p: &[f64]| lml_at(p, x, &centered, noise);

    let mut g = rng.generator();
    let mut best: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut best_val = objective(&best);
    for _ in 0..AUTO_STARTS {
        let cand: Vec<f64> = bounds
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * g.random::<f64>())
            .collect();
        let v = objective(&cand);
        if v > best_val {
            best_val = v;
            best = cand;
        }
    }

    const STEPS_PER_LINE: usize = 5;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut half_width: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.25 * (hi - lo)).collect();
    let mut iters = 0;
    'sweeps: while iters < AUTO_REFINE_ITERS {
        for c in 0..bounds.len() {
            let (blo, bhi) = bounds[c];
            let mut a = (best[c] - half_width[c]).max(blo);
            let mut b = (best[c] + half_width[c]).min(bhi);
            let mut probe = best.clone();
            let eval = |t: f64, probe: &mut Vec<f64>| {
                probe[c] = t;
                objective(probe)
            };
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let mut f1 = eval(x1, &mut probe);
            let mut f2 = eval(x2, &mut probe);
            for _ in 0..STEPS_PER_LINE {
                if iters >= AUTO_REFINE_ITERS {
                    break;
                }
                iters += 1;
                if f1 >= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - inv_phi * (b - a);
                    f1 = eval(x1, &mut probe);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + inv_phi * (b - a);
                    f2 = eval(x2, &mut probe);
                }
            }
            let (t, f) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
            if f > best_val {
                best_val = f;
                best[c] = t;
            }
            if iters >= AUTO_REFINE_ITERS {
                break 'sweeps;
            }
        }
        for w in &mut half_width {
            *w *= 0.5;
        }
    }

    KernelParams {
        signal_variance: best[0].exp(),
        lengthscales: best[1..].iter().map(|v| v.exp()).collect(),
        jitter: DEFAULT_JITTER,
    }
}

/// Serialized form: the factorization is recomputed on load.
#[derive(Serialize, Deserialize)]
struct GpModelRepr {
    params: KernelParams,
    mean_const: f64,
    train_x: Vec<InitState>,
    train_y: Vec<f64>,
    noise_var: Vec<f64>,
}

impl Serialize for GpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GpModelRepr {
            params: self.params.clone(),
            mean_const: self.mean_const,
            train_x: self.train_x.clone(),
            train_y: self.train_y.clone(),
            noise_var: self.noise_var.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GpModelRepr::deserialize(d)?;
        GpModel::from_targets(r.params, r.mean_const, r.train_x, r.train_y, r.noise_var)
            .map_err(serde::de::Error::custom)
    }
}
