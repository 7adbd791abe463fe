//! Gaussian mixture over successful initializations.
//!
//! EM with k-means++ seeding and restarts, BIC-driven component count,
//! log-space density evaluation, sampling, and the deployment-time selector
//! that returns the highest-density draw among `M` samples.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::domain::{Domain, InitState};
use crate::error::{invalid, Error, Result};
use crate::linalg::{add_diag, Cholesky};
use crate::rng::RngStream;

/// Diagonal regularization added to every covariance estimate.
pub const COV_REG: f64 = 1e-6;
pub const EM_TOL: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 200;
pub const EM_RESTARTS: usize = 4;
pub const DEFAULT_K_MAX: usize = 8;
/// Candidate draws at deployment time.
pub const DEFAULT_CANDIDATES: usize = 1000;
/// Total draws allowed per requested candidate before falling back.
pub const MAX_DRAW_FACTOR: usize = 10;

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Cholesky,
    // log ξ_k − ½ d log 2π − ½ log|Σ_k|
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, mut cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let chol = match Cholesky::new(&cov, d) {
            Some(c) => c,
            None => {
                let mut eps = COV_REG;
                loop {
                    add_diag(&mut cov, d, eps);
                    if let Some(c) = Cholesky::new(&cov, d) {
                        break c;
                    }
                    if eps >= 1e-2 {
                        return Err(Error::NotPositiveDefinite { jitter: eps });
                    }
                    eps *= 10.0;
                }
            }
        };
        let log_norm = weight.ln() - 0.5 * d as f64 * (2.0 * PI).ln() - chol.sum_log_diag();
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    /// `log ξ_k + log N(x | μ_k, Σ_k)`.
    #[inline]
    fn weighted_log_pdf(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        let l = self.chol.factor();
        // Forward solve L z = x − μ, accumulating ‖z‖².
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= l[i * d + k] * scratch[k];
            }
            let z = s / l[i * d + i];
            scratch[i] = z;
            q += z * z;
        }
        self.log_norm - 0.5 * q
    }
}

/// Mixture `p(x) = Σ_k ξ_k N(x | μ_k, Σ_k)` with full covariances.
#[derive(Clone, Debug)]
pub struct GmmModel {
    dim: usize,
    components: Vec<Component>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    /// Build from weights, means and row-major covariances.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(invalid("weights", "weights, means and covariances must have equal non-zero length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(invalid("means", "empty mean vector"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(invalid("weights", "must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("weights", format!("sum to {total}, expected 1")));
        }
        let mut components = Vec::with_capacity(k);
        for ((w, mu), cov) in weights.into_iter().zip(means).zip(covariances) {
            if mu.len() != dim || cov.len() != dim * dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: mu.len(),
                });
            }
            if mu.iter().chain(&cov).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mixture parameters"));
            }
            for i in 0..dim {
                for j in 0..i {
                    if (cov[i * dim + j] - cov[j * dim + i]).abs() > 1e-9 * (1.0 + cov[i * dim + j].abs()) {
                        return Err(invalid("covariances", "must be symmetric"));
                    }
                }
            }
            components.push(Component::new(w, mu, cov)?);
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.cov.clone()).collect()
    }

    /// Free parameters: `K − 1 + K d + K d(d+1)/2`.
    pub fn n_params(&self) -> usize {
        n_params(self.n_components(), self.dim)
    }

    /// Log density via log-sum-exp over components.
    pub fn log_density_raw(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim];
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weighted_log_pdf(x, &mut scratch))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_density(&self, x: &InitState) -> Result<f64> {
        self.check(x)?;
        Ok(self.log_density_raw(x.coords()))
    }

    fn check(&self, x: &InitState) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Index of the largest-weight component (first on ties).
    pub fn heaviest_component(&self) -> usize {
        let mut best = 0;
        for (k, c) in self.components.iter().enumerate() {
            if c.weight > self.components[best].weight {
                best = k;
            }
        }
        best
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return k;
            }
        }
        self.components.len() - 1
    }

    fn draw<R: Rng + ?Sized>(&self, g: &mut R, z: &mut [f64]) -> Vec<f64> {
        let c = &self.components[self.pick_component(g.random::<f64>())];
        for zi in z.iter_mut() {
            *zi = g.sample(StandardNormal);
        }
        let lz = c.chol.mul_lower(z);
        c.mean.iter().zip(lz).map(|(m, v)| m + v).collect()
    }
}

/// `p_GMM(x)`, the exponential of the log-space evaluation.
pub fn density(m: &GmmModel, x: &InitState) -> Result<f64> {
    Ok(m.log_density(x)?.exp())
}

pub fn n_params(k: usize, d: usize) -> usize {
    k - 1 + k * d + k * d * (d + 1) / 2
}

/// Bayesian information criterion `−2 ℓ + p log n`.
pub fn bic(loglik: f64, k: usize, d: usize, n: usize) -> f64 {
    -2.0 * loglik + n_params(k, d) as f64 * (n as f64).ln()
}

/// `n` draws: component by weight, then `μ_k + L_k z`.
pub fn sample(m: &GmmModel, n: usize, rng: &RngStream) -> Vec<InitState> {
    let mut g = rng.generator();
    let mut z = vec![0.0; m.dim];
    (0..n).map(|_| InitState::new(m.draw(&mut g, &mut z))).collect()
}

/// Result of one EM fit.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: GmmModel,
    pub loglik: f64,
    /// Log-likelihood after each E-step of the winning restart.
    pub trace: Vec<f64>,
    /// Index of the winning restart; `None` for the spherical fallback.
    pub restart: Option<usize>,
}

fn as_rows(points: &[InitState]) -> Result<(usize, Vec<&[f64]>)> {
    let first = points.first().ok_or(Error::NotEnoughPoints { needed: 1, got: 0 })?;
    let d = first.dim();
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        if p.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: p.dim(),
            });
        }
        if p.coords().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture data"));
        }
        rows.push(p.coords());
    }
    Ok((d, rows))
}

fn mean_and_cov(rows: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= n;
    }
    (mean, cov)
}

fn total_loglik(model: &GmmModel, rows: &[&[f64]]) -> f64 {
    rows.iter().map(|r| model.log_density_raw(r)).sum()
}

/// Single spherical component for data too small to support a full covariance.
fn spherical_fallback(rows: &[&[f64]], d: usize) -> Result<EmFit> {
    let (mean, cov) = mean_and_cov(rows, d);
    let s2 = (0..d).map(|j| cov[j * d + j]).sum::<f64>() / d as f64 + COV_REG;
    let mut sph = vec![0.0; d * d];
    add_diag(&mut sph, d, s2);
    let model = GmmModel::new(vec![1.0], vec![mean], vec![sph])?;
    let loglik = total_loglik(&model, rows);
    Ok(EmFit {
        model,
        loglik,
        trace: vec![loglik],
        restart: None,
    })
}

fn kmeans_pp_centers<R: Rng + ?Sized>(rows: &[&[f64]], k: usize, g: &mut R) -> Vec<Vec<f64>> {
    let n = rows.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rows[g.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = g.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            g.random_range(0..n)
        };
        let c = rows[next].to_vec();
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq(r, &c));
        }
        centers.push(c);
    }
    centers
}

fn em_run(rows: &[&[f64]], d: usize, k: usize, rng: &RngStream) -> Result<(GmmModel, Vec<f64>)> {
    let n = rows.len();
    let mut g = rng.generator();
    let centers = kmeans_pp_centers(rows, k, &mut g);
    let (_, mut global_cov) = mean_and_cov(rows, d);
    add_diag(&mut global_cov, d, COV_REG);
    let mut model = GmmModel::new(
        vec![1.0 / k as f64; k],
        centers,
        vec![global_cov; k],
    )?;

    let mut resp = vec![0.0; n * k];
    let mut terms = vec![0.0; k];
    let mut scratch = vec![0.0; d];
    let mut trace = Vec::new();
    let mut previous: Option<GmmModel> = None;
    for iter in 0..=EM_MAX_ITERS {
        // E-step, log space.
        let mut ll = 0.0;
        for (i, r) in rows.iter().enumerate() {
            for (t, c) in terms.iter_mut().zip(&model.components) {
                *t = c.weighted_log_pdf(r, &mut scratch);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        let last = trace.last().copied();
        // The covariance floor makes the M-step a slightly perturbed ascent
        // step; a sub-tolerance drop means convergence, keep the better model.
        if let (Some(prev), Some(m)) = (last, previous.take()) {
            if ll < prev && prev - ll < EM_TOL {
                model = m;
                break;
            }
        }
        let done = last.is_some_and(|prev| (ll - prev).abs() < EM_TOL);
        trace.push(ll);
        if done || iter == EM_MAX_ITERS {
            break;
        }

        // M-step.
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            let old = &model.components[j];
            if nk < 1e-10 {
                weights.push(1e-10);
                means.push(old.mean.clone());
                covs.push(old.cov.clone());
                continue;
            }
            let mut mu = vec![0.0; d];
            for (i, r) in rows.iter().enumerate() {
                let w = resp[i * k + j];
                for a in 0..d {
                    mu[a] += w * r[a];
                }
            }
            for v in &mut mu {
                *v /= nk;
            }
            let mut cov = vec![0.0; d * d];
            for (i, r) in rows.iter().enumerate() {
                let w = resp[i * k + j];
                for a in 0..d {
                    let da = r[a] - mu[a];
                    for b in 0..=a {
                        cov[a * d + b] += w * da * (r[b] - mu[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..=a {
                    let v = cov[a * d + b] / nk;
                    cov[a * d + b] = v;
                    cov[b * d + a] = v;
                }
            }
            add_diag(&mut cov, d, COV_REG);
            weights.push(nk / n as f64);
            means.push(mu);
            covs.push(cov);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        previous = Some(std::mem::replace(&mut model, GmmModel::new(weights, means, covs)?));
    }
    Ok((model, trace))
}

/// Fit a `k`-component mixture by EM.
///
/// k-means++ seeding, [`EM_RESTARTS`] restarts on child streams of `rng`,
/// best final log-likelihood wins (lowest restart index on ties). Stops when
/// the log-likelihood moves by less than 1e-6 or after 200 iterations. With
/// fewer than `d + 1` points a single spherical component is returned.
pub fn fit_em(points: &[InitState], k: usize, rng: &RngStream) -> Result<EmFit> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    let (d, rows) = as_rows(points)?;
    if rows.len() < d + 1 {
        return spherical_fallback(&rows, d);
    }
    if rows.len() < k {
        return Err(Error::NotEnoughPoints {
            needed: k,
            got: rows.len(),
        });
    }
    let mut best: Option<EmFit> = None;
    for restart in 0..EM_RESTARTS {
        let (model, trace) = em_run(&rows, d, k, &rng.child(restart as u64))?;
        let loglik = *trace.last().expect("EM records at least one E-step");
        if best.as_ref().is_none_or(|b| loglik > b.loglik) {
            best = Some(EmFit {
                model,
                loglik,
                trace,
                restart: Some(restart),
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One row of the component-count search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicEntry {
    pub k: usize,
    pub loglik: f64,
    pub bic: f64,
}

/// Largest component count considered for `n` points in `d` dimensions.
pub fn max_components(n: usize, d: usize, k_max: usize) -> usize {
    k_max.min(n / (d + 1)).max(1)
}

/// Fit `K = 1..=min(k_max, ⌊n/(d+1)⌋)` and keep the minimum-BIC model
/// (smaller `K` on ties). Returns the model and the full BIC table.
pub fn select_k_detailed(
    points: &[InitState],
    k_max: usize,
    rng: &RngStream,
) -> Result<(GmmModel, Vec<BicEntry>)> {
    if points.len() < 2 {
        return Err(Error::NotEnoughPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let d = points[0].dim();
    let n = points.len();
    let upper = max_components(n, d, k_max);
    let mut table = Vec::with_capacity(upper);
    let mut best: Option<(f64, GmmModel)> = None;
    for k in 1..=upper {
        let fit = fit_em(points, k, &rng.child(k as u64))?;
        let score = bic(fit.loglik, fit.model.n_components(), d, n);
        table.push(BicEntry {
            k: fit.model.n_components(),
            loglik: fit.loglik,
            bic: score,
        });
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, fit.model));
        }
    }
    Ok((best.expect("K = 1 is always fitted").1, table))
}

pub fn select_k(points: &[InitState], k_max: usize, rng: &RngStream) -> Result<GmmModel> {
    select_k_detailed(points, k_max, rng).map(|(m, _)| m)
}

/// Outcome of deployment-time selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub point: InitState,
    pub log_density: f64,
    pub density: f64,
    /// In-domain candidates that were scored.
    pub accepted: usize,
    /// Total draws, including rejected out-of-domain samples.
    pub draws: usize,
    /// True when every draw was rejected and the clamped heaviest mean was used.
    pub fallback: bool,
}

fn select_inner(
    m: &GmmModel,
    count: usize,
    domain: &Domain,
    rng: &RngStream,
    mut keep: impl FnMut(&[f64]),
) -> Result<Selection> {
    if count == 0 {
        return Err(invalid("M", "must be at least 1"));
    }
    if m.dim() != domain.dim() {
        return Err(Error::DimMismatch {
            expected: domain.dim(),
            got: m.dim(),
        });
    }
    let mut g = rng.generator();
    let mut z = vec![0.0; m.dim];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let (mut accepted, mut draws) = (0, 0);
    let max_draws = MAX_DRAW_FACTOR * count;
    let lo = domain.lower();
    let hi = domain.upper();
    while accepted < count && draws < max_draws {
        let x = m.draw(&mut g, &mut z);
        draws += 1;
        if x.iter().enumerate().any(|(j, v)| *v < lo[j] || *v > hi[j]) {
            continue;
        }
        accepted += 1;
        let ld = m.log_density_raw(&x);
        keep(&x);
        if best.as_ref().is_none_or(|(_, b)| ld > *b) {
            best = Some((x, ld));
        }
    }
    let (point, log_density, fallback) = match best {
        Some((x, ld)) => (InitState::new(x), ld, false),
        None => {
            let mean = InitState::new(m.components[m.heaviest_component()].mean.clone());
            let p = domain.clamp(&mean);
            let ld = m.log_density_raw(p.coords());
            (p, ld, true)
        }
    };
    Ok(Selection {
        point,
        log_density,
        density: log_density.exp(),
        accepted,
        draws,
        fallback,
    })
}

/// Draw `count` in-domain candidates from the mixture (rejecting samples
/// outside `domain`, at most `10·count` draws) and return the one with the
/// highest density; the first drawn wins ties.
pub fn deploy_select(m: &GmmModel, count: usize, domain: &Domain, rng: &RngStream) -> Result<Selection> {
    select_inner(m, count, domain, rng, |_| {})
}

/// [`deploy_select`] that also returns every scored candidate in draw order.
pub fn deploy_select_traced(
    m: &GmmModel,
    count: usize,
    domain: &Domain,
    rng: &RngStream,
) -> Result<(Selection, Vec<InitState>)> {
    let mut seen = Vec::with_capacity(count);
    let sel = select_inner(m, count, domain, rng, |x| seen.push(InitState::new(x.to_vec())))?;
    Ok((sel, seen))
}

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<f64>>,
}

impl Serialize for GmmModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GmmRepr {
            weights: self.weights(),
            means: self.means(),
            covariances: self.covariances(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GmmModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GmmRepr::deserialize(d)?;
        GmmModel::new(r.weights, r.means, r.covariances).map_err(serde::de::Error::custom)
    }
}
