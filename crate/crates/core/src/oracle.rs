//! Synthetic ground-truth success fields standing in for a policy executed in
//! simulation.
//!
//! The base field is a clamped sum of Gaussian bumps. Fine-tuning appends
//! boost terms; each boost closes a fraction `η·exp(−‖θ − θ′‖²/(2ℓ²))` of the
//! remaining gap to the cap, so after boosts `1..m` the gap is
//! `(p_max − p₀(θ)) · Π_k (1 − η_k g_k(θ))`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::acquisition::ProposalBatch;
use crate::dataset::EvalRecord;
use crate::domain::{Domain, InitState};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_P_MIN: f64 = 0.02;
pub const DEFAULT_P_MAX: f64 = 0.99;
/// Default rollout perturbation, as a fraction of each domain width.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: InitState,
    pub amplitude: f64,
    pub width: f64,
}

/// Improvement left behind by fine-tuning at `center`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boost {
    pub center: InitState,
    pub strength: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr", into = "FieldRepr")]
pub struct OracleField {
    domain: Domain,
    bumps: Vec<Bump>,
    p_min: f64,
    p_max: f64,
    boosts: Vec<Boost>,
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    domain: Domain,
    bumps: Vec<Bump>,
    p_min: f64,
    p_max: f64,
    #[serde(default)]
    boosts: Vec<Boost>,
}

impl TryFrom<FieldRepr> for OracleField {
    type Error = Error;
    fn try_from(r: FieldRepr) -> Result<Self> {
        let mut f = OracleField::new(r.domain, r.bumps, r.p_min, r.p_max)?;
        for b in r.boosts {
            f.push_boost(b)?;
        }
        Ok(f)
    }
}

impl From<OracleField> for FieldRepr {
    fn from(f: OracleField) -> Self {
        FieldRepr {
            domain: f.domain,
            bumps: f.bumps,
            p_min: f.p_min,
            p_max: f.p_max,
            boosts: f.boosts,
        }
    }
}

#[inline]
fn gauss(x: &[f64], c: &[f64], width: f64) -> f64 {
    let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    (-r2 / (2.0 * width * width)).exp()
}

impl OracleField {
    pub fn new(domain: Domain, bumps: Vec<Bump>, p_min: f64, p_max: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_min) {
            return Err(invalid("p_min", "must lie in [0, 1)"));
        }
        if !(p_max > p_min && p_max <= 1.0) {
            return Err(invalid("p_max", "must lie in (p_min, 1]"));
        }
        for b in &bumps {
            domain.check_dim(&b.center)?;
            if !(b.amplitude > 0.0 && b.amplitude <= 1.0) {
                return Err(invalid("bumps.amplitude", "must lie in (0, 1]"));
            }
            if !(b.width > 0.0 && b.width.is_finite()) {
                return Err(invalid("bumps.width", "must be positive"));
            }
        }
        Ok(Self {
            domain,
            bumps,
            p_min,
            p_max,
            boosts: Vec::new(),
        })
    }

    /// Field equal to `p` everywhere.
    pub fn constant(domain: Domain, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p", "must lie in [0, 1]"));
        }
        if p < 1.0 {
            return Self::new(domain, Vec::new(), p, 1.0);
        }
        // Two unit bumps sum to ≥ 1 everywhere on the box and clamp to 1.
        let diag: f64 = domain.widths().iter().map(|w| w * w).sum::<f64>().sqrt();
        let c = domain.center();
        let wide = Bump {
            center: c,
            amplitude: 1.0,
            width: 1e3 * diag,
        };
        Self::new(domain, vec![wide.clone(), wide], 0.0, 1.0)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn boosts(&self) -> &[Boost] {
        &self.boosts
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    fn push_boost(&mut self, b: Boost) -> Result<()> {
        self.domain.check_dim(&b.center)?;
        if !(b.strength > 0.0 && b.strength <= 1.0) {
            return Err(invalid("eta", "learning gain must lie in (0, 1]"));
        }
        if !(b.width > 0.0 && b.width.is_finite()) {
            return Err(invalid("finetune_width", "must be positive"));
        }
        self.boosts.push(b);
        Ok(())
    }

    /// Success probability before any fine-tuning.
    pub fn base_prob_raw(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .bumps
            .iter()
            .map(|b| b.amplitude * gauss(x, b.center.coords(), b.width))
            .sum();
        s.clamp(self.p_min, self.p_max)
    }

    /// Success probability without the domain check.
    pub fn prob_raw(&self, x: &[f64]) -> f64 {
        let base = self.base_prob_raw(x);
        if self.boosts.is_empty() {
            return base;
        }
        let mut shrink = 1.0;
        for b in &self.boosts {
            shrink *= 1.0 - b.strength * gauss(x, b.center.coords(), b.width);
        }
        (base + (self.p_max - base) * (1.0 - shrink)).min(self.p_max)
    }

    /// Ground-truth success probability at `theta`.
    pub fn true_prob(&self, theta: &InitState) -> Result<f64> {
        self.domain.check_dim(theta)?;
        if !self.domain.contains(theta) {
            return Err(Error::OutOfDomain(theta.coords().to_vec()));
        }
        Ok(self.prob_raw(theta.coords()))
    }

    /// Midpoint-rule average of `true_prob` over the domain on a grid with
    /// `per_dim` cells per axis.
    pub fn grid_mean(&self, per_dim: usize) -> f64 {
        let d = self.domain.dim();
        let total = per_dim.pow(d as u32);
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        for idx in 0..total {
            let mut r = idx;
            for (j, xj) in x.iter_mut().enumerate() {
                let i = r % per_dim;
                r /= per_dim;
                *xj = self.domain.lower()[j] + (i as f64 + 0.5) / per_dim as f64 * self.domain.width(j);
            }
            sum += self.prob_raw(&x);
        }
        sum / total as f64
    }
}

/// Append one boost per proposed point; the input field is left untouched.
pub fn finetune_update(
    f: &OracleField,
    batch: &ProposalBatch,
    eta: f64,
    width: f64,
) -> Result<OracleField> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid("eta", "learning gain must lie in (0, 1]"));
    }
    if !(width > 0.0 && width.is_finite()) {
        return Err(invalid("finetune_width", "must be positive"));
    }
    let mut next = f.clone();
    for p in &batch.points {
        next.push_boost(Boost {
            center: p.clone(),
            strength: eta,
            width,
        })?;
    }
    Ok(next)
}

/// One assembly stage: its success field plus rollout-time perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StageRepr", into = "StageRepr")]
pub struct StageSpec {
    label: usize,
    oracle: OracleField,
    eval_noise: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StageRepr {
    label: usize,
    oracle: OracleField,
    eval_noise: Vec<f64>,
}

impl TryFrom<StageRepr> for StageSpec {
    type Error = Error;
    fn try_from(r: StageRepr) -> Result<Self> {
        StageSpec::new(r.label, r.oracle, r.eval_noise)
    }
}

impl From<StageSpec> for StageRepr {
    fn from(s: StageSpec) -> Self {
        StageRepr {
            label: s.label,
            oracle: s.oracle,
            eval_noise: s.eval_noise,
        }
    }
}

impl StageSpec {
    pub fn new(label: usize, oracle: OracleField, eval_noise: Vec<f64>) -> Result<Self> {
        let dom = oracle.domain();
        if eval_noise.len() != dom.dim() {
            return Err(Error::DimMismatch {
                expected: dom.dim(),
                got: eval_noise.len(),
            });
        }
        for (j, h) in eval_noise.iter().enumerate() {
            if !(*h >= 0.0 && *h < dom.width(j)) {
                return Err(invalid("eval_noise", format!("half-width {h} in dimension {j} outside [0, width)")));
            }
        }
        Ok(Self {
            label,
            oracle,
            eval_noise,
        })
    }

    /// Stage with noise at [`DEFAULT_NOISE_FRACTION`] of each width.
    pub fn with_default_noise(label: usize, oracle: OracleField) -> Result<Self> {
        let noise = oracle
            .domain()
            .widths()
            .iter()
            .map(|w| w * DEFAULT_NOISE_FRACTION)
            .collect();
        Self::new(label, oracle, noise)
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn oracle(&self) -> &OracleField {
        &self.oracle
    }

    pub fn eval_noise(&self) -> &[f64] {
        &self.eval_noise
    }

    pub fn domain(&self) -> &Domain {
        self.oracle.domain()
    }

    pub fn with_oracle(&self, oracle: OracleField) -> Self {
        Self {
            label: self.label,
            oracle,
            eval_noise: self.eval_noise.clone(),
        }
    }

    /// One Bernoulli trial from the nominal initialization `theta`.
    pub(crate) fn trial<R: Rng + ?Sized>(&self, theta: &[f64], g: &mut R, buf: &mut [f64]) -> bool {
        let dom = self.domain();
        for j in 0..theta.len() {
            let h = self.eval_noise[j];
            let v = if h > 0.0 {
                theta[j] + h * (2.0 * g.random::<f64>() - 1.0)
            } else {
                theta[j]
            };
            buf[j] = v.clamp(dom.lower()[j], dom.upper()[j]);
        }
        let p = self.oracle.prob_raw(buf);
        g.random::<f64>() < p
    }

    /// Success probability at a nominal point, averaged over the rollout
    /// perturbation (midpoint rule, `per_dim` nodes per axis).
    pub fn smoothed_prob(&self, theta: &[f64], per_dim: usize) -> f64 {
        let d = theta.len();
        if self.eval_noise.iter().all(|h| *h == 0.0) {
            return self.oracle.prob_raw(theta);
        }
        let dom = self.domain();
        let total = per_dim.pow(d as u32);
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        for idx in 0..total {
            let mut r = idx;
            for j in 0..d {
                let i = r % per_dim;
                r /= per_dim;
                let off = ((i as f64 + 0.5) / per_dim as f64 * 2.0 - 1.0) * self.eval_noise[j];
                x[j] = (theta[j] + off).clamp(dom.lower()[j], dom.upper()[j]);
            }
            sum += self.oracle.prob_raw(&x);
        }
        sum / total as f64
    }
}

/// Execute `trials` rollouts from `theta` and aggregate the outcomes.
///
/// Each trial perturbs `theta` uniformly within the stage's noise half-widths
/// (clamped to the domain) and succeeds with the field's probability there.
pub fn rollout(s: &StageSpec, theta: &InitState, trials: u64, rng: &RngStream) -> Result<EvalRecord> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    s.domain().check_dim(theta)?;
    let mut g = rng.generator();
    let mut buf = vec![0.0; theta.dim()];
    let successes = (0..trials)
        .filter(|_| s.trial(theta.coords(), &mut g, &mut buf))
        .count() as u64;
    EvalRecord::new(theta.clone(), trials, successes)
}

/// Row-major grid of success probabilities over a 2-D slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessMap {
    /// The two plotted dimensions: rows follow `free_dims[0]`, columns `free_dims[1]`.
    pub free_dims: [usize; 2],
    pub resolution: [usize; 2],
    /// Fixed value for each dimension, `None` for the plotted ones.
    pub slice: Vec<Option<f64>>,
    pub values: Vec<f64>,
}

impl SuccessMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution[1] + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// CSV with a two-line header (dims, slice values) then one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# dims: rows={} cols={} resolution={}x{}",
            self.free_dims[0], self.free_dims[1], self.resolution[0], self.resolution[1]
        );
        let slice: Vec<String> = self
            .slice
            .iter()
            .map(|v| v.map_or_else(|| "*".to_string(), |x| format!("{x}")))
            .collect();
        let _ = writeln!(out, "# slice: {}", slice.join(","));
        for r in 0..self.resolution[0] {
            let row: Vec<String> = (0..self.resolution[1]).map(|c| format!("{}", self.at(r, c))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Evaluate `true_prob` at cell centres of a 2-D slice. `slice` gives a value
/// for each fixed dimension and `None` for exactly two free dimensions.
pub fn success_map(f: &OracleField, resolution: [usize; 2], slice: &[Option<f64>]) -> Result<SuccessMap> {
    let dom = f.domain();
    if slice.len() != dom.dim() {
        return Err(Error::DimMismatch {
            expected: dom.dim(),
            got: slice.len(),
        });
    }
    let free: Vec<usize> = (0..slice.len()).filter(|&j| slice[j].is_none()).collect();
    if free.len() != 2 {
        return Err(Error::BadSlice(free.len()));
    }
    if resolution.contains(&0) {
        return Err(invalid("resolution", "must be at least 1 per axis"));
    }
    let mut x: Vec<f64> = slice.iter().map(|v| v.unwrap_or(0.0)).collect();
    let probe = InitState::new(x.iter().enumerate().map(|(j, v)| if slice[j].is_some() { *v } else { dom.lower()[j] }).collect());
    if !dom.contains(&probe) {
        return Err(Error::OutOfDomain(probe.into_vec()));
    }
    let (a, b) = (free[0], free[1]);
    let cell = |j: usize, i: usize, n: usize| dom.lower()[j] + (i as f64 + 0.5) / n as f64 * dom.width(j);
    let mut values = Vec::with_capacity(resolution[0] * resolution[1]);
    for r in 0..resolution[0] {
        x[a] = cell(a, r, resolution[0]);
        for c in 0..resolution[1] {
            x[b] = cell(b, c, resolution[1]);
            values.push(f.prob_raw(&x));
        }
    }
    Ok(SuccessMap {
        free_dims: [a, b],
        resolution,
        slice: slice.to_vec(),
        values,
    })
}

/// Parameters of the random landscape generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGenerator {
    pub bumps: (usize, usize),
    pub amplitude: (f64, f64),
    /// Bump widths as fractions of the mean domain width.
    pub width_fraction: (f64, f64),
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for LandscapeGenerator {
    fn default() -> Self {
        Self {
            bumps: (1, 4),
            amplitude: (0.4, 0.95),
            width_fraction: (0.1, 0.3),
            p_min: DEFAULT_P_MIN,
            p_max: DEFAULT_P_MAX,
        }
    }
}

impl LandscapeGenerator {
    pub fn generate(&self, domain: &Domain, rng: &RngStream) -> Result<OracleField> {
        let mut g = rng.generator();
        let mean_width = domain.widths().iter().sum::<f64>() / domain.dim() as f64;
        let count = g.random_range(self.bumps.0..=self.bumps.1);
        let bumps = (0..count)
            .map(|_| {
                let center = domain.sample_point(&mut g);
                let amplitude = g.random_range(self.amplitude.0..=self.amplitude.1);
                let frac = g.random_range(self.width_fraction.0..=self.width_fraction.1);
                Bump {
                    center,
                    amplitude,
                    width: frac * mean_width,
                }
            })
            .collect();
        OracleField::new(domain.clone(), bumps, self.p_min, self.p_max)
    }
}
