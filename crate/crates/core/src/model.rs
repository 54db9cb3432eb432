//! Killed-chain models, particle configurations and the distances between them.
//!
//! A [`Model`] is a continuous-time chain on the live sites `0..K` with
//! off-diagonal jump rates `Q` and killing rates `p0`; the cemetery state is
//! implicit. A [`Configuration`] is the occupation vector of `N` particles over
//! the live sites.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};

/// Tolerance used when checking that a vector sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// The λ infimum runs over ordered pairs of distinct sites; the degenerate
/// `i == i'` term is excluded. Reported alongside coefficients for traceability.
pub const LAMBDA_PAIR_CONVENTION: &str = "ordered pairs (i, i') with i != i'";

/// JSON form of a model: `{"K": int, "Q": [[...]], "p0": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawModel {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub p0: Vec<f64>,
}

/// A validated killed-chain model.
///
/// Invariants: `K >= 2`, nonnegative finite rates, `p0` not identically zero,
/// and `Q` irreducible on the live sites. The diagonal of `Q` is stored as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct Model {
    k: usize,
    q: Vec<f64>,
    p0: Vec<f64>,
}

impl TryFrom<RawModel> for Model {
    type Error = FvError;

    fn try_from(raw: RawModel) -> Result<Self> {
        validate_model(raw)
    }
}

impl From<Model> for RawModel {
    fn from(m: Model) -> Self {
        RawModel {
            k: m.k,
            q: (0..m.k).map(|i| m.q[i * m.k..(i + 1) * m.k].to_vec()).collect(),
            p0: m.p0,
        }
    }
}

/// Checks every model invariant and returns the model with a zeroed diagonal.
pub fn validate_model(raw: RawModel) -> Result<Model> {
    let k = raw.k;
    if k < 2 {
        return Err(FvError::InvalidModel(format!("K = {k}, need K >= 2")));
    }
    if raw.q.len() != k || raw.q.iter().any(|row| row.len() != k) {
        return Err(FvError::InvalidModel(format!("Q must be {k}x{k}")));
    }
    if raw.p0.len() != k {
        return Err(FvError::InvalidModel(format!(
            "p0 has length {}, expected {k}",
            raw.p0.len()
        )));
    }
    let mut q = vec![0.0; k * k];
    for (i, row) in raw.q.iter().enumerate() {
        for (j, &rate) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            if !rate.is_finite() || rate < 0.0 {
                return Err(FvError::InvalidModel(format!(
                    "negative or non-finite rate Q[{i}][{j}] = {rate}"
                )));
            }
            q[i * k + j] = rate;
        }
    }
    for (i, &p) in raw.p0.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(FvError::InvalidModel(format!(
                "negative or non-finite killing rate p0[{i}] = {p}"
            )));
        }
    }
    if raw.p0.iter().all(|&p| p == 0.0) {
        return Err(FvError::InvalidModel("p0 identically zero".into()));
    }
    let model = Model { k, q, p0: raw.p0 };
    if !model.is_irreducible() {
        return Err(FvError::InvalidModel("reducible Q".into()));
    }
    Ok(model)
}

impl Model {
    /// Builds and validates a model from a dense rate matrix (diagonal ignored).
    pub fn new(q: Vec<Vec<f64>>, p0: Vec<f64>) -> Result<Self> {
        validate_model(RawModel { k: q.len(), q, p0 })
    }

    /// Number of live sites.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Off-diagonal jump rate; zero on the diagonal.
    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.k + j]
    }

    #[inline]
    pub fn killing(&self, i: usize) -> f64 {
        self.p0[i]
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    /// Total jump rate out of `i` through `Q`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.q[i * self.k..(i + 1) * self.k].iter().sum()
    }

    pub fn p_max(&self) -> f64 {
        self.p0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn p_min(&self) -> f64 {
        self.p0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Reachability over positive-rate edges from every site.
    fn is_irreducible(&self) -> bool {
        (0..self.k).all(|start| {
            let mut seen = vec![false; self.k];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for j in 0..self.k {
                    if !seen[j] && self.rate(i, j) > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        })
    }

    pub fn ergodic_coefficients(&self) -> ErgodicCoefficients {
        ergodic_coefficients(self)
    }
}

/// Mixing coefficients of `Q` and the resulting contraction rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicCoefficients {
    pub lambda: f64,
    pub alpha: f64,
    pub rho: f64,
    pub rho_prime: f64,
}

/// λ, α, ρ and ρ′ of a model.
///
/// `λ = min over i != i' of Q[i][i'] + Q[i'][i] + Σ_{j ∉ {i,i'}} min(Q[i][j], Q[i'][j])`,
/// `α = Σ_j min_{i != j} Q[i][j]`, `ρ = λ - (max p0 - min p0)` and
/// `ρ′ = min over i != i' of (min(p0[i], p0[i']) + pair term) - max p0`.
pub fn ergodic_coefficients(model: &Model) -> ErgodicCoefficients {
    let k = model.k();
    let mut lambda = f64::INFINITY;
    let mut rho_prime_inner = f64::INFINITY;
    for i in 0..k {
        for ip in 0..k {
            if i == ip {
                continue;
            }
            let mut pair = model.rate(i, ip) + model.rate(ip, i);
            for j in (0..k).filter(|&j| j != i && j != ip) {
                pair += model.rate(i, j).min(model.rate(ip, j));
            }
            lambda = lambda.min(pair);
            rho_prime_inner = rho_prime_inner.min(pair + model.killing(i).min(model.killing(ip)));
        }
    }
    let alpha = (0..k)
        .map(|j| {
            (0..k)
                .filter(|&i| i != j)
                .map(|i| model.rate(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let spread = model.p_max() - model.p_min();
    ErgodicCoefficients {
        lambda,
        alpha,
        rho: lambda - spread,
        rho_prime: rho_prime_inner - model.p_max(),
    }
}

/// Occupation numbers of `N` particles over `K` live sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<u32>);

impl Configuration {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(FvError::InvalidArgument("empty configuration".into()));
        }
        Ok(Self(counts))
    }

    /// All particles on one site.
    pub fn concentrated(k: usize, n: u32, site: usize) -> Self {
        let mut counts = vec![0; k];
        counts[site] = n;
        Self(counts)
    }

    /// Spread `n` particles as evenly as possible, earlier sites first.
    pub fn uniform(k: usize, n: u32) -> Self {
        let base = n / k as u32;
        let extra = (n % k as u32) as usize;
        Self((0..k).map(|i| base + u32::from(i < extra)).collect())
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Particle count `N`.
    pub fn n(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    /// `T_{i→j} η`: one particle moved from `i` to `j`. Requires `η(i) > 0`.
    pub fn moved(&self, from: usize, to: usize) -> Self {
        debug_assert!(self.0[from] > 0);
        let mut next = self.0.clone();
        next[from] -= 1;
        next[to] += 1;
        Self(next)
    }

    pub(crate) fn apply_move(&mut self, from: usize, to: usize) {
        self.0[from] -= 1;
        self.0[to] += 1;
    }

    /// Empirical measure `m(η) = η / N`.
    pub fn empirical(&self) -> ProbabilityVector {
        let n = f64::from(self.n());
        ProbabilityVector(self.0.iter().map(|&c| f64::from(c) / n).collect())
    }

    pub(crate) fn check_for(&self, model: &Model, n: usize) -> Result<()> {
        if self.k() != model.k() {
            return Err(FvError::DimensionMismatch(format!(
                "configuration has {} sites, model has {}",
                self.k(),
                model.k()
            )));
        }
        if self.n() as usize != n {
            return Err(FvError::DimensionMismatch(format!(
                "configuration holds {} particles, expected {n}",
                self.n()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// `d1(η, η') = ½ Σ_j |η(j) - η'(j)|`, the number of unmatched particles.
pub fn d1_distance(x: &Configuration, y: &Configuration) -> Result<f64> {
    if x.k() != y.k() {
        return Err(FvError::DimensionMismatch(format!(
            "{} vs {} sites",
            x.k(),
            y.k()
        )));
    }
    if x.n() != y.n() {
        return Err(FvError::DimensionMismatch(format!(
            "{} vs {} particles",
            x.n(),
            y.n()
        )));
    }
    Ok(f64::from(d1_count(x, y)))
}

/// Integer d1 for configurations already known to be compatible.
pub(crate) fn d1_count(x: &Configuration, y: &Configuration) -> u32 {
    x.0.iter()
        .zip(&y.0)
        .map(|(&a, &b)| a.saturating_sub(b))
        .sum()
}

/// A nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates nonnegativity and unit mass within [`NORMALIZATION_TOL`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_probability(&values)?;
        Ok(Self(values))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FvError::NotNormalized(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(FvError::NotNormalized("weights sum to zero".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn dirac(len: usize, at: usize) -> Self {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        Self(v)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_probability(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(FvError::NotNormalized(format!("entry {v} is negative")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(FvError::NotNormalized(format!("mass {total} != 1")));
    }
    Ok(())
}

/// Total variation distance `½ Σ |μ_i - ν_i|` between two probability vectors.
pub fn total_variation(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(FvError::DimensionMismatch(format!(
            "lengths {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    check_probability(mu)?;
    check_probability(nu)?;
    Ok(0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}
