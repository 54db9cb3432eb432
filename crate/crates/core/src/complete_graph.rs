//! Closed forms for the complete graph: `Q[i][j] = 1/K` off the diagonal and
//! constant killing `p`.

use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};
use crate::linalg::{binomial, ln_binomial, log_sum_exp};
use crate::model::{Configuration, Model, ProbabilityVector};
use crate::oracle::{enumerate_configurations, EnumeratedSpace};
use crate::simulator::transition_rates;
use crate::two_point::BirthDeathChain;

/// Largest number of spectrum candidates generated.
pub const CANDIDATE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompleteGraphParams {
    pub k: usize,
    pub n: usize,
    pub p: f64,
}

impl CompleteGraphParams {
    pub fn new(k: usize, n: usize, p: f64) -> Result<Self> {
        if k < 2 || n < 2 {
            return Err(FvError::InvalidArgument(format!("need K >= 2 and N >= 2, got K={k}, N={n}")));
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(FvError::InvalidArgument(format!("killing rate p = {p} must be positive")));
        }
        Ok(Self { k, n, p })
    }

    pub fn model(&self) -> Model {
        cg_model(self.k, self.p).expect("validated parameters")
    }
}

pub fn cg_model(k: usize, p: f64) -> Result<Model> {
    if k < 2 || !(p > 0.0) {
        return Err(FvError::InvalidArgument(format!("need K >= 2 and p > 0, got K={k}, p={p}")));
    }
    let q = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 / k as f64 }).collect())
        .collect();
    Model::new(q, vec![p; k])
}

/// Reversible invariant law of the particle system.
#[derive(Debug, Clone)]
pub struct CgInvariant {
    pub space: EnumeratedSpace,
    pub law: ProbabilityVector,
    /// `ln Σ_η w(η)` for the product weights `w`.
    pub log_normalizer: f64,
}

impl CgInvariant {
    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }
}

/// `ln w(η) = Σ_i Σ_{j<η(i)} ln((N-1+K·p·j)/(j+1))`.
pub fn cg_log_weight(params: &CompleteGraphParams, eta: &Configuration) -> f64 {
    let (n, k) = (params.n as f64, params.k as f64);
    eta.counts()
        .iter()
        .map(|&c| {
            (0..c)
                .map(|j| {
                    let j = f64::from(j);
                    ((n - 1.0 + k * params.p * j) / (j + 1.0)).ln()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Invariant law in enumeration order, with its normalizer.
pub fn cg_invariant(params: &CompleteGraphParams) -> Result<CgInvariant> {
    let space = enumerate_configurations(params.k, params.n)?;
    let logs = space.tabulate(|eta| cg_log_weight(params, eta));
    let log_normalizer = log_sum_exp(&logs);
    let law = ProbabilityVector::from_weights(logs.iter().map(|l| (l - log_normalizer).exp()).collect())?;
    Ok(CgInvariant {
        space,
        law,
        log_normalizer,
    })
}

/// Closed-form normalizer at `p = 1/K`: `C((K+1)N-K-1, KN-K-1)`.
pub fn cg_normalizer_p_inverse_k(k: usize, n: usize) -> f64 {
    let (k, n) = (k as u64, n as u64);
    binomial((k + 1) * n - k - 1, k * n - k - 1)
}

/// Largest `|ν(η)L(η,ξ) - ν(ξ)L(ξ,η)|` over neighbouring configurations.
pub fn detailed_balance_residual(params: &CompleteGraphParams, inv: &CgInvariant) -> f64 {
    let model = params.model();
    let rates: Vec<Vec<(usize, f64)>> = inv
        .space
        .configs()
        .iter()
        .map(|eta| {
            transition_rates(&model, params.n, eta)
                .into_iter()
                .map(|((i, j), r)| (inv.space.index_of(&eta.moved(i, j)).unwrap(), r))
                .collect()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (a, row) in rates.iter().enumerate() {
        for &(b, r) in row {
            let back = rates[b].iter().find(|e| e.0 == a).map_or(0.0, |e| e.1);
            worst = worst.max((inv.law[a] * r - inv.law[b] * back).abs());
        }
    }
    worst
}

/// `P(η(1) = x)` under the invariant law when `p = 1/K`:
/// `C(N-2+x, N-2)·C(KN-K-x, (K-1)N-K) / C((K+1)N-K-1, KN-K-1)`.
pub fn cg_marginal_law(k: usize, n: usize, x: usize) -> Result<f64> {
    if k < 2 || n < 2 || x > n {
        return Err(FvError::InvalidArgument(format!("K={k}, N={n}, x={x}")));
    }
    let (k, n, x) = (k as u64, n as u64, x as u64);
    let ln = ln_binomial(n - 2 + x, n - 2) + ln_binomial(k * n - k - x, (k - 1) * n - k)
        - ln_binomial((k + 1) * n - k - 1, k * n - k - 1);
    Ok(ln.exp())
}

/// Birth–death chain followed by the occupation of one site.
pub fn cg_marginal_chain(params: &CompleteGraphParams) -> BirthDeathChain {
    let (n, k, p) = (params.n as f64, params.k as f64, params.p);
    let births = (0..params.n)
        .map(|x| {
            let x = x as f64;
            (n - x) * (1.0 / k + p * x / (n - 1.0))
        })
        .collect();
    let deaths = (1..=params.n)
        .map(|x| {
            let x = x as f64;
            x * ((k - 1.0) / k + p * (n - x) / (n - 1.0))
        })
        .collect();
    BirthDeathChain::new(births, deaths).expect("positive rates")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryMoments {
    /// `var(η(i))`.
    pub variance: f64,
    /// `cov(η(i), η(j))`, `i ≠ j`.
    pub covariance: f64,
    /// `√(K(p+1)/N)`, the bound on the expected distance of `m(η)` to uniform.
    pub chaos_bound: f64,
}

pub fn cg_stationary_moments(params: &CompleteGraphParams) -> StationaryMoments {
    let (n, k, p) = (params.n as f64, params.k as f64, params.p);
    let denom = k * k * (n - 1.0 + p);
    StationaryMoments {
        variance: n * (k - 1.0) * (n * p + n - 1.0) / denom,
        covariance: (-n * n * (p + 1.0) + n) / denom,
        chaos_bound: (k * (p + 1.0) / n).sqrt(),
    }
}

fn start_moments(params: &CompleteGraphParams, eta0: &Configuration, k: usize, l: usize) -> Result<(f64, f64)> {
    if eta0.k() != params.k || eta0.n() as usize != params.n {
        return Err(FvError::DimensionMismatch(format!("{eta0} is not a configuration of E")));
    }
    if k == l || k >= params.k || l >= params.k {
        return Err(FvError::InvalidArgument(format!("need distinct sites in range, got {k}, {l}")));
    }
    Ok((f64::from(eta0.counts()[k]), f64::from(eta0.counts()[l])))
}

/// `cov(η_t(k), η_t(l))` from a deterministic start, `k ≠ l`.
///
/// Solves the closed linear system
/// `m' = N/K - m` for `m = E[η_t(k)]` and
/// `P' = -γP + (N-1)/K·(m_k + m_l)` for `P = E[η_t(k)η_t(l)]`,
/// `γ = 2(N-1+p)/(N-1)`.
pub fn cg_dynamic_covariance(params: &CompleteGraphParams, eta0: &Configuration, k: usize, l: usize, t: f64) -> Result<f64> {
    let (xk, xl) = start_moments(params, eta0, k, l)?;
    let (n, kk, p) = (params.n as f64, params.k as f64, params.p);
    let gamma = 2.0 * (n - 1.0 + p) / (n - 1.0);
    let e1 = (-t).exp();
    let eg = (-gamma * t).exp();
    let eq = n / kk;
    let mk = eq + (xk - eq) * e1;
    let ml = eq + (xl - eq) * e1;
    let s0 = xk + xl;
    let prod = xk * xl * eg
        + (n - 1.0) / kk * (2.0 * eq / gamma * (1.0 - eg) + (s0 - 2.0 * eq) * (e1 - eg) / (gamma - 1.0));
    Ok(prod - mk * ml)
}

/// The closed form for the same covariance as printed alongside the linear
/// system, evaluated verbatim.
pub fn cg_dynamic_covariance_printed(params: &CompleteGraphParams, eta0: &Configuration, k: usize, l: usize, t: f64) -> Result<f64> {
    let (xk, xl) = start_moments(params, eta0, k, l)?;
    let (n, kk, p) = (params.n as f64, params.k as f64, params.p);
    let gamma = 2.0 * kk * (n - 1.0 + p) / (kk * (n - 1.0));
    Ok(xk * xl * (-gamma * t).exp()
        + (-n + 1.0 + 2.0 * p * n) / (kk * (n - 1.0 + 2.0 * p)) * (xk + xl) * (-t).exp()
        - xk * xl * (-2.0 * t).exp()
        + (-n * n * (p + 1.0) + n) / (kk * kk * (n - 1.0 + p)))
}

/// Comparison of the printed closed form with the linear-system solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrintedCovarianceReport {
    /// Printed value at `t = 0`; a deterministic start has covariance 0.
    pub printed_at_zero: f64,
    pub solved_at_zero: f64,
    /// Printed minus solved value at `t`.
    pub discrepancy_at_t: f64,
    /// Printed mean `E[η_0(k)]e^{-t} + N/K` minus the solved mean at `t`.
    pub mean_discrepancy_at_t: f64,
    /// True when the printed form fails the `t = 0` check by more than `1e-9`.
    pub fails_at_zero: bool,
}

pub fn cg_printed_covariance_report(params: &CompleteGraphParams, eta0: &Configuration, k: usize, l: usize, t: f64) -> Result<PrintedCovarianceReport> {
    let printed_at_zero = cg_dynamic_covariance_printed(params, eta0, k, l, 0.0)?;
    let solved_at_zero = cg_dynamic_covariance(params, eta0, k, l, 0.0)?;
    let discrepancy_at_t = cg_dynamic_covariance_printed(params, eta0, k, l, t)? - cg_dynamic_covariance(params, eta0, k, l, t)?;
    let (xk, _) = start_moments(params, eta0, k, l)?;
    let eq = params.n as f64 / params.k as f64;
    let solved_mean = eq + (xk - eq) * (-t).exp();
    let printed_mean = xk * (-t).exp() + eq;
    Ok(PrintedCovarianceReport {
        printed_at_zero,
        solved_at_zero,
        discrepancy_at_t,
        mean_discrepancy_at_t: printed_mean - solved_mean,
        fails_at_zero: (printed_at_zero - solved_at_zero).abs() > 1e-9,
    })
}

/// `λ_l = l + l(l-1)p/(N-1)`, the eigenvalues of the one-site marginal chain.
pub fn cg_marginal_eigenvalues(params: &CompleteGraphParams) -> Vec<f64> {
    let (n, p) = (params.n as f64, params.p);
    (0..=params.n)
        .map(|l| {
            let l = l as f64;
            l + l * (l - 1.0) * p / (n - 1.0)
        })
        .collect()
}

/// Candidate eigenvalues of `-L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgSpectrum {
    /// `Σ_i λ_{l_i}` over `l_1, …, l_K ∈ {0..N}` with `Σ l_i ≤ N`, sorted, duplicates removed.
    pub candidates: Vec<f64>,
    /// `λ_0, …, λ_N`.
    pub marginal: Vec<f64>,
}

impl CgSpectrum {
    /// Distance from `x` to the nearest candidate.
    pub fn distance(&self, x: f64) -> f64 {
        let pos = self.candidates.partition_point(|&c| c < x);
        let mut best = f64::INFINITY;
        if pos < self.candidates.len() {
            best = best.min((self.candidates[pos] - x).abs());
        }
        if pos > 0 {
            best = best.min((self.candidates[pos - 1] - x).abs());
        }
        best
    }
}

pub fn cg_spectrum(params: &CompleteGraphParams) -> Result<CgSpectrum> {
    let marginal = cg_marginal_eigenvalues(params);
    let mut candidates = Vec::new();
    // nonincreasing sequences l_1 >= l_2 >= ... with at most K nonzero parts
    fn walk(lam: &[f64], max_part: usize, left: usize, parts: usize, acc: f64, out: &mut Vec<f64>) -> Result<()> {
        if out.len() >= CANDIDATE_LIMIT {
            return Err(FvError::SizeGuard {
                what: "spectrum candidates",
                size: out.len(),
                limit: CANDIDATE_LIMIT,
            });
        }
        out.push(acc);
        if parts == 0 {
            return Ok(());
        }
        for l in 1..=max_part.min(left) {
            walk(lam, l, left - l, parts - 1, acc + lam[l], out)?;
        }
        Ok(())
    }
    walk(&marginal, params.n, params.n, params.k, 0.0, &mut candidates)?;
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    Ok(CgSpectrum { candidates, marginal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generator_matrix, spectrum, stationary_exact, transient_covariance};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(k: usize, n: usize, p: f64) -> CompleteGraphParams {
        CompleteGraphParams::new(k, n, p).unwrap()
    }

    fn conf(v: &[u32]) -> Configuration {
        Configuration::new(v.to_vec()).unwrap()
    }

    #[test]
    fn model_shape() {
        let m = cg_model(5, 0.3).unwrap();
        assert_relative_eq!(m.row_sum(2), 0.8, epsilon = 1e-15);
        assert_relative_eq!(m.ergodic_coefficients().lambda, 1.0, epsilon = 1e-12);
        assert!(cg_model(1, 1.0).is_err());
        assert!(CompleteGraphParams::new(2, 2, 0.0).is_err());
    }

    #[test]
    fn invariant_small_cases() {
        let inv = cg_invariant(&params(2, 2, 1.0)).unwrap();
        assert_relative_eq!(inv.law[0], 0.375, epsilon = 1e-15);
        assert_relative_eq!(inv.law[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(inv.law[2], 0.375, epsilon = 1e-15);
        assert_relative_eq!(inv.normalizer(), 4.0, epsilon = 1e-12);
        let inv = cg_invariant(&params(2, 2, 0.5)).unwrap();
        assert!(inv.law.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_relative_eq!(inv.normalizer(), 3.0, epsilon = 1e-12);
        assert_eq!(cg_normalizer_p_inverse_k(2, 2), 3.0);
    }

    #[test]
    fn p_inverse_k_normalizer_matches_sum() {
        for (k, n) in [(2, 7), (3, 5), (4, 6), (5, 3)] {
            let inv = cg_invariant(&params(k, n, 1.0 / k as f64)).unwrap();
            assert_relative_eq!(inv.normalizer(), cg_normalizer_p_inverse_k(k, n), max_relative = 1e-12);
        }
        assert_eq!(cg_normalizer_p_inverse_k(3, 5), 4368.0);
    }

    #[test]
    fn invariant_matches_oracle_and_balances() {
        for (k, n, p) in [(3, 4, 0.7), (4, 3, 2.0), (2, 9, 0.3)] {
            let pr = params(k, n, p);
            let inv = cg_invariant(&pr).unwrap();
            let (_, l) = generator_matrix(&pr.model(), n).unwrap();
            let exact = stationary_exact(&l).unwrap();
            for (a, b) in inv.law.iter().zip(exact.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!(detailed_balance_residual(&pr, &inv) < 1e-12);
        }
    }

    #[test]
    fn marginal_law() {
        for x in 0..=2 {
            assert_relative_eq!(cg_marginal_law(2, 2, x).unwrap(), 1.0 / 3.0, epsilon = 1e-14);
        }
        let total: f64 = (0..=5).map(|x| cg_marginal_law(3, 5, x).unwrap()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-13);
        let inv = cg_invariant(&params(3, 4, 1.0 / 3.0)).unwrap();
        let mut marginal = [0.0; 5];
        for (eta, w) in inv.space.configs().iter().zip(inv.law.iter()) {
            marginal[eta.counts()[0] as usize] += w;
        }
        for (x, m) in marginal.iter().enumerate() {
            assert!((cg_marginal_law(3, 4, x).unwrap() - m).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_moment_examples() {
        let m = cg_stationary_moments(&params(2, 2, 1.0));
        assert_eq!(m.covariance, -0.75);
        assert_eq!(m.variance, 0.75);
        assert_relative_eq!(cg_stationary_moments(&params(4, 100, 1.0)).chaos_bound, 0.08f64.sqrt());
    }

    #[test]
    fn dynamic_covariance_against_oracle() {
        let pr = params(3, 3, 0.5);
        let eta0 = conf(&[3, 0, 0]);
        assert_eq!(cg_dynamic_covariance(&pr, &eta0, 0, 1, 0.0).unwrap(), 0.0);
        for t in [0.1, 0.7, 2.5] {
            let closed = cg_dynamic_covariance(&pr, &eta0, 0, 1, t).unwrap();
            let exact = transient_covariance(&pr.model(), 3, &eta0, 0, 1, t).unwrap();
            assert!((closed - exact).abs() < 1e-10, "t={t}: {closed} vs {exact}");
        }
        let late = cg_dynamic_covariance(&pr, &eta0, 1, 2, 30.0).unwrap();
        assert_relative_eq!(late, cg_stationary_moments(&pr).covariance, epsilon = 1e-10);
    }

    #[test]
    fn printed_form_fails_at_zero() {
        let pr = params(3, 3, 0.5);
        let r = cg_printed_covariance_report(&pr, &conf(&[3, 0, 0]), 0, 1, 0.7).unwrap();
        assert!(r.fails_at_zero);
        assert_eq!(r.solved_at_zero, 0.0);
        assert!(r.mean_discrepancy_at_t.abs() > 0.1);
    }

    #[test]
    fn spectrum_small() {
        let pr = params(2, 2, 1.0);
        let s = cg_spectrum(&pr).unwrap();
        assert_eq!(s.marginal, vec![0.0, 1.0, 4.0]);
        for x in [0.0, 1.0, 4.0] {
            assert!(s.distance(x) < 1e-14);
        }
        assert_eq!(cg_marginal_eigenvalues(&params(2, 3, 1.0))[2], 3.0);
        let (_, l) = generator_matrix(&pr.model(), 2).unwrap();
        let ev = spectrum(&l).unwrap();
        for e in ev {
            assert!(s.distance(-e) < 1e-8);
        }
    }

    #[test]
    fn marginal_chain_matches_projection() {
        let pr = params(3, 4, 0.7);
        let chain = cg_marginal_chain(&pr);
        let inv = cg_invariant(&pr).unwrap();
        let pi = chain.invariant();
        let mut marginal = [0.0; 5];
        for (eta, w) in inv.space.configs().iter().zip(inv.law.iter()) {
            marginal[eta.counts()[0] as usize] += w;
        }
        for x in 0..=4 {
            assert!((pi[x] - marginal[x]).abs() < 1e-12);
        }
        assert_relative_eq!(chain.gap_exact().unwrap(), 1.0, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn covariance_is_minus_variance_over_k_minus_one(k in 2usize..20, n in 2usize..500, p in 0.01f64..10.0) {
            let m = cg_stationary_moments(&params(k, n, p));
            prop_assert!((m.covariance + m.variance / (k as f64 - 1.0)).abs() < 1e-12 * m.variance.max(1.0));
        }
    }
}
