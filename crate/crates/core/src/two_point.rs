//! The two-site model: its one-dimensional birth–death marginal, the
//! product-form invariant law, Hardy-type spectral gap lower bounds and an
//! exact tridiagonal gap solver.
//!
//! Site 1 of the model is index 0. The marginal `n = η(1)` jumps
//! `n → n+1` at `b_n = (N-n)(b + p2·n/(N-1))` and `n → n-1` at
//! `d_n = n(a + p1·(N-n)/(N-1))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};
use crate::linalg::{log_sum_exp, tridiagonal_eigenvalue};
use crate::model::{Model, ProbabilityVector};

/// Largest chain length accepted by [`bd_gap_exact`].
pub const GAP_SIZE_LIMIT: usize = 5000;

/// Birth–death chain on `{0, …, N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathChain {
    /// `b_0, …, b_{N-1}`.
    births: Vec<f64>,
    /// `d_1, …, d_N`.
    deaths: Vec<f64>,
}

impl BirthDeathChain {
    pub fn new(births: Vec<f64>, deaths: Vec<f64>) -> Result<Self> {
        if births.is_empty() || births.len() != deaths.len() {
            return Err(FvError::DimensionMismatch(format!(
                "{} births and {} deaths",
                births.len(),
                deaths.len()
            )));
        }
        if births.iter().chain(&deaths).any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(FvError::InvalidArgument("birth and death rates must be positive".into()));
        }
        Ok(Self { births, deaths })
    }

    /// Top state `N`.
    pub fn n(&self) -> usize {
        self.births.len()
    }

    /// `b_n`, zero at `n = N`.
    pub fn birth(&self, n: usize) -> f64 {
        self.births.get(n).copied().unwrap_or(0.0)
    }

    /// `d_n`, zero at `n = 0`.
    pub fn death(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.deaths.get(n - 1).copied().unwrap_or(0.0)
        }
    }

    /// `ln π(n)` up to normalization: `Σ_{k=1}^{n} ln(b_{k-1}/d_k)`.
    fn log_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for k in 1..=self.n() {
            acc += (self.birth(k - 1) / self.death(k)).ln();
            out.push(acc);
        }
        out
    }

    fn log_invariant(&self) -> Vec<f64> {
        let w = self.log_weights();
        let z = log_sum_exp(&w);
        w.into_iter().map(|x| x - z).collect()
    }

    pub fn invariant(&self) -> ProbabilityVector {
        ProbabilityVector::from_weights(self.log_invariant().into_iter().map(f64::exp).collect())
            .expect("finite log weights")
    }

    /// Largest `|π(n)b_n - π(n+1)d_{n+1}|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let pi = self.invariant();
        (0..self.n())
            .map(|n| (pi[n] * self.birth(n) - pi[n + 1] * self.death(n + 1)).abs())
            .fold(0.0, f64::max)
    }

    /// Dense generator on `{0, …, N}`.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        let s = self.n() + 1;
        let mut g = DMatrix::zeros(s, s);
        for n in 0..s {
            if n + 1 < s {
                g[(n, n + 1)] = self.birth(n);
            }
            if n > 0 {
                g[(n, n - 1)] = self.death(n);
            }
            g[(n, n)] = -(self.birth(n) + self.death(n));
        }
        g
    }

    pub fn gap_exact(&self) -> Result<f64> {
        bd_gap_exact(self)
    }
}

/// Validated two-site model with `Q = [[·, a], [b, ·]]` and `p0 = (p1, p2)`.
pub fn tp_model(a: f64, b: f64, p1: f64, p2: f64) -> Result<Model> {
    if !(a > 0.0 && b > 0.0) {
        return Err(FvError::InvalidArgument(format!("need a, b > 0, got a={a}, b={b}")));
    }
    Model::new(vec![vec![0.0, a], vec![b, 0.0]], vec![p1, p2])
}

pub fn bd_marginal(a: f64, b: f64, p1: f64, p2: f64, n: usize) -> Result<BirthDeathChain> {
    tp_model(a, b, p1, p2)?;
    if n < 2 {
        return Err(FvError::InvalidArgument(format!("N = {n}, need N >= 2")));
    }
    let nf = n as f64;
    let births = (0..n)
        .map(|k| {
            let k = k as f64;
            (nf - k) * (b + p2 * k / (nf - 1.0))
        })
        .collect();
    let deaths = (1..=n)
        .map(|k| {
            let k = k as f64;
            k * (a + p1 * (nf - k) / (nf - 1.0))
        })
        .collect();
    BirthDeathChain::new(births, deaths)
}

pub fn bd_invariant(chain: &BirthDeathChain) -> ProbabilityVector {
    chain.invariant()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyPair {
    pub b_plus: f64,
    pub b_minus: f64,
}

/// `B₊(i) = max_{x>i} (Σ_{y=i+1}^{x} 1/(π(y)d_y))·π([x,N])` and
/// `B₋(i) = max_{x<i} (Σ_{y=x}^{i-1} 1/(π(y)b_y))·π([0,x])`; an empty
/// maximum is 0.
pub fn hardy_quantities(chain: &BirthDeathChain, i: usize) -> Result<HardyPair> {
    let n = chain.n();
    if i > n {
        return Err(FvError::InvalidArgument(format!("i = {i} outside [0, {n}]")));
    }
    let lp = chain.log_invariant();
    // ln π([x, N]) and ln π([0, x])
    let mut tail = vec![f64::NEG_INFINITY; n + 2];
    for x in (0..=n).rev() {
        tail[x] = log_add(tail[x + 1], lp[x]);
    }
    let mut head = vec![f64::NEG_INFINITY; n + 1];
    let mut acc = f64::NEG_INFINITY;
    for x in 0..=n {
        acc = log_add(acc, lp[x]);
        head[x] = acc;
    }
    let mut b_plus = f64::NEG_INFINITY;
    let mut path = f64::NEG_INFINITY;
    for x in i + 1..=n {
        path = log_add(path, -lp[x] - chain.death(x).ln());
        b_plus = b_plus.max(path + tail[x]);
    }
    let mut b_minus = f64::NEG_INFINITY;
    let mut path = f64::NEG_INFINITY;
    for x in (0..i).rev() {
        path = log_add(path, -lp[x] - chain.birth(x).ln());
        b_minus = b_minus.max(path + head[x]);
    }
    Ok(HardyPair {
        b_plus: b_plus.exp(),
        b_minus: b_minus.exp(),
    })
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// How the reference index `i*` was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IStarSource {
    /// `⌊i₁⌋ + 1` from the crossing root of `π(i+1)/π(i) = 1`.
    Root,
    /// Mode of `π`, smallest index on ties.
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    pub i_star: usize,
    pub i_star_source: IStarSource,
    pub b_plus: f64,
    pub b_minus: f64,
    /// `1 / (4·max(B₊(i*), B₋(i*)))`.
    pub gap_lower_bound: f64,
    /// Roots of `π(i+1)/π(i) = 1`; absent when `p1 = p2` or the
    /// discriminant is negative.
    pub i1: Option<f64>,
    pub i2: Option<f64>,
    /// True when `π(i+1)/π(i)` is nonincreasing in `i`.
    pub unimodal: bool,
}

/// Roots `i₁ ≤ i₂` of the ratio equation, when defined.
pub fn ratio_roots(a: f64, b: f64, p1: f64, p2: f64, n: usize) -> Option<(f64, f64)> {
    let dp = p1 - p2;
    if dp == 0.0 {
        return None;
    }
    let nf = n as f64;
    let lin = nf * (a + b + dp) - (a + b + 2.0 * p1);
    let delta = lin * lin - 4.0 * (nf - 1.0) * (b * nf - a - p1) * dp;
    if delta < 0.0 {
        return None;
    }
    let r1 = (lin - delta.sqrt()) / (2.0 * dp);
    let r2 = (lin + delta.sqrt()) / (2.0 * dp);
    Some((r1, r2))
}

/// `b_i / d_{i+1} = π(i+1)/π(i)` for `i = 0..N-1`.
pub fn ratio_sequence(chain: &BirthDeathChain) -> Vec<f64> {
    (0..chain.n()).map(|i| chain.birth(i) / chain.death(i + 1)).collect()
}

pub fn gap_report(a: f64, b: f64, p1: f64, p2: f64, n: usize) -> Result<HardyReport> {
    let chain = bd_marginal(a, b, p1, p2, n)?;
    let roots = ratio_roots(a, b, p1, p2, n);
    let pi = chain.invariant();
    let argmax = pi
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0;
    let (i_star, i_star_source) = match roots {
        Some((r1, _)) if (0.0..=n as f64).contains(&r1) => {
            ((r1.floor() as usize + 1).min(n), IStarSource::Root)
        }
        _ => (argmax, IStarSource::Argmax),
    };
    let h = hardy_quantities(&chain, i_star)?;
    let ratios = ratio_sequence(&chain);
    let unimodal = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok(HardyReport {
        i_star,
        i_star_source,
        b_plus: h.b_plus,
        b_minus: h.b_minus,
        gap_lower_bound: 1.0 / (4.0 * h.b_plus.max(h.b_minus)),
        i1: roots.map(|r| r.0),
        i2: roots.map(|r| r.1),
        unimodal,
    })
}

/// `λ_u = min_{k=0..N-1} [d_{k+1} - d_k·u_{k-1}/u_k + b_k - b_{k+1}·u_{k+1}/u_k]`
/// with `d_0 = b_N = 0` and out-of-range ratios dropped. `u` has length `N`.
pub fn lambda_u(chain: &BirthDeathChain, u: &[f64]) -> Result<f64> {
    let n = chain.n();
    if u.len() != n {
        return Err(FvError::DimensionMismatch(format!("weights have length {}, expected {n}", u.len())));
    }
    if u.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(FvError::InvalidArgument("weights must be positive".into()));
    }
    Ok((0..n)
        .map(|k| {
            let mut v = chain.death(k + 1) + chain.birth(k);
            if k > 0 {
                v -= chain.death(k) * u[k - 1] / u[k];
            }
            if k + 1 < n {
                v -= chain.birth(k + 1) * u[k + 1] / u[k];
            }
            v
        })
        .fold(f64::INFINITY, f64::min))
}

/// Smallest nonzero eigenvalue of `-G`, from the symmetrized tridiagonal
/// matrix (diagonal `b_n + d_n`, off-diagonal `-√(b_n d_{n+1})`) by bisection.
pub fn bd_gap_exact(chain: &BirthDeathChain) -> Result<f64> {
    let n = chain.n();
    if n > GAP_SIZE_LIMIT {
        return Err(FvError::SizeGuard {
            what: "birth-death chain",
            size: n,
            limit: GAP_SIZE_LIMIT,
        });
    }
    let diag: Vec<f64> = (0..=n).map(|k| chain.birth(k) + chain.death(k)).collect();
    let off: Vec<f64> = (0..n).map(|k| -(chain.birth(k) * chain.death(k + 1)).sqrt()).collect();
    Ok(tridiagonal_eigenvalue(&diag, &off, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{spectrum, stationary_exact};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    #[test]
    fn marginal_rates() {
        let c = bd_marginal(1.0, 1.0, 1.0, 1.0, 2).unwrap();
        assert_eq!((c.birth(0), c.birth(1), c.death(1), c.death(2)), (2.0, 2.0, 2.0, 2.0));
        let c = bd_marginal(1.0, 2.0, 3.0, 1.0, 3).unwrap();
        assert_eq!((c.birth(0), c.birth(1), c.birth(2)), (6.0, 5.0, 3.0));
        assert_eq!((c.death(1), c.death(2), c.death(3)), (4.0, 5.0, 3.0));
        assert_eq!((c.birth(3), c.death(0)), (0.0, 0.0));
        assert!(bd_marginal(0.0, 1.0, 1.0, 1.0, 3).is_err());
        assert!(bd_marginal(1.0, 1.0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn model_and_rho() {
        let m = tp_model(1.0, 2.0, 3.0, 1.0).unwrap();
        assert_eq!(m.rate(0, 1), 1.0);
        assert_eq!(m.ergodic_coefficients().rho, 1.0);
        assert_eq!(tp_model(1.0, 1.0, 0.4, 0.4).unwrap().ergodic_coefficients().rho, 2.0);
    }

    #[test]
    fn invariant_examples() {
        let pi = bd_invariant(&bd_marginal(1.0, 1.0, 1.0, 1.0, 2).unwrap());
        assert!(pi.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let pi = bd_invariant(&bd_marginal(0.5, 0.5, 0.5, 0.5, 2).unwrap());
        assert!(pi.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let c = bd_marginal(1.3, 0.4, 2.0, 0.1, 25).unwrap();
        let exact = stationary_exact(&c.generator_matrix()).unwrap();
        for (a, b) in c.invariant().iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(c.detailed_balance_residual() < 1e-12);
    }

    #[test]
    fn hardy_edges() {
        let c = bd_marginal(1.0, 2.0, 3.0, 0.0, 20).unwrap();
        assert_eq!(hardy_quantities(&c, 20).unwrap().b_plus, 0.0);
        assert_eq!(hardy_quantities(&c, 0).unwrap().b_minus, 0.0);
        assert!(hardy_quantities(&c, 21).is_err());
    }

    #[test]
    fn hardy_direct_scan() {
        // compare the log-space scan against plain arithmetic
        let c = bd_marginal(1.0, 2.0, 3.0, 0.0, 12).unwrap();
        let pi = c.invariant();
        for i in 0..=12 {
            let mut bp: f64 = 0.0;
            for x in i + 1..=12 {
                let s: f64 = (i + 1..=x).map(|y| 1.0 / (pi[y] * c.death(y))).sum();
                bp = bp.max(s * pi[x..].iter().sum::<f64>());
            }
            let mut bm: f64 = 0.0;
            for x in 0..i {
                let s: f64 = (x..i).map(|y| 1.0 / (pi[y] * c.birth(y))).sum();
                bm = bm.max(s * pi[..=x].iter().sum::<f64>());
            }
            let h = hardy_quantities(&c, i).unwrap();
            assert_relative_eq!(h.b_plus, bp, max_relative = 1e-10);
            assert_relative_eq!(h.b_minus, bm, max_relative = 1e-10);
        }
    }

    #[test]
    fn root_example() {
        let r = gap_report(1.0, 2.0, 2.0, 1.0, 3).unwrap();
        assert_relative_eq!(r.i1.unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.i2.unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(r.i_star, 3);
        assert_eq!(r.i_star_source, IStarSource::Root);
        let sym = gap_report(1.0, 1.0, 0.5, 0.5, 10).unwrap();
        assert_eq!(sym.i1, None);
        assert_eq!(sym.i_star_source, IStarSource::Argmax);
        assert_eq!(sym.i_star, 5);
    }

    #[test]
    fn roots_bracket_the_mode() {
        // ratio crosses 1 between floor(i1) and floor(i1)+1
        for (a, b, p1, p2, n) in [(1.0, 2.0, 3.0, 0.0, 40), (2.0, 1.0, 0.5, 2.0, 33), (1.0, 1.0, 4.0, 1.0, 17)] {
            let (i1, _) = ratio_roots(a, b, p1, p2, n).unwrap();
            let c = bd_marginal(a, b, p1, p2, n).unwrap();
            let r = ratio_sequence(&c);
            let m = i1.floor() as usize;
            if m + 1 < n {
                assert!(r[m + 1] <= 1.0 + 1e-12);
            }
            if m < n {
                assert!(r[m] >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn killing_dominated_chain_is_not_unimodal() {
        let r = gap_report(0.1, 0.1, 5.0, 5.0, 2).unwrap();
        assert!(!r.unimodal);
        let c = bd_marginal(0.1, 0.1, 5.0, 5.0, 2).unwrap();
        let pi = c.invariant();
        assert!(pi[1] < pi[0] && pi[1] < pi[2]);
    }

    #[test]
    fn lambda_u_and_gap_examples() {
        let c = bd_marginal(1.0, 1.0, 1.0, 1.0, 2).unwrap();
        assert_eq!(lambda_u(&c, &[1.0, 1.0]).unwrap(), 2.0);
        assert_relative_eq!(bd_gap_exact(&c).unwrap(), 2.0, epsilon = 1e-12);
        let ev = spectrum(&c.generator_matrix()).unwrap();
        assert_relative_eq!(ev[0], -6.0, epsilon = 1e-10);
        assert_relative_eq!(ev[1], -2.0, epsilon = 1e-10);
        let cg = BirthDeathChain::new(vec![1.0, 1.5], vec![1.5, 1.0]).unwrap();
        assert_relative_eq!(bd_gap_exact(&cg).unwrap(), 1.0, epsilon = 1e-12);
        assert!(lambda_u(&c, &[1.0, 0.0]).is_err());
        assert!(lambda_u(&c, &[1.0]).is_err());
    }

    #[test]
    fn gap_eigenfunction_increments_are_optimal() {
        let c = bd_marginal(1.0, 2.0, 3.0, 0.5, 15).unwrap();
        let n = c.n();
        let pi = c.invariant();
        let s = DMatrix::from_fn(n + 1, n + 1, |i, j| {
            let g = c.generator_matrix();
            -g[(i, j)] * (pi[i] / pi[j]).sqrt()
        });
        let sym = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
        let idx = order[1];
        let g: Vec<f64> = (0..=n).map(|k| eig.eigenvectors[(k, idx)] / pi[k].sqrt()).collect();
        let sign = if g[n] > g[0] { 1.0 } else { -1.0 };
        let u: Vec<f64> = (0..n).map(|k| sign * (g[k + 1] - g[k])).collect();
        let gap = bd_gap_exact(&c).unwrap();
        assert_relative_eq!(lambda_u(&c, &u).unwrap(), gap, max_relative = 1e-8);
        assert_relative_eq!(eig.eigenvalues[idx], gap, max_relative = 1e-10);
    }

    #[test]
    fn large_chain_gap() {
        let c = bd_marginal(1.0, 2.0, 3.0, 0.0, 5000).unwrap();
        let gap = bd_gap_exact(&c).unwrap();
        assert!(gap > 0.0 && gap.is_finite());
        assert!(matches!(
            bd_gap_exact(&bd_marginal(1.0, 2.0, 3.0, 0.0, 5001).unwrap()),
            Err(FvError::SizeGuard { .. })
        ));
    }

    fn chain_params() -> impl Strategy<Value = (f64, f64, f64, f64, usize)> {
        (0.1f64..3.0, 0.1f64..3.0, 0.0f64..4.0, 0.0f64..4.0, 2usize..40)
            .prop_filter("killing must be non-null", |t| t.2 + t.3 > 0.0)
    }

    proptest! {
        #[test]
        fn bd_detailed_balance((a, b, p1, p2, n) in chain_params()) {
            let c = bd_marginal(a, b, p1, p2, n).unwrap();
            prop_assert!(c.detailed_balance_residual() <= 1e-12);
        }

        #[test]
        fn hardy_bound_is_valid((a, b, p1, p2, n) in chain_params()) {
            let r = gap_report(a, b, p1, p2, n).unwrap();
            let gap = bd_gap_exact(&bd_marginal(a, b, p1, p2, n).unwrap()).unwrap();
            prop_assert!(r.gap_lower_bound > 0.0);
            prop_assert!(r.gap_lower_bound <= gap * (1.0 + 1e-10));
        }

        #[test]
        fn unimodal_when_mixing_dominates_killing(
            a in 0.1f64..3.0, b in 0.1f64..3.0, fa in 0.0f64..1.0, fb in 0.0f64..1.0, n in 2usize..60,
        ) {
            let (p1, p2) = (fa * a * (n as f64 - 1.0), fb * b * (n as f64 - 1.0));
            prop_assume!(p1 + p2 > 0.0);
            prop_assert!(gap_report(a, b, p1, p2, n).unwrap().unimodal);
        }

        #[test]
        fn lambda_u_is_a_lower_bound(
            (a, b, p1, p2, n) in chain_params(),
            seed in proptest::collection::vec(0.01f64..10.0, 40),
        ) {
            let c = bd_marginal(a, b, p1, p2, n).unwrap();
            let gap = bd_gap_exact(&c).unwrap();
            prop_assert!(lambda_u(&c, &seed[..n]).unwrap() <= gap + 1e-9);
        }

        #[test]
        fn gap_at_least_rho((a, b, p1, p2, n) in chain_params()) {
            let rho = a + b - (p1 - p2).abs();
            prop_assume!(rho > 0.0);
            let gap = bd_gap_exact(&bd_marginal(a, b, p1, p2, n).unwrap()).unwrap();
            prop_assert!(gap >= rho - 1e-9);
        }
    }
}
