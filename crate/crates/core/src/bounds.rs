//! Explicit bounds: covariance decay, propagation of chaos, time-uniform
//! convergence and coalescence.

use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};
use crate::model::Model;

/// Constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `sup_i Σ_{j≠i} Q[i][j]`.
    pub q1: f64,
    pub p_sup: f64,
    /// `Q1 + 2·p_sup`.
    pub b: f64,
    pub rho: f64,
}

pub fn bound_constants(model: &Model) -> BoundConstants {
    let q1 = (0..model.k()).map(|i| model.row_sum(i)).fold(0.0, f64::max);
    let p_sup = model.p_max();
    BoundConstants {
        q1,
        p_sup,
        b: q1 + 2.0 * p_sup,
        rho: model.ergodic_coefficients().rho,
    }
}

/// `(1 - e^{-2ρt}) / ρ`, equal to `2t` at `ρ = 0`.
fn decay_factor(rho: f64, t: f64) -> f64 {
    if t.is_infinite() {
        return if rho > 0.0 { 1.0 / rho } else { f64::INFINITY };
    }
    if rho == 0.0 {
        2.0 * t
    } else {
        -(-2.0 * rho * t).exp_m1() / rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBound {
    /// Bound on `|cov(η_t(k)/N, η_t(l)/N)|`.
    pub pair_bound: f64,
    /// Bound on `|cov(g(η_t), h(η_t))|` for 1-Lipschitz `g, h` with respect to `d1`.
    pub lipschitz_bound: f64,
}

/// Covariance bounds at time `t` (`t = ∞` allowed when `ρ > 0`).
pub fn covariance_bound(model: &Model, n: usize, t: f64) -> Result<CovarianceBound> {
    if n < 2 {
        return Err(FvError::InvalidArgument(format!("N = {n}, need N >= 2")));
    }
    if !(t >= 0.0) {
        return Err(FvError::InvalidArgument(format!("time {t}")));
    }
    let c = bound_constants(model);
    let nf = n as f64;
    let factor = decay_factor(c.rho, t);
    Ok(CovarianceBound {
        pair_bound: 2.0 * (c.q1 + c.p_sup) / (nf - 1.0) * factor,
        lipschitz_bound: factor / 2.0 * (nf * c.q1 + c.p_sup * nf * nf / (nf - 1.0)),
    })
}

/// `C·e^{Bt}·(1/√N + tv0)`.
pub fn chaos_bound(model: &Model, n: usize, t: f64, c: f64, tv0: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(FvError::InvalidArgument("C must be positive".into()));
    }
    if !(0.0..=1.0).contains(&tv0) {
        return Err(FvError::InvalidArgument(format!("tv0 = {tv0} outside [0, 1]")));
    }
    if n == 0 || !(t >= 0.0) {
        return Err(FvError::InvalidArgument("need N >= 1 and t >= 0".into()));
    }
    let b = bound_constants(model).b;
    Ok(c * (b * t).exp() * (1.0 / (n as f64).sqrt() + tv0))
}

/// Time-uniform bound `((B+ρ)/B)·(BC/(ρ√(N-1)))^{ρ/(B+ρ)}`; requires `ρ > 0`.
pub fn uniform_bound(model: &Model, n: usize, c: f64) -> Result<f64> {
    let k = bound_constants(model);
    if k.rho <= 0.0 {
        return Err(FvError::NotApplicable(format!("rho = {} <= 0", k.rho)));
    }
    if n < 2 || !(c > 0.0) {
        return Err(FvError::InvalidArgument("need N >= 2 and C > 0".into()));
    }
    let base = k.b * c / (k.rho * ((n - 1) as f64).sqrt());
    Ok((k.b + k.rho) / k.b * base.powf(k.rho / (k.b + k.rho)))
}

/// `e^{-ρt}·w0`.
pub fn coalescence_tv_bound(rho: f64, t: f64, w0: f64) -> Result<f64> {
    if !(w0 >= 0.0) {
        return Err(FvError::InvalidArgument(format!("w0 = {w0} is negative")));
    }
    Ok((-rho * t).exp() * w0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cg(k: usize, p: f64) -> Model {
        let q = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 / k as f64 }).collect())
            .collect();
        Model::new(q, vec![p; k]).unwrap()
    }

    fn two_point(a: f64, b: f64, p1: f64, p2: f64) -> Model {
        Model::new(vec![vec![0.0, a], vec![b, 0.0]], vec![p1, p2]).unwrap()
    }

    #[test]
    fn constants() {
        let c = bound_constants(&cg(4, 0.5));
        assert_relative_eq!(c.q1, 0.75);
        assert_eq!(c.p_sup, 0.5);
        assert_relative_eq!(c.b, 1.75);
        let c = bound_constants(&two_point(1.0, 2.0, 3.0, 1.0));
        assert_eq!((c.q1, c.p_sup, c.b), (2.0, 3.0, 8.0));
    }

    #[test]
    fn covariance_examples() {
        let m = cg(2, 1.0);
        let zero = covariance_bound(&m, 10, 0.0).unwrap();
        assert_eq!(zero.pair_bound, 0.0);
        assert_eq!(zero.lipschitz_bound, 0.0);
        let inf = covariance_bound(&m, 10, f64::INFINITY).unwrap();
        assert_relative_eq!(inf.pair_bound, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rho_zero_continuity() {
        // a + b = |p1 - p2| gives rho = 0
        let at = covariance_bound(&two_point(1.0, 1.0, 2.5, 0.5), 5, 1.3).unwrap();
        let above = covariance_bound(&two_point(1.0, 1.0 + 1e-9, 2.5, 0.5), 5, 1.3).unwrap();
        let below = covariance_bound(&two_point(1.0, 1.0 - 1e-9, 2.5, 0.5), 5, 1.3).unwrap();
        assert_eq!(bound_constants(&two_point(1.0, 1.0, 2.5, 0.5)).rho, 0.0);
        assert_relative_eq!(at.pair_bound, 2.0 * 3.5 / 4.0 * 2.6, epsilon = 1e-12);
        for other in [above, below] {
            assert_relative_eq!(other.pair_bound, at.pair_bound, max_relative = 1e-7);
            assert_relative_eq!(other.lipschitz_bound, at.lipschitz_bound, max_relative = 1e-7);
        }
    }

    #[test]
    fn chaos_shapes() {
        let m = cg(3, 1.0);
        let b = bound_constants(&m).b;
        assert_relative_eq!(chaos_bound(&m, 16, 0.0, 2.0, 0.0).unwrap(), 0.5);
        let one = chaos_bound(&m, 16, 1.0, 2.0, 0.1).unwrap();
        let two = chaos_bound(&m, 16, 2.0, 2.0, 0.1).unwrap();
        assert_relative_eq!(two / one, b.exp(), max_relative = 1e-12);
        let n1 = chaos_bound(&m, 25, 0.0, 1.0, 0.0).unwrap();
        let n4 = chaos_bound(&m, 100, 0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(n4 / n1, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn uniform_examples() {
        let m = cg(2, 1.0);
        let v = uniform_bound(&m, 101, 1.0).unwrap();
        let expected = 3.5 / 2.5 * (2.5f64 / 10.0).powf(1.0 / 3.5);
        assert_relative_eq!(v, expected, epsilon = 1e-14);
        assert_relative_eq!(v, 0.942_130, epsilon = 1e-6);
        // N^{-ρ/(2(B+ρ))} decay
        let a = uniform_bound(&m, 10_001, 1.0).unwrap();
        let b = uniform_bound(&m, 1_000_001, 1.0).unwrap();
        assert_relative_eq!((a / b).ln() / 100f64.ln(), 1.0 / 7.0, max_relative = 1e-4);
        assert!(matches!(
            uniform_bound(&two_point(1.0, 1.0, 5.0, 0.1), 10, 1.0),
            Err(FvError::NotApplicable(_))
        ));
    }

    #[test]
    fn uniform_bound_in_large_b_limit() {
        // growing killing at a fixed spread: B grows, rho stays 3, bound tends to 1
        let gaps: Vec<f64> = [1e2, 1e4, 1e6]
            .iter()
            .map(|&p| (uniform_bound(&two_point(2.0, 2.0, p + 1.0, p), 1000, 1.0).unwrap() - 1.0).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps[2] < 1e-4);
    }

    #[test]
    fn coalescence() {
        assert_eq!(coalescence_tv_bound(1.0, 0.0, 0.3).unwrap(), 0.3);
        assert_eq!(coalescence_tv_bound(1.0, 5.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(coalescence_tv_bound(1.0, 2f64.ln(), 2.0).unwrap(), 1.0, epsilon = 1e-15);
    }
}
