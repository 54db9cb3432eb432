//! The killed chain's sub-Markovian generator, its conditioned semigroup
//! `μ ↦ μT_t` and quasi-stationary distributions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};
use crate::linalg::{expm_action, Csr, Side};
use crate::model::{total_variation, Model, ProbabilityVector};

/// Residual `‖νM + θν‖∞` accepted for a quasi-stationary distribution.
pub const QSD_RESIDUAL: f64 = 1e-10;
const QSD_MAX_ITERATIONS: usize = 5_000_000;

/// `M = Q - diag(Q_i + p0(i))`, the generator of the killed chain restricted
/// to the live sites.
#[derive(Debug, Clone, PartialEq)]
pub struct KilledGenerator {
    m: DMatrix<f64>,
}

impl KilledGenerator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn k(&self) -> usize {
        self.m.nrows()
    }

    /// Uniformization constant `1.01·max|M_ii|`.
    pub fn uniformization_rate(&self) -> f64 {
        1.01 * (0..self.k()).map(|i| self.m[(i, i)].abs()).fold(0.0, f64::max)
    }
}

pub fn killed_generator(model: &Model) -> KilledGenerator {
    let k = model.k();
    let m = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            -(model.row_sum(i) + model.killing(i))
        } else {
            model.rate(i, j)
        }
    });
    KilledGenerator { m }
}

/// `μT_t` together with the disagreement between the two ways of computing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedLaw {
    pub mu_t: ProbabilityVector,
    /// Max-abs gap between the linear and the nonlinear computation.
    pub method_gap: f64,
}

/// `μP_t / μP_t 1` by uniformization, renormalized block by block so that long
/// horizons do not underflow.
pub fn conditioned_linear(model: &Model, mu0: &[f64], t: f64) -> Result<ProbabilityVector> {
    check_start(model, mu0, t)?;
    let gen = killed_generator(model);
    let csr = Csr::from_dense(gen.matrix());
    let block = 30.0 / gen.uniformization_rate();
    let mut v = mu0.to_vec();
    let mut done = 0.0;
    while done < t {
        let h = block.min(t - done);
        v = expm_action(&csr, &v, h, Side::Left);
        let s: f64 = v.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(FvError::Numerical("surviving mass vanished".into()));
        }
        v.iter_mut().for_each(|x| *x /= s);
        done += h;
    }
    ProbabilityVector::from_weights(v)
}

/// Fixed-step RK4 for `v' = vM + (Σ p0(i)v_i)·v`, renormalized every step.
pub fn conditioned_nonlinear(model: &Model, mu0: &[f64], t: f64, dt: f64) -> Result<ProbabilityVector> {
    check_start(model, mu0, t)?;
    if t == 0.0 {
        return ProbabilityVector::new(mu0.to_vec());
    }
    if !(dt > 0.0 && dt <= t) {
        return Err(FvError::InvalidArgument(format!("step {dt} must lie in (0, {t}]")));
    }
    let m = killed_generator(model).m;
    let k = model.k();
    let p0 = model.p0();
    let field = |v: &[f64]| -> Vec<f64> {
        let theta: f64 = v.iter().zip(p0).map(|(x, p)| x * p).sum();
        (0..k)
            .map(|j| (0..k).map(|i| v[i] * m[(i, j)]).sum::<f64>() + theta * v[j])
            .collect()
    };
    let steps = (t / dt).ceil() as usize;
    let h = t / steps as f64;
    let mut v = mu0.to_vec();
    let shifted = |v: &[f64], d: &[f64], s: f64| -> Vec<f64> { v.iter().zip(d).map(|(x, y)| x + s * y).collect() };
    for _ in 0..steps {
        let k1 = field(&v);
        let k2 = field(&shifted(&v, &k1, h / 2.0));
        let k3 = field(&shifted(&v, &k2, h / 2.0));
        let k4 = field(&shifted(&v, &k3, h));
        for j in 0..k {
            v[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let s: f64 = v.iter().sum();
        if !s.is_finite() || v.iter().any(|x| !x.is_finite()) || s <= 0.0 {
            return Err(FvError::Numerical(format!("RK4 blew up with step {h}")));
        }
        v.iter_mut().for_each(|x| *x = x.max(0.0) / s);
    }
    ProbabilityVector::from_weights(v)
}

/// `μT_t` computed linearly (returned) and by the nonlinear forward equation
/// with step `dt` (used only for `method_gap`).
pub fn conditioned_evolution(model: &Model, mu0: &[f64], t: f64, dt: f64) -> Result<ConditionedLaw> {
    let linear = conditioned_linear(model, mu0, t)?;
    if t == 0.0 {
        return Ok(ConditionedLaw {
            mu_t: linear,
            method_gap: 0.0,
        });
    }
    let nonlinear = conditioned_nonlinear(model, mu0, t, dt)?;
    let method_gap = linear
        .iter()
        .zip(nonlinear.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ConditionedLaw {
        mu_t: linear,
        method_gap,
    })
}

fn check_start(model: &Model, mu0: &[f64], t: f64) -> Result<()> {
    if mu0.len() != model.k() {
        return Err(FvError::DimensionMismatch(format!(
            "initial law has length {}, model has {} sites",
            mu0.len(),
            model.k()
        )));
    }
    ProbabilityVector::new(mu0.to_vec())?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(FvError::InvalidArgument(format!("time {t}")));
    }
    Ok(())
}

/// A quasi-stationary distribution and its extinction rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsdResult {
    pub nu: ProbabilityVector,
    /// `θ` with `νM = -θν`.
    pub theta: f64,
}

/// Left Perron vector of `M` by power iteration on `I + M/c`.
pub fn qsd(model: &Model) -> Result<QsdResult> {
    let gen = killed_generator(model);
    let m = gen.matrix();
    let k = gen.k();
    let c = gen.uniformization_rate();
    let p = DMatrix::identity(k, k) + m / c;
    let mut v = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    let residual = |v: &[f64]| -> (f64, f64) {
        let theta: f64 = v.iter().zip(model.p0()).map(|(x, p)| x * p).sum();
        let r = (0..k)
            .map(|j| ((0..k).map(|i| v[i] * m[(i, j)]).sum::<f64>() + theta * v[j]).abs())
            .fold(0.0, f64::max);
        (theta, r)
    };
    let scale = c.max(1.0);
    for it in 0..QSD_MAX_ITERATIONS {
        for j in 0..k {
            next[j] = (0..k).map(|i| v[i] * p[(i, j)]).sum();
        }
        let s: f64 = next.iter().sum();
        for j in 0..k {
            next[j] /= s;
        }
        let change = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if change == 0.0 || (it % 16 == 0 && residual(&v).1 <= 1e-14 * scale) {
            break;
        }
    }
    let (theta, r) = residual(&v);
    if r > QSD_RESIDUAL * scale {
        return Err(FvError::NonConvergence {
            iterations: QSD_MAX_ITERATIONS,
            context: format!("QSD residual {r:e}"),
        });
    }
    Ok(QsdResult {
        nu: ProbabilityVector::from_weights(v)?,
        theta,
    })
}

/// Closed-form spectral data of the two-site killed chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointSpectral {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// `λ₊ - λ₋`.
    pub gap: f64,
    /// QSD computed numerically (left Perron vector).
    pub nu_numeric: ProbabilityVector,
    /// The vector `(a, -A + √(A² + 4ab))` normalized to unit mass,
    /// `A = a - b + p1 - p2`.
    pub nu_printed: Vec<f64>,
    /// Total variation between `nu_numeric` and `nu_printed`.
    pub printed_formula_discrepancy: f64,
}

pub fn two_point_spectral(a: f64, b: f64, p1: f64, p2: f64) -> Result<TwoPointSpectral> {
    if !(a > 0.0 && b > 0.0) {
        return Err(FvError::InvalidArgument("a and b must be positive".into()));
    }
    let model = Model::new(vec![vec![0.0, a], vec![b, 0.0]], vec![p1, p2])?;
    let big_a = a - b + p1 - p2;
    let root = (big_a * big_a + 4.0 * a * b).sqrt();
    let trace = a + b + p1 + p2;
    let lambda_plus = (-trace + root) / 2.0;
    let lambda_minus = (-trace - root) / 2.0;
    let printed = [a, -big_a + root];
    let s = printed[0] + printed[1];
    let nu_printed = vec![printed[0] / s, printed[1] / s];
    let nu_numeric = qsd(&model)?.nu;
    let printed_formula_discrepancy = total_variation(&nu_numeric, &nu_printed)?;
    Ok(TwoPointSpectral {
        lambda_plus,
        lambda_minus,
        gap: lambda_plus - lambda_minus,
        nu_numeric,
        nu_printed,
        printed_formula_discrepancy,
    })
}
