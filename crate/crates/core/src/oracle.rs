//! Brute-force ground truth on enumerable configuration spaces.
//!
//! Everything here is dense or explicitly enumerated and guarded by size
//! limits; it exists to certify the closed forms and the simulators.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{FvError, Result};
use crate::linalg::{binomial, expm_action, Csr, Side};
use crate::model::{Configuration, Model, ProbabilityVector};
use crate::simulator::transition_rates;
use crate::coupling::{coupled_rates, CoupledPair};

/// Largest configuration space that may be enumerated.
pub const ENUMERATION_LIMIT: usize = 1_000_000;
/// Largest dense matrix dimension handled by the oracles.
pub const DENSE_LIMIT: usize = 3000;
/// Residual accepted for dense null-space solves.
pub const STATIONARY_RESIDUAL: f64 = 1e-10;

/// All configurations of `N` particles on `K` sites.
///
/// Ordered lexicographically with the first coordinate descending:
/// `(N,0,…)` first, `(…,0,N)` last.
#[derive(Debug, Clone)]
pub struct EnumeratedSpace {
    k: usize,
    n: usize,
    configs: Vec<Configuration>,
    index: HashMap<Configuration, usize>,
}

impl EnumeratedSpace {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn configs(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn index_of(&self, eta: &Configuration) -> Option<usize> {
        self.index.get(eta).copied()
    }

    /// Values of `f` at every configuration, in enumeration order.
    pub fn tabulate<F: Fn(&Configuration) -> f64>(&self, f: F) -> Vec<f64> {
        self.configs.iter().map(f).collect()
    }
}

/// `|E| = C(N+K-1, K-1)`.
pub fn space_size(k: usize, n: usize) -> f64 {
    binomial((n + k - 1) as u64, (k - 1) as u64)
}

pub fn enumerate_configurations(k: usize, n: usize) -> Result<EnumeratedSpace> {
    if k == 0 {
        return Err(FvError::InvalidArgument("K must be positive".into()));
    }
    let size = space_size(k, n);
    if size > ENUMERATION_LIMIT as f64 {
        return Err(FvError::SizeGuard {
            what: "configuration space",
            size: size.min(usize::MAX as f64) as usize,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut configs = Vec::with_capacity(size as usize);
    let mut current = vec![0u32; k];
    fill(&mut configs, &mut current, 0, n as u32);
    let index = configs
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    Ok(EnumeratedSpace {
        k,
        n,
        configs,
        index,
    })
}

fn fill(out: &mut Vec<Configuration>, current: &mut [u32], pos: usize, left: u32) {
    if pos + 1 == current.len() {
        current[pos] = left;
        out.push(Configuration::new(current.to_vec()).unwrap());
        return;
    }
    for v in (0..=left).rev() {
        current[pos] = v;
        fill(out, current, pos + 1, left - v);
    }
}

/// Sparse generator of the particle system on the enumerated space.
pub fn generator_sparse(model: &Model, n: usize) -> Result<(EnumeratedSpace, Csr)> {
    let space = enumerate_configurations(model.k(), n)?;
    let rows = space
        .configs()
        .iter()
        .enumerate()
        .map(|(a, eta)| {
            let mut row = Vec::new();
            let mut out = 0.0;
            for ((i, j), r) in transition_rates(model, n, eta) {
                row.push((space.index_of(&eta.moved(i, j)).unwrap(), r));
                out += r;
            }
            row.push((a, -out));
            row
        })
        .collect();
    Ok((space, Csr::from_rows(rows)))
}

fn dense_guard(what: &'static str, size: usize) -> Result<()> {
    if size > DENSE_LIMIT {
        return Err(FvError::SizeGuard {
            what,
            size,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

/// Dense generator `L` on `E`; rows sum to zero.
pub fn generator_matrix(model: &Model, n: usize) -> Result<(EnumeratedSpace, DMatrix<f64>)> {
    let size = space_size(model.k(), n);
    dense_guard("generator matrix", size.min(usize::MAX as f64) as usize)?;
    let (space, csr) = generator_sparse(model, n)?;
    Ok((space, csr.to_dense()))
}

/// Dense generator of the coupled process on `E × E`; the pair `(a, b)` sits
/// at index `a·|E| + b`.
pub fn coupled_generator_matrix(model: &Model, n: usize) -> Result<(EnumeratedSpace, DMatrix<f64>)> {
    let size = space_size(model.k(), n);
    dense_guard("coupled generator matrix", (size * size).min(usize::MAX as f64) as usize)?;
    let space = enumerate_configurations(model.k(), n)?;
    let s = space.len();
    let mut m = DMatrix::zeros(s * s, s * s);
    for a in 0..s {
        for b in 0..s {
            let pair = CoupledPair::new(space.configs[a].clone(), space.configs[b].clone())?;
            let row = a * s + b;
            for mv in coupled_rates(model, n, &pair)? {
                let next = pair.after(&mv);
                let col = space.index_of(&next.eta).unwrap() * s + space.index_of(&next.eta_prime).unwrap();
                m[(row, col)] += mv.rate;
                m[(row, row)] -= mv.rate;
            }
        }
    }
    Ok((space, m))
}

/// Invariant law of an irreducible generator: the normalized left null vector,
/// from a dense LU solve of `νL = 0, Σν = 1`.
pub fn stationary_exact(generator: &DMatrix<f64>) -> Result<ProbabilityVector> {
    let n = generator.nrows();
    dense_guard("stationary solve", n)?;
    if generator.ncols() != n {
        return Err(FvError::DimensionMismatch("generator must be square".into()));
    }
    let mut a = generator.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let nu = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FvError::Numerical("singular stationary system".into()))?;
    let scale = generator.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let residual = (nu.transpose() * generator).amax() / scale;
    if residual > STATIONARY_RESIDUAL {
        return Err(FvError::Numerical(format!(
            "stationary residual {residual:e} (generator not irreducible?)"
        )));
    }
    let v: Vec<f64> = nu.iter().map(|x| x.max(0.0)).collect();
    ProbabilityVector::from_weights(v)
}

/// Invariant law of the particle system for a model, in enumeration order.
pub fn stationary_for_model(model: &Model, n: usize) -> Result<(EnumeratedSpace, ProbabilityVector)> {
    let (space, l) = generator_matrix(model, n)?;
    Ok((space, stationary_exact(&l)?))
}

/// Law of `η_t` started from `eta0`, by uniformization.
pub fn transient_law(model: &Model, n: usize, eta0: &Configuration, t: f64) -> Result<(EnumeratedSpace, Vec<f64>)> {
    eta0.check_for(model, n)?;
    let (space, csr) = generator_sparse(model, n)?;
    let mut start = vec![0.0; space.len()];
    start[space.index_of(eta0).unwrap()] = 1.0;
    let law = expm_action(&csr, &start, t, Side::Left);
    Ok((space, law))
}

/// `cov(η_t(k), η_t(l))` from a deterministic start, by uniformization.
pub fn transient_covariance(model: &Model, n: usize, eta0: &Configuration, k: usize, l: usize, t: f64) -> Result<f64> {
    if k >= model.k() || l >= model.k() {
        return Err(FvError::InvalidArgument(format!("sites {k}, {l} out of range")));
    }
    let (space, law) = transient_law(model, n, eta0, t)?;
    let (mut ek, mut el, mut ekl) = (0.0, 0.0, 0.0);
    for (p, eta) in law.iter().zip(space.configs()) {
        let (x, y) = (f64::from(eta.counts()[k]), f64::from(eta.counts()[l]));
        ek += p * x;
        el += p * y;
        ekl += p * x * y;
    }
    Ok(ekl - ek * el)
}

/// Real parts of the eigenvalues of a dense matrix, ascending.
pub fn spectrum(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    dense_guard("spectrum", matrix.nrows())?;
    let mut ev: Vec<f64> = matrix.complex_eigenvalues().iter().map(|z| z.re).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Eigenvalues of a generator reversible with respect to `pi`, ascending.
///
/// Symmetrizes by `D^{1/2} L D^{-1/2}` with `D = diag(pi)` and uses a
/// symmetric eigensolver.
pub fn spectrum_reversible(generator: &DMatrix<f64>, pi: &[f64]) -> Result<Vec<f64>> {
    let n = generator.nrows();
    dense_guard("spectrum", n)?;
    if pi.len() != n {
        return Err(FvError::DimensionMismatch("pi and generator differ in size".into()));
    }
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = generator[(i, j)];
            if v != 0.0 {
                s[(i, j)] = v * sq[i] / sq[j];
            }
        }
    }
    let sym = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// `Γf(η) = Σ rate·(f(ξ) - f(η))²` over the moves out of `eta`.
pub fn carre_du_champ<F: Fn(&Configuration) -> f64>(model: &Model, n: usize, f: F, eta: &Configuration) -> f64 {
    let here = f(eta);
    transition_rates(model, n, eta)
        .into_iter()
        .map(|((i, j), r)| {
            let d = f(&eta.moved(i, j)) - here;
            r * d * d
        })
        .sum()
}

/// `Γf = L(f²) - 2f·Lf` evaluated from the definition.
pub fn carre_du_champ_definition<F: Fn(&Configuration) -> f64>(model: &Model, n: usize, f: F, eta: &Configuration) -> f64 {
    let moves = transition_rates(model, n, eta);
    let here = f(eta);
    let lf: f64 = moves.iter().map(|((i, j), r)| r * (f(&eta.moved(*i, *j)) - here)).sum();
    let lf2: f64 = moves
        .iter()
        .map(|((i, j), r)| {
            let v = f(&eta.moved(*i, *j));
            r * (v * v - here * here)
        })
        .sum();
    lf2 - 2.0 * here * lf
}

/// `Γg` for a tabulated function `g` on the whole space.
pub fn carre_du_champ_table(csr: &Csr, g: &[f64]) -> Vec<f64> {
    (0..csr.dim())
        .map(|a| {
            csr.row(a)
                .filter(|&(b, _)| b != a)
                .map(|(b, r)| r * (g[b] - g[a]).powi(2))
                .sum()
        })
        .collect()
}

/// Left Perron vector of a matrix with nonnegative off-diagonal entries, from
/// a dense eigenvalue solve followed by an LU null-space solve.
pub fn left_perron_dense(m: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let n = m.nrows();
    dense_guard("Perron solve", n)?;
    let top = m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut a = m.transpose();
    for i in 0..n {
        a[(i, i)] -= top;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let v = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FvError::Numerical("singular Perron system".into()))?;
    Ok((v.iter().copied().collect(), top))
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

    fn conf(v: &[u32]) -> Configuration {
        Configuration::new(v.to_vec()).unwrap()
    }

    #[test]
    fn enumeration_order_and_size() {
        let s = enumerate_configurations(2, 2).unwrap();
        assert_eq!(s.configs(), &[conf(&[2, 0]), conf(&[1, 1]), conf(&[0, 2])]);
        assert_eq!(enumerate_configurations(3, 2).unwrap().len(), 6);
        assert_eq!(enumerate_configurations(2, 5).unwrap().len(), 6);
        assert_eq!(enumerate_configurations(4, 7).unwrap().len(), 120);
        assert!(matches!(
            enumerate_configurations(10, 30),
            Err(FvError::SizeGuard { .. })
        ));
    }

    #[test]
    fn small_generator() {
        let (_, l) = generator_matrix(&cg(2, 1.0), 2).unwrap();
        assert_eq!(l[(1, 0)], 1.5);
        assert_eq!(l[(1, 2)], 1.5);
        assert_eq!(l[(0, 1)], 1.0);
        for r in 0..3 {
            assert!(l.row(r).sum().abs() < 1e-12);
        }
        let ev = spectrum(&l).unwrap();
        assert_relative_eq!(ev[0], -4.0, epsilon = 1e-10);
        assert_relative_eq!(ev[1], -1.0, epsilon = 1e-10);
        assert_relative_eq!(ev[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn stationary_small() {
        let (_, nu) = stationary_for_model(&cg(2, 1.0), 2).unwrap();
        assert_relative_eq!(nu[0], 0.375, epsilon = 1e-12);
        assert_relative_eq!(nu[1], 0.25, epsilon = 1e-12);
        let (_, nu) = stationary_for_model(&cg(2, 0.5), 2).unwrap();
        for x in nu.iter() {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn coupled_generator_marginals() {
        let m = Model::new(vec![vec![0.0, 1.0], vec![2.0, 0.0]], vec![3.0, 1.0]).unwrap();
        let (space, a) = coupled_generator_matrix(&m, 3).unwrap();
        let (_, l) = generator_matrix(&m, 3).unwrap();
        let s = space.len();
        for r in 0..s * s {
            assert!(a.row(r).sum().abs() < 1e-12);
        }
        // functions of the first copy: (A f⊗1)(a,b) = (L f)(a)
        for target in 0..s {
            for x in 0..s {
                for y in 0..s {
                    let lhs: f64 = (0..s).map(|b| a[(x * s + y, target * s + b)]).sum();
                    let rhs: f64 = (0..s).map(|b| a[(x * s + y, b * s + target)]).sum();
                    assert!((lhs - l[(x, target)]).abs() < 1e-12);
                    assert!((rhs - l[(y, target)]).abs() < 1e-12);
                }
            }
        }
        // diagonal pairs only reach diagonal pairs
        for x in 0..s {
            for col in 0..s * s {
                if a[(x * s + x, col)] > 0.0 {
                    assert_eq!(col / s, col % s);
                }
            }
        }
    }

    #[test]
    fn transient_covariance_limits() {
        let m = cg(2, 1.0);
        assert_eq!(transient_covariance(&m, 2, &conf(&[2, 0]), 0, 1, 0.0).unwrap(), 0.0);
        let late = transient_covariance(&m, 2, &conf(&[2, 0]), 0, 1, 40.0).unwrap();
        assert_relative_eq!(late, -0.75, epsilon = 1e-10);
    }

    #[test]
    fn carre_du_champ_forms_agree() {
        let m = cg(2, 1.0);
        let eta = conf(&[1, 1]);
        assert_eq!(carre_du_champ(&m, 2, |e| f64::from(e.counts()[0]), &eta), 3.0);
        assert_eq!(carre_du_champ(&m, 2, |_| 4.2, &eta), 0.0);
        let m = Model::new(
            vec![vec![0.0, 1.0, 0.5], vec![2.0, 0.0, 0.1], vec![0.3, 0.7, 0.0]],
            vec![1.5, 0.2, 0.8],
        )
        .unwrap();
        let space = enumerate_configurations(3, 5).unwrap();
        let f = |e: &Configuration| {
            let c = e.counts();
            (f64::from(c[0]) * 1.7 - f64::from(c[2] * c[1])).sin() + f64::from(c[1])
        };
        for eta in space.configs() {
            let a = carre_du_champ(&m, 5, f, eta);
            let b = carre_du_champ_definition(&m, 5, f, eta);
            assert!(a >= 0.0);
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn reversible_spectrum_matches_general() {
        let m = cg(3, 0.3);
        let (_, l) = generator_matrix(&m, 4).unwrap();
        let pi = stationary_exact(&l).unwrap();
        let a = spectrum(&l).unwrap();
        let b = spectrum_reversible(&l, &pi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn perron_two_point() {
        let m = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]);
        let (v, top) = left_perron_dense(&m).unwrap();
        assert_relative_eq!(top, -1.0, epsilon = 1e-12);
        assert_relative_eq!(v[0], 0.5, epsilon = 1e-12);
    }
}
