//! The explicit two-copy coupling of Fleming–Viot processes and the Monte
//! Carlo decay of `E[d1(η_t, η'_t)]`.
//!
//! A coupled move `(i, i', j, j')` sends a particle `i → j` in the first copy
//! and `i' → j'` in the second; `j == i` (resp. `j' == i'`) leaves that copy
//! in place. Particles are paired site by site: `c(k) = min(η(k), η'(k))`
//! couples sit together, and the `d1` unmatched particles of each copy are
//! paired with weight `u(i)·u'(i') / d1` where `u = (η - η')₊`,
//! `u' = (η' - η)₊`.
//!
//! Couples move together under `Q`. A killed couple at `i` either lands on a
//! common couple site `j` (weight `c(j)`) or splits onto unmatched particles
//! `j` and `j'` (weight `u(j)·u'(j')/d1`). An unmatched pair `(i, i')` moves
//! together at `min(Q[i][j], Q[i'][j])`, separately at the positive parts of
//! the difference, and merges when one copy jumps onto the other's site. Both
//! members die together at `min(p0[i], p0[i'])` and land on a common site or
//! split onto unmatched particles; the excess killing rate kills one alone.
//!
//! Degenerate index tuples (`j ∈ {i, i'}` in the redistribution clauses) are
//! kept: dropping them breaks the marginal identity whenever an unmatched
//! particle shares its site with a couple.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};
use crate::model::{d1_count, Configuration, Model};
use crate::oracle::enumerate_configurations;
use crate::simulator::{check_grid, replica_rng, transition_rates};

/// Largest number of ordered configuration pairs the exhaustive check visits.
pub const PAIR_ENUMERATION_LIMIT: usize = 1_000_000;

/// State of the coupled process.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoupledPair {
    pub eta: Configuration,
    pub eta_prime: Configuration,
}

impl CoupledPair {
    pub fn new(eta: Configuration, eta_prime: Configuration) -> Result<Self> {
        if eta.k() != eta_prime.k() || eta.n() != eta_prime.n() {
            return Err(FvError::DimensionMismatch(format!(
                "pair {eta} / {eta_prime} differs in K or N"
            )));
        }
        Ok(Self { eta, eta_prime })
    }

    pub fn d1(&self) -> u32 {
        d1_count(&self.eta, &self.eta_prime)
    }

    /// The pair after `(i, i', j, j')`.
    pub fn after(&self, mv: &CoupledMove) -> Self {
        let mut next = self.clone();
        next.apply(mv);
        next
    }

    fn apply(&mut self, mv: &CoupledMove) {
        if mv.j != mv.i {
            self.eta.apply_move(mv.i, mv.j);
        }
        if mv.j_prime != mv.i_prime {
            self.eta_prime.apply_move(mv.i_prime, mv.j_prime);
        }
    }
}

/// One entry of the coupled rate list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledMove {
    pub i: usize,
    pub i_prime: usize,
    pub j: usize,
    pub j_prime: usize,
    pub rate: f64,
}

/// Calls `emit(i, i', j, j', rate)` for every coupled clause with positive rate.
///
/// Identity moves are skipped and equal tuples from different clauses are not
/// merged.
fn for_each_move<F: FnMut(usize, usize, usize, usize, f64)>(
    model: &Model,
    n: usize,
    eta: &[u32],
    eta_p: &[u32],
    mut emit: F,
) {
    let k = model.k();
    let inv = 1.0 / (n as f64 - 1.0);
    let mut c = [0.0f64; 64];
    let mut u = [0.0f64; 64];
    let mut up = [0.0f64; 64];
    let mut c_vec;
    let mut u_vec;
    let mut up_vec;
    let (c, u, up): (&mut [f64], &mut [f64], &mut [f64]) = if k <= 64 {
        (&mut c[..k], &mut u[..k], &mut up[..k])
    } else {
        c_vec = vec![0.0; k];
        u_vec = vec![0.0; k];
        up_vec = vec![0.0; k];
        (&mut c_vec, &mut u_vec, &mut up_vec)
    };
    let mut d = 0.0;
    for s in 0..k {
        c[s] = f64::from(eta[s].min(eta_p[s]));
        u[s] = f64::from(eta[s].saturating_sub(eta_p[s]));
        up[s] = f64::from(eta_p[s].saturating_sub(eta[s]));
        d += u[s];
    }
    let mut push = |i, ip, j, jp, rate: f64| {
        if rate > 0.0 && (i != j || ip != jp) {
            emit(i, ip, j, jp, rate);
        }
    };

    for i in 0..k {
        if c[i] == 0.0 {
            continue;
        }
        let pi = model.killing(i);
        for j in (0..k).filter(|&j| j != i) {
            push(i, i, j, j, c[i] * (model.rate(i, j) + pi * c[j] * inv));
        }
        if d > 0.0 && pi > 0.0 {
            let scale = pi * c[i] * inv / d;
            for j in (0..k).filter(|&j| u[j] > 0.0) {
                for jp in (0..k).filter(|&jp| up[jp] > 0.0) {
                    push(i, i, j, jp, scale * u[j] * up[jp]);
                }
            }
        }
    }

    if d == 0.0 {
        return;
    }
    for i in (0..k).filter(|&i| u[i] > 0.0) {
        for ip in (0..k).filter(|&ip| up[ip] > 0.0) {
            let w = u[i] * up[ip] / d;
            for j in (0..k).filter(|&j| j != i && j != ip) {
                let (qi, qip) = (model.rate(i, j), model.rate(ip, j));
                push(i, ip, j, j, w * qi.min(qip));
                push(i, ip, j, ip, w * (qi - qip).max(0.0));
                push(i, ip, i, j, w * (qip - qi).max(0.0));
            }
            push(i, ip, ip, ip, w * model.rate(i, ip));
            push(i, ip, i, i, w * model.rate(ip, i));

            let (pi, pip) = (model.killing(i), model.killing(ip));
            let m = pi.min(pip);
            if m > 0.0 {
                for j in 0..k {
                    push(i, ip, j, j, w * m * c[j] * inv);
                }
                let scale = w * m * inv / d;
                for j in (0..k).filter(|&j| u[j] > 0.0) {
                    for jp in (0..k).filter(|&jp| up[jp] > 0.0) {
                        push(i, ip, j, jp, scale * u[j] * up[jp]);
                    }
                }
            }
            if pi > pip {
                for j in (0..k).filter(|&j| j != i) {
                    push(i, ip, j, ip, w * (pi - pip) * f64::from(eta[j]) * inv);
                }
            }
            if pip > pi {
                for jp in (0..k).filter(|&jp| jp != ip) {
                    push(i, ip, i, jp, w * (pip - pi) * f64::from(eta_p[jp]) * inv);
                }
            }
        }
    }
}

/// Complete list of positive-rate coupled moves out of `pair`.
pub fn coupled_rates(model: &Model, n: usize, pair: &CoupledPair) -> Result<Vec<CoupledMove>> {
    pair.eta.check_for(model, n)?;
    pair.eta_prime.check_for(model, n)?;
    let mut out = Vec::new();
    for_each_move(model, n, pair.eta.counts(), pair.eta_prime.counts(), |i, i_prime, j, j_prime, rate| {
        out.push(CoupledMove {
            i,
            i_prime,
            j,
            j_prime,
            rate,
        })
    });
    Ok(out)
}

fn run_pair<R: Rng>(
    model: &Model,
    n: usize,
    pair0: &CoupledPair,
    times: &[f64],
    rng: &mut R,
) -> Vec<CoupledPair> {
    let mut pair = pair0.clone();
    let mut now = 0.0;
    let mut moves: Vec<CoupledMove> = Vec::new();
    let mut out = Vec::with_capacity(times.len());
    let mut rebuild = true;
    let mut total = 0.0;
    for &t in times {
        loop {
            if rebuild {
                moves.clear();
                for_each_move(model, n, pair.eta.counts(), pair.eta_prime.counts(), |i, i_prime, j, j_prime, rate| {
                    moves.push(CoupledMove {
                        i,
                        i_prime,
                        j,
                        j_prime,
                        rate,
                    })
                });
                total = moves.iter().map(|m| m.rate).sum();
                rebuild = false;
            }
            if total <= 0.0 {
                now = t;
                break;
            }
            let next = now + rng.sample::<f64, _>(Exp1) / total;
            if next > t {
                // memoryless: the residual clock restarts from t
                now = t;
                break;
            }
            now = next;
            let mut x = rng.random::<f64>() * total;
            let mut chosen = moves.len() - 1;
            for (idx, m) in moves.iter().enumerate() {
                if x < m.rate {
                    chosen = idx;
                    break;
                }
                x -= m.rate;
            }
            pair.apply(&moves[chosen]);
            rebuild = true;
        }
        out.push(pair.clone());
    }
    out
}

/// One coupled trajectory endpoint at `t_end`, replica stream 0 of `seed`.
pub fn simulate_pair(model: &Model, n: usize, pair0: &CoupledPair, t_end: f64, seed: u64) -> Result<CoupledPair> {
    pair0.eta.check_for(model, n)?;
    pair0.eta_prime.check_for(model, n)?;
    check_grid(&[t_end], f64::INFINITY)?;
    let mut rng = replica_rng(seed, 0);
    Ok(run_pair(model, n, pair0, &[t_end], &mut rng).pop().unwrap())
}

/// Coupled states of every replica on a sorted time grid, in replica order.
pub fn simulate_pair_paths(
    model: &Model,
    n: usize,
    pair0: &CoupledPair,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<CoupledPair>>> {
    pair0.eta.check_for(model, n)?;
    pair0.eta_prime.check_for(model, n)?;
    check_grid(times, f64::INFINITY)?;
    Ok((0..replicas as u64)
        .into_par_iter()
        .map(|r| run_pair(model, n, pair0, times, &mut replica_rng(seed, r)))
        .collect())
}

/// One Monte Carlo estimate on a time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub time: f64,
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo curve `t ↦ E[...]` with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub points: Vec<DecayPoint>,
}

impl DecayCurve {
    /// CSV with columns `time,estimate,std_error`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,estimate,std_error")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.time, p.estimate, p.std_error)?;
        }
        Ok(())
    }
}

/// Estimates `E[d1(η_t, η'_t)]` under the coupling on a sorted time grid.
pub fn wasserstein_decay(
    model: &Model,
    n: usize,
    pair0: &CoupledPair,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<DecayCurve> {
    if replicas < 2 {
        return Err(FvError::InvalidArgument("need at least 2 replicas".into()));
    }
    let paths = simulate_pair_paths(model, n, pair0, times, replicas, seed)?;
    let r = replicas as f64;
    let points = times
        .iter()
        .enumerate()
        .map(|(ti, &time)| {
            let d: Vec<f64> = paths.iter().map(|p| f64::from(p[ti].d1())).collect();
            let mean = d.iter().sum::<f64>() / r;
            let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0);
            DecayPoint {
                time,
                estimate: mean,
                std_error: (var / r).sqrt(),
            }
        })
        .collect();
    Ok(DecayCurve { points })
}

/// Result of the exhaustive check of the coupling over `E × E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Largest `|𝕃f - ℒf|` over pairs and one-copy indicator functions.
    pub max_marginal_gap: f64,
    /// Largest `𝕃d1 + ρ·d1` over pairs.
    pub max_drift_violation: f64,
    /// Largest `𝕃d1 + ρ'·d1` over pairs.
    pub max_drift_violation_rho_prime: f64,
    pub rho: f64,
    pub rho_prime: f64,
    pub pairs: usize,
}

/// Exhaustive marginal-consistency and drift check of the coupling.
///
/// For one-copy indicator functions `f = 1_ξ`, `𝕃f(η, η')` is the total
/// coupled rate sending that copy to `ξ`, so the marginal gap compares
/// aggregated coupled rates per single-copy move against
/// [`transition_rates`].
pub fn coupling_consistency_check(model: &Model, n: usize) -> Result<ConsistencyReport> {
    let space = enumerate_configurations(model.k(), n)?;
    let size = space.len();
    let pairs = size.checked_mul(size).unwrap_or(usize::MAX);
    if pairs > PAIR_ENUMERATION_LIMIT {
        return Err(FvError::SizeGuard {
            what: "pair space",
            size: pairs,
            limit: PAIR_ENUMERATION_LIMIT,
        });
    }
    let coeffs = model.ergodic_coefficients();
    let k = model.k();
    let configs = space.configs();
    let single: Vec<Vec<f64>> = configs
        .iter()
        .map(|eta| {
            let mut dense = vec![0.0; k * k];
            for ((i, j), r) in transition_rates(model, n, eta) {
                dense[i * k + j] = r;
            }
            dense
        })
        .collect();

    let rows: Vec<(f64, f64, f64)> = (0..size)
        .into_par_iter()
        .map(|a| {
            let mut gap: f64 = 0.0;
            let mut viol = f64::NEG_INFINITY;
            let mut viol_p = f64::NEG_INFINITY;
            let mut first = vec![0.0; k * k];
            let mut second = vec![0.0; k * k];
            for b in 0..size {
                let (x, y) = (configs[a].counts(), configs[b].counts());
                first.iter_mut().for_each(|v| *v = 0.0);
                second.iter_mut().for_each(|v| *v = 0.0);
                let d_before = i64::from(d1_count(&configs[a], &configs[b]));
                let mut drift = 0.0;
                for_each_move(model, n, x, y, |i, ip, j, jp, rate| {
                    if i != j {
                        first[i * k + j] += rate;
                    }
                    if ip != jp {
                        second[ip * k + jp] += rate;
                    }
                    drift += rate * delta_d1(x, y, i, ip, j, jp) as f64;
                });
                for s in 0..k * k {
                    gap = gap.max((first[s] - single[a][s]).abs());
                    gap = gap.max((second[s] - single[b][s]).abs());
                }
                let d = d_before as f64;
                viol = viol.max(drift + coeffs.rho * d);
                viol_p = viol_p.max(drift + coeffs.rho_prime * d);
            }
            (gap, viol, viol_p)
        })
        .collect();

    let fold = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Ok(ConsistencyReport {
        max_marginal_gap: fold(|r| r.0),
        max_drift_violation: fold(|r| r.1),
        max_drift_violation_rho_prime: fold(|r| r.2),
        rho: coeffs.rho,
        rho_prime: coeffs.rho_prime,
        pairs,
    })
}

/// Change of `d1` caused by the coupled move `(i, i', j, j')`.
pub(crate) fn delta_d1(x: &[u32], y: &[u32], i: usize, ip: usize, j: usize, jp: usize) -> i64 {
    let mut touched = [i, ip, j, jp];
    touched.sort_unstable();
    let mut delta = 0;
    for (pos, &s) in touched.iter().enumerate() {
        if pos > 0 && touched[pos - 1] == s {
            continue;
        }
        let mut diff = i64::from(x[s]) - i64::from(y[s]);
        let before = diff.max(0);
        if i != j {
            diff -= i64::from(s == i);
            diff += i64::from(s == j);
        }
        if ip != jp {
            diff += i64::from(s == ip);
            diff -= i64::from(s == jp);
        }
        delta += diff.max(0) - before;
    }
    delta
}
