//! Exact event-driven simulation of the `N`-particle Fleming–Viot process.
//!
//! A particle at `i` jumps to `j` at rate `Q[i][j]`. When it is killed (at rate
//! `p0[i]`) it is moved onto the site of one of the other `N - 1` particles,
//! chosen uniformly. A move `i → j` therefore fires at rate
//! `η(i)·(Q[i][j] + p0[i]·η(j)/(N-1))`.
//!
//! Replicas use independent ChaCha8 streams: replica `r` of master seed `s`
//! draws from `ChaCha8Rng::seed_from_u64(s)` with its stream set to `r`. A
//! single [`simulate`] call is replica 0.

use std::io::{self, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FvError, Result};
use crate::model::{Configuration, Model};

/// RNG for replica `index` under master seed `seed`.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Parameters of a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub model: Model,
    pub n: usize,
    pub t_end: f64,
    pub seed: u64,
    pub replicas: usize,
}

impl SimulationSpec {
    pub fn new(model: Model, n: usize, t_end: f64, seed: u64, replicas: usize) -> Result<Self> {
        if n < 2 {
            return Err(FvError::InvalidArgument(format!("N = {n}, need N >= 2")));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(FvError::InvalidArgument(format!("t_end = {t_end}")));
        }
        if replicas == 0 {
            return Err(FvError::InvalidArgument("replicas must be positive".into()));
        }
        Ok(Self {
            model,
            n,
            t_end,
            seed,
            replicas,
        })
    }
}

/// Every positive-rate move `(i, j)` out of `eta` with its rate.
pub fn transition_rates(model: &Model, n: usize, eta: &Configuration) -> Vec<((usize, usize), f64)> {
    let k = model.k();
    let c = eta.counts();
    let inv = 1.0 / (n as f64 - 1.0);
    let mut out = Vec::new();
    for i in 0..k {
        if c[i] == 0 {
            continue;
        }
        let ni = f64::from(c[i]);
        for j in (0..k).filter(|&j| j != i) {
            let rate = ni * (model.rate(i, j) + model.killing(i) * f64::from(c[j]) * inv);
            if rate > 0.0 {
                out.push(((i, j), rate));
            }
        }
    }
    out
}

/// Incremental Gillespie sampler for one trajectory.
///
/// Keeps the per-site departure rate `η(i)·(Q_i + p0[i]·(N-η(i))/(N-1))`,
/// which only depends on `η(i)`, so a move touches two entries.
pub(crate) struct Stepper<'a> {
    model: &'a Model,
    inv: f64,
    n: f64,
    row_sums: Vec<f64>,
    leave: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a Model, n: usize, eta: &Configuration) -> Self {
        let row_sums: Vec<f64> = (0..model.k()).map(|i| model.row_sum(i)).collect();
        let mut s = Self {
            model,
            inv: 1.0 / (n as f64 - 1.0),
            n: n as f64,
            row_sums,
            leave: vec![0.0; model.k()],
        };
        for i in 0..model.k() {
            s.refresh(eta, i);
        }
        s
    }

    fn refresh(&mut self, eta: &Configuration, i: usize) {
        let ni = f64::from(eta.counts()[i]);
        self.leave[i] = ni * (self.row_sums[i] + self.model.killing(i) * (self.n - ni) * self.inv);
    }

    fn total(&self) -> f64 {
        self.leave.iter().sum()
    }

    /// Advances `eta` to time `t_target`, returning once the next event would
    /// fire after it. `now` is updated to `t_target`.
    pub(crate) fn advance<R: Rng>(
        &mut self,
        eta: &mut Configuration,
        now: &mut f64,
        t_target: f64,
        pending: &mut Option<f64>,
        rng: &mut R,
    ) {
        loop {
            let total = self.total();
            if total <= 0.0 {
                *now = t_target;
                return;
            }
            let next = match pending.take() {
                Some(t) => t,
                None => *now + rng.sample::<f64, _>(Exp1) / total,
            };
            if next > t_target {
                // memorylessness would allow a redraw, but keeping the clock
                // makes grid refinement leave trajectories unchanged
                *pending = Some(next);
                *now = t_target;
                return;
            }
            *now = next;
            let (i, j) = self.pick(eta, total, rng);
            eta.apply_move(i, j);
            self.refresh(eta, i);
            self.refresh(eta, j);
        }
    }

    fn pick<R: Rng>(&self, eta: &Configuration, total: f64, rng: &mut R) -> (usize, usize) {
        let k = self.model.k();
        let mut u = rng.random::<f64>() * total;
        let mut i = k - 1;
        for (s, &r) in self.leave.iter().enumerate() {
            if u < r {
                i = s;
                break;
            }
            u -= r;
        }
        while self.leave[i] <= 0.0 {
            i -= 1;
        }
        let c = eta.counts();
        let weight = |j: usize| self.model.rate(i, j) + self.model.killing(i) * f64::from(c[j]) * self.inv;
        let row_total: f64 = (0..k).filter(|&j| j != i).map(weight).sum();
        let mut u = rng.random::<f64>() * row_total;
        let mut last = None;
        for j in (0..k).filter(|&j| j != i) {
            let w = weight(j);
            if w > 0.0 {
                last = Some(j);
                if u < w {
                    return (i, j);
                }
                u -= w;
            }
        }
        (i, last.expect("site with positive departure rate has a target"))
    }
}

/// One exact trajectory endpoint at `spec.t_end` (replica stream 0).
pub fn simulate(spec: &SimulationSpec, eta0: &Configuration) -> Result<Configuration> {
    eta0.check_for(&spec.model, spec.n)?;
    let mut rng = replica_rng(spec.seed, 0);
    Ok(run_path(&spec.model, spec.n, eta0, &[spec.t_end], &mut rng).pop().unwrap())
}

/// States of one trajectory at each of the sorted `times`.
pub fn simulate_path<R: Rng>(
    model: &Model,
    n: usize,
    eta0: &Configuration,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<Configuration>> {
    eta0.check_for(model, n)?;
    check_grid(times, f64::INFINITY)?;
    Ok(run_path(model, n, eta0, times, rng))
}

fn run_path<R: Rng>(model: &Model, n: usize, eta0: &Configuration, times: &[f64], rng: &mut R) -> Vec<Configuration> {
    let mut eta = eta0.clone();
    let mut stepper = Stepper::new(model, n, &eta);
    let mut now = 0.0;
    let mut pending = None;
    times
        .iter()
        .map(|&t| {
            stepper.advance(&mut eta, &mut now, t, &mut pending, rng);
            eta.clone()
        })
        .collect()
}

pub(crate) fn check_grid(times: &[f64], t_end: f64) -> Result<()> {
    if times.is_empty() {
        return Err(FvError::InvalidArgument("empty time grid".into()));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > t_end) {
        return Err(FvError::InvalidArgument(format!(
            "grid times must lie in [0, {t_end}]"
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(FvError::InvalidArgument("time grid not sorted".into()));
    }
    Ok(())
}

/// Configurations of every replica at every grid time, in replica order.
pub fn simulate_endpoints(
    spec: &SimulationSpec,
    eta0: &Configuration,
    times: &[f64],
) -> Result<Vec<Vec<Configuration>>> {
    eta0.check_for(&spec.model, spec.n)?;
    check_grid(times, spec.t_end)?;
    Ok((0..spec.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(spec.seed, r);
            run_path(&spec.model, spec.n, eta0, times, &mut rng)
        })
        .collect())
}

/// Replica-averaged occupation moments on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStatistics {
    pub times: Vec<f64>,
    pub replicas: usize,
    /// `[time][k]`: mean of `η_t(k)`.
    pub mean_occupation: Vec<Vec<f64>>,
    /// `[time][k]`: standard error of the mean.
    pub mean_se: Vec<Vec<f64>>,
    /// `[time][k][l]`: sample covariance of `η_t(k)` and `η_t(l)`.
    pub covariance: Vec<Vec<Vec<f64>>>,
    /// `[time][k][l]`: standard error of the sample covariance.
    pub covariance_se: Vec<Vec<Vec<f64>>>,
}

/// Means and covariances of `η_t` over `spec.replicas` independent trajectories.
pub fn ensemble_statistics(
    spec: &SimulationSpec,
    eta0: &Configuration,
    times: &[f64],
) -> Result<EnsembleStatistics> {
    if spec.replicas < 2 {
        return Err(FvError::InvalidArgument(
            "covariances need at least 2 replicas".into(),
        ));
    }
    let paths = simulate_endpoints(spec, eta0, times)?;
    let k = spec.model.k();
    let r = paths.len() as f64;
    let mut stats = EnsembleStatistics {
        times: times.to_vec(),
        replicas: paths.len(),
        mean_occupation: Vec::new(),
        mean_se: Vec::new(),
        covariance: Vec::new(),
        covariance_se: Vec::new(),
    };
    for ti in 0..times.len() {
        let sample = |rep: usize, s: usize| f64::from(paths[rep][ti].counts()[s]);
        let mean: Vec<f64> = (0..k)
            .map(|s| (0..paths.len()).map(|rep| sample(rep, s)).sum::<f64>() / r)
            .collect();
        let mut cov = vec![vec![0.0; k]; k];
        let mut cov_se = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let products: Vec<f64> = (0..paths.len())
                    .map(|rep| (sample(rep, a) - mean[a]) * (sample(rep, b) - mean[b]))
                    .collect();
                let c = products.iter().sum::<f64>() / (r - 1.0);
                let pm = products.iter().sum::<f64>() / r;
                let pv = products.iter().map(|x| (x - pm) * (x - pm)).sum::<f64>() / (r - 1.0);
                let se = (pv / r).sqrt();
                cov[a][b] = c;
                cov[b][a] = c;
                cov_se[a][b] = se;
                cov_se[b][a] = se;
            }
        }
        stats.mean_se.push((0..k).map(|s| (cov[s][s] / r).sqrt()).collect());
        stats.mean_occupation.push(mean);
        stats.covariance.push(cov);
        stats.covariance_se.push(cov_se);
    }
    Ok(stats)
}

impl EnsembleStatistics {
    /// Long-format CSV with columns `time,k,mean,var,se`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,k,mean,var,se")?;
        for (ti, t) in self.times.iter().enumerate() {
            for k in 0..self.mean_occupation[ti].len() {
                writeln!(
                    w,
                    "{t},{k},{},{},{}",
                    self.mean_occupation[ti][k], self.covariance[ti][k][k], self.mean_se[ti][k]
                )?;
            }
        }
        Ok(())
    }

    /// Long-format CSV with columns `time,k,l,cov,se` for `k < l`.
    pub fn write_covariance_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,k,l,cov,se")?;
        for (ti, t) in self.times.iter().enumerate() {
            let k = self.covariance[ti].len();
            for a in 0..k {
                for b in a + 1..k {
                    writeln!(
                        w,
                        "{t},{a},{b},{},{}",
                        self.covariance[ti][a][b], self.covariance_se[ti][a][b]
                    )?;
                }
            }
        }
        Ok(())
    }
}
