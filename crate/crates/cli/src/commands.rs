use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fv_lab::bounds::{bound_constants, chaos_bound, covariance_bound, uniform_bound};
use fv_lab::complete_graph::{cg_invariant, cg_marginal_eigenvalues, cg_spectrum, cg_stationary_moments, CompleteGraphParams};
use fv_lab::coupling::{wasserstein_decay, CoupledPair};
use fv_lab::model::Configuration;
use fv_lab::oracle::{generator_matrix, spectrum, stationary_exact, DENSE_LIMIT};
use fv_lab::semigroup::{qsd, two_point_spectral};
use fv_lab::simulator::{ensemble_statistics, simulate_path, replica_rng, SimulationSpec};
use fv_lab::two_point::{bd_gap_exact, bd_marginal, gap_report};
use serde_json::{json, Value};

use crate::config::{ModelSource, RunConfig};

/// Default replica count for Monte Carlo commands.
const DEFAULT_REPLICAS: usize = 1000;

pub fn output(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_json(cfg: &RunConfig, value: &Value) -> Result<()> {
    let mut w = output(cfg)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn companion(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.cov.csv"))
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n()?;
    let (times, t_end) = cfg.grid()?;
    let eta0 = cfg.eta.clone().unwrap_or_else(|| Configuration::uniform(cfg.model.k(), n as u32));
    let replicas = cfg.replicas.unwrap_or(DEFAULT_REPLICAS);
    let mut w = output(cfg)?;
    if replicas < 2 {
        // a single path: occupation counts only
        let path = simulate_path(&cfg.model, n, &eta0, &times, &mut replica_rng(cfg.seed, 0))?;
        writeln!(w, "time,k,count")?;
        for (t, eta) in times.iter().zip(&path) {
            for (k, c) in eta.counts().iter().enumerate() {
                writeln!(w, "{t},{k},{c}")?;
            }
        }
    } else {
        let spec = SimulationSpec::new(cfg.model.clone(), n, t_end, cfg.seed, replicas)?;
        let stats = ensemble_statistics(&spec, &eta0, &times)?;
        stats.write_csv(&mut w)?;
        if let Some(path) = &cfg.out {
            let cov = companion(path);
            let mut f = BufWriter::new(File::create(&cov).with_context(|| format!("creating {}", cov.display()))?);
            stats.write_covariance_csv(&mut f)?;
            f.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn couple(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n()?;
    let (times, _) = cfg.grid()?;
    let k = cfg.model.k();
    let eta = cfg.eta.clone().unwrap_or_else(|| Configuration::concentrated(k, n as u32, 0));
    let eta_prime = cfg.eta_prime.clone().unwrap_or_else(|| Configuration::concentrated(k, n as u32, k - 1));
    let pair = CoupledPair::new(eta, eta_prime)?;
    let curve = wasserstein_decay(&cfg.model, n, &pair, &times, cfg.replicas.unwrap_or(DEFAULT_REPLICAS), cfg.seed)?;
    let mut w = output(cfg)?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn qsd_cmd(cfg: &RunConfig) -> Result<()> {
    let r = qsd(&cfg.model)?;
    let mut out = json!({ "nu": &*r.nu, "theta": r.theta });
    if let ModelSource::TwoPoint { a, b, p1, p2 } = cfg.source {
        out["two_point"] = serde_json::to_value(two_point_spectral(a, b, p1, p2)?)?;
    }
    write_json(cfg, &out)
}

pub fn spectrum_cmd(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n()?;
    let (_, gen) = generator_matrix(&cfg.model, n)?;
    let ev: Vec<f64> = spectrum(&gen)?.into_iter().rev().map(|x| -x).collect();
    let gap = ev.iter().copied().filter(|x| *x > 1e-8).fold(f64::INFINITY, f64::min);
    let mut out = json!({ "eigenvalues": ev, "gap": gap });
    match cfg.source {
        ModelSource::CompleteGraph { k, p } => {
            let params = CompleteGraphParams::new(k, n, p)?;
            let cand = cg_spectrum(&params)?;
            let miss = ev.iter().map(|&x| cand.distance(x)).fold(0.0, f64::max);
            out["marginal_eigenvalues"] = json!(cg_marginal_eigenvalues(&params));
            out["max_distance_to_candidates"] = json!(miss);
        }
        ModelSource::TwoPoint { a, b, p1, p2 } => {
            out["marginal_gap"] = json!(bd_gap_exact(&bd_marginal(a, b, p1, p2, n)?)?);
            out["hardy"] = serde_json::to_value(gap_report(a, b, p1, p2, n)?)?;
        }
        ModelSource::File(_) => {}
    }
    write_json(cfg, &out)
}

pub fn invariant(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n()?;
    let mut out = match cfg.source {
        ModelSource::CompleteGraph { k, p } => {
            let params = CompleteGraphParams::new(k, n, p)?;
            let inv = cg_invariant(&params)?;
            let configs: Vec<&[u32]> = inv.space.configs().iter().map(Configuration::counts).collect();
            let mut out = json!({
                "configurations": configs,
                "law": &*inv.law,
                "log_normalizer": inv.log_normalizer,
                "stationary_moments": cg_stationary_moments(&params),
            });
            if inv.space.len() <= DENSE_LIMIT {
                let (_, gen) = generator_matrix(&cfg.model, n)?;
                let exact = stationary_exact(&gen)?;
                let gap = inv.law.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                out["oracle_gap"] = json!(gap);
            }
            out
        }
        _ => {
            let (space, gen) = generator_matrix(&cfg.model, n)?;
            let law = stationary_exact(&gen)?;
            let configs: Vec<&[u32]> = space.configs().iter().map(Configuration::counts).collect();
            json!({ "configurations": configs, "law": &*law })
        }
    };
    if let ModelSource::TwoPoint { a, b, p1, p2 } = cfg.source {
        out["marginal"] = json!(&*bd_marginal(a, b, p1, p2, n)?.invariant());
    }
    write_json(cfg, &out)
}

pub fn bounds(cfg: &RunConfig) -> Result<()> {
    let n = cfg.require_n()?;
    let (times, _) = cfg.grid()?;
    let c = cfg.chaos_constant;
    let mut rows = Vec::new();
    for &t in &times {
        let cov = covariance_bound(&cfg.model, n, t)?;
        rows.push(json!({
            "time": t,
            "pair_bound": cov.pair_bound,
            "lipschitz_bound": cov.lipschitz_bound,
            "chaos_bound": chaos_bound(&cfg.model, n, t, c, 0.0)?,
        }));
    }
    let uniform = match uniform_bound(&cfg.model, n, c) {
        Ok(v) => json!(v),
        Err(e) => json!({ "not_applicable": e.to_string() }),
    };
    let out = json!({
        "constants": bound_constants(&cfg.model),
        "ergodic_coefficients": cfg.model.ergodic_coefficients(),
        "chaos_constant": c,
        "stationary_pair_bound": covariance_bound(&cfg.model, n, f64::INFINITY)?.pair_bound,
        "times": rows,
        "uniform_bound": uniform,
    });
    write_json(cfg, &out)
}
