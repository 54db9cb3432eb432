//! Flags plus an optional JSON file, merged into one run configuration.
//! Flags win over the file.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fv_lab::complete_graph::cg_model;
use fv_lab::model::{Configuration, Model};
use fv_lab::two_point::tp_model;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Couple,
    Qsd,
    Spectrum,
    Invariant,
    Bounds,
    Verify,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON file with any of the fields below; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file: {"K": .., "Q": [[..]], "p0": [..]}
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Complete-graph builder, e.g. K=3,p=1
    #[arg(long, value_name = "K=..,p=..")]
    pub complete_graph: Option<String>,
    /// Two-point builder a,b,p1,p2
    #[arg(long, value_name = "a,b,p1,p2")]
    pub two_point: Option<String>,
    /// Number of particles
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Comma-separated, sorted output times
    #[arg(long)]
    pub times: Option<String>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Starting occupation counts, e.g. 3,0,0
    #[arg(long)]
    pub eta: Option<String>,
    /// Second starting configuration for `couple`
    #[arg(long)]
    pub eta_prime: Option<String>,
    /// Constant C in the chaos and time-uniform bounds
    #[arg(long)]
    pub chaos_constant: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ModelField {
    Inline(Model),
    Path(PathBuf),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Numbers {
    Text(String),
    List(Vec<f64>),
}

impl Numbers {
    fn text(self) -> String {
        match self {
            Numbers::Text(s) => s,
            Numbers::List(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelField>,
    complete_graph: Option<String>,
    two_point: Option<Numbers>,
    #[serde(rename = "N")]
    n: Option<usize>,
    t_end: Option<f64>,
    times: Option<Numbers>,
    replicas: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    eta: Option<Numbers>,
    eta_prime: Option<Numbers>,
    chaos_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    File(Model),
    CompleteGraph { k: usize, p: f64 },
    TwoPoint { a: f64, b: f64, p1: f64, p2: f64 },
}

impl ModelSource {
    pub fn model(&self) -> Result<Model> {
        Ok(match *self {
            ModelSource::File(ref m) => m.clone(),
            ModelSource::CompleteGraph { k, p } => cg_model(k, p)?,
            ModelSource::TwoPoint { a, b, p1, p2 } => tp_model(a, b, p1, p2)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub source: ModelSource,
    pub model: Model,
    pub n: Option<usize>,
    pub t_end: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub replicas: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub eta: Option<Configuration>,
    pub eta_prime: Option<Configuration>,
    pub chaos_constant: f64,
}

impl RunConfig {
    pub fn resolve(command: Command, args: RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<FileConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let source = resolve_source(&args, file.model, file.complete_graph, file.two_point.map(Numbers::text))?;
        let model = source.model()?;
        let parse_eta = |s: Option<String>| -> Result<Option<Configuration>> {
            s.map(|s| {
                let counts = parse_list::<u32>(&s).context("parsing a configuration")?;
                if counts.len() != model.k() {
                    bail!("configuration {s} has {} sites, model has {}", counts.len(), model.k());
                }
                Ok(Configuration::new(counts)?)
            })
            .transpose()
        };
        let times = args
            .times
            .or(file.times.map(Numbers::text))
            .map(|s| parse_list::<f64>(&s).context("parsing --times"))
            .transpose()?;
        Ok(RunConfig {
            command,
            eta: parse_eta(args.eta.or(file.eta.map(Numbers::text)))?,
            eta_prime: parse_eta(args.eta_prime.or(file.eta_prime.map(Numbers::text)))?,
            source,
            model,
            n: args.n.or(file.n),
            t_end: args.t_end.or(file.t_end),
            times,
            replicas: args.replicas.or(file.replicas),
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args.out.or(file.out),
            chaos_constant: args.chaos_constant.or(file.chaos_constant).unwrap_or(1.0),
        })
    }

    pub fn require_n(&self) -> Result<usize> {
        match self.n {
            Some(n) if n >= 2 => Ok(n),
            Some(n) => bail!("--N {n}: need at least 2 particles"),
            None => bail!("{:?} needs --N", self.command),
        }
    }

    /// Output grid and horizon: `--times` if given, else `[t_end]`.
    pub fn grid(&self) -> Result<(Vec<f64>, f64)> {
        let t_end = self
            .t_end
            .or_else(|| self.times.as_ref().and_then(|t| t.last().copied()))
            .unwrap_or(1.0);
        let times = self.times.clone().unwrap_or_else(|| vec![t_end]);
        if times.iter().any(|t| *t > t_end) {
            bail!("grid times exceed --t-end {t_end}");
        }
        Ok((times, t_end))
    }
}

fn resolve_source(
    args: &RunArgs,
    file_model: Option<ModelField>,
    file_cg: Option<String>,
    file_tp: Option<String>,
) -> Result<ModelSource> {
    let given = [args.model.is_some(), args.complete_graph.is_some(), args.two_point.is_some()]
        .iter()
        .filter(|x| **x)
        .count();
    if given > 1 {
        bail!("give only one of --model, --complete-graph, --two-point");
    }
    if let Some(path) = &args.model {
        return read_model(path);
    }
    if let Some(spec) = &args.complete_graph {
        return parse_complete_graph(spec);
    }
    if let Some(spec) = &args.two_point {
        return parse_two_point(spec);
    }
    let given = [file_model.is_some(), file_cg.is_some(), file_tp.is_some()].iter().filter(|x| **x).count();
    if given > 1 {
        bail!("config file names more than one model source");
    }
    match (file_model, file_cg, file_tp) {
        (Some(ModelField::Inline(m)), _, _) => Ok(ModelSource::File(m)),
        (Some(ModelField::Path(p)), _, _) => read_model(&p),
        (_, Some(s), _) => parse_complete_graph(&s),
        (_, _, Some(s)) => parse_two_point(&s),
        _ => bail!("no model: use --model, --complete-graph or --two-point"),
    }
}

fn read_model(path: &PathBuf) -> Result<ModelSource> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model: Model = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
    Ok(ModelSource::File(model))
}

pub fn parse_complete_graph(spec: &str) -> Result<ModelSource> {
    let (mut k, mut p) = (None, None);
    for part in spec.split(',') {
        let (key, value) = part.split_once('=').with_context(|| format!("expected key=value, got {part:?}"))?;
        match key.trim() {
            "K" | "k" => k = Some(value.trim().parse::<usize>().context("parsing K")?),
            "p" => p = Some(value.trim().parse::<f64>().context("parsing p")?),
            other => bail!("unknown complete-graph parameter {other:?}"),
        }
    }
    match (k, p) {
        (Some(k), Some(p)) => Ok(ModelSource::CompleteGraph { k, p }),
        _ => bail!("--complete-graph needs K=.. and p=.."),
    }
}

pub fn parse_two_point(spec: &str) -> Result<ModelSource> {
    match parse_list::<f64>(spec)?.as_slice() {
        &[a, b, p1, p2] => Ok(ModelSource::TwoPoint { a, b, p1, p2 }),
        v => bail!("--two-point needs 4 numbers, got {}", v.len()),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|x| x.trim().parse::<T>().with_context(|| format!("bad number {x:?}")))
        .collect()
}
