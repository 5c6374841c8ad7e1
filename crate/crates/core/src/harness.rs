//! Experiment runner and command-line front end.
//!
//! An experiment runs a set of algorithm variants on the same instances
//! (one per seed), averages the per-seed regret curves and writes one
//! directory per variant:
//!
//! ```text
//! <out>/<exp>/<variant>/curve.csv        t, fr_cum_mean, fr_env_lo, fr_env_hi, rr_cum_mean
//! <out>/<exp>/<variant>/sync.csv         seed, t, bytes_communicated, sync_index
//! <out>/<exp>/<variant>/provenance.json
//! ```

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::environment::{gen_instance_bounded, Instance, NormMode};
use crate::error::{Error, Result};
use crate::federation::{
    sync_bound, warmup_threshold, write_round_logs, Federation, FederationConfig, FederationOutput,
    SyncProtocol,
};
use crate::optimizer::PgdConfig;

/// Experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExpId {
    /// Single-agent baseline vs federated vs private.
    Exp1,
    /// Communication protocols.
    Exp2,
    /// Scaling in the number of agents.
    Exp3,
    /// Privacy budget sweep.
    Exp4,
    /// A single variant chosen by `protocol` and `privacy`.
    Custom,
}

impl fmt::Display for ExpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExpId::Exp1 => "exp1",
            ExpId::Exp2 => "exp2",
            ExpId::Exp3 => "exp3",
            ExpId::Exp4 => "exp4",
            ExpId::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Preset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Minutes on a laptop.
    #[default]
    Desk,
    /// The full-size setting: `T = 100000`, 10 agents, 5 seeds.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Privacy {
    #[default]
    None,
    #[serde(alias = "dp")]
    #[value(alias = "private")]
    Dp,
}

/// One algorithm run on every seed of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Every agent learns alone.
    B0,
    /// Federated, non-private.
    Fed,
    /// Federated through the tree privatizer.
    Priv,
    /// Log-determinant trigger; stands in for an adaptive protocol.
    B1,
    /// Pure doubling gaps.
    B2,
    /// Whatever `protocol` and `privacy` say.
    Custom,
}

impl Variant {
    pub fn base_label(&self) -> &'static str {
        match self {
            Variant::B0 => "b0",
            Variant::Fed => "fed",
            Variant::Priv => "priv",
            Variant::B1 => "b1_approx",
            Variant::B2 => "b2_approx",
            Variant::Custom => "custom",
        }
    }

    pub fn is_private(&self, privacy: Privacy) -> bool {
        match self {
            Variant::Priv => true,
            Variant::Custom => privacy == Privacy::Dp,
            _ => false,
        }
    }

    fn approximation(&self) -> Option<&'static str> {
        match self {
            Variant::B1 => Some(
                "approx: synchronizes when (t - t_last) * (logdet V_t - logdet V_last) > D for some agent",
            ),
            Variant::B2 => Some("approx: doubling gaps 1, 2, 4, ... without a fixed-interval tail"),
            _ => None,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub exp_id: ExpId,
    #[serde(rename = "T")]
    pub t: u64,
    pub m: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub c_f: f64,
    /// Bound on `||θ*||₂`.
    pub theta_bound: f64,
    pub protocol: SyncProtocol,
    pub privacy: Privacy,
    pub seeds: Vec<u64>,
    pub norm_mode: NormMode,
    pub pgd: PgdConfig,
    pub output_dir: PathBuf,
    pub variants: Vec<Variant>,
    /// Threshold `D` of the log-determinant trigger.
    pub det_threshold: f64,
    /// Also write one per-round CSV per seed.
    pub round_logs: bool,
}

impl ExperimentConfig {
    /// Defaults of an experiment family at the given scale.
    pub fn preset(exp: ExpId, scale: Scale) -> Self {
        let (t, m, seeds) = match scale {
            Scale::Desk => (20_000, 5, 3),
            Scale::Paper => (100_000, 10, 5),
        };
        let t = if exp == ExpId::Exp3 && scale == Scale::Desk {
            10_000
        } else {
            t
        };
        let variants = match exp {
            ExpId::Exp1 => vec![Variant::B0, Variant::Fed, Variant::Priv],
            ExpId::Exp2 => vec![Variant::Fed, Variant::B1, Variant::B2],
            ExpId::Exp3 => vec![Variant::Fed, Variant::Priv],
            ExpId::Exp4 => vec![Variant::B0, Variant::Priv],
            ExpId::Custom => vec![Variant::Custom],
        };
        Self {
            exp_id: exp,
            t,
            m,
            d: 5,
            k: 10,
            sigma: 0.1,
            epsilon: 2.0,
            delta: 0.1,
            alpha: 0.1,
            lambda: 1.0,
            c_f: 10.0,
            theta_bound: 1.0,
            protocol: SyncProtocol::Proposed,
            privacy: Privacy::None,
            seeds: (0..seeds).collect(),
            norm_mode: NormMode::Raw,
            pgd: PgdConfig::default(),
            output_dir: PathBuf::from("results"),
            variants,
            det_threshold: 10.0,
            round_logs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variants to run".into()));
        }
        let private = self.variants.iter().any(|v| v.is_private(self.privacy));
        if private && self.protocol == SyncProtocol::EveryRound {
            return Err(Error::Config(
                "private runs cannot use every_round: the per-sync privacy budget collapses".into(),
            ));
        }
        if private && !(self.epsilon > 0.0 && self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "invalid privacy budget (epsilon={}, delta={})",
                self.epsilon, self.delta
            )));
        }
        if !(self.c_f > 0.0) || !(self.lambda > 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "need c_f > 0, lambda > 0 and alpha in (0, 1) (c_f={}, lambda={}, alpha={})",
                self.c_f, self.lambda, self.alpha
            )));
        }
        self.pgd.validate()
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Directory name of a variant; sweeps get the swept value appended.
    pub fn variant_label(&self, v: Variant) -> String {
        let base = v.base_label();
        match self.exp_id {
            ExpId::Exp3 => format!("{base}_m{}", self.m),
            ExpId::Exp4 if v.is_private(self.privacy) => format!("{base}_eps{}", self.epsilon),
            _ => base.to_string(),
        }
    }

    pub fn instance(&self, seed: u64) -> Result<Instance> {
        gen_instance_bounded(
            self.d,
            self.k,
            self.m,
            self.t,
            self.sigma,
            seed,
            self.norm_mode,
            self.theta_bound,
        )
    }

    /// Federation settings of variant `v` on `inst`.
    pub fn federation_config(&self, inst: &Instance, v: Variant) -> Result<FederationConfig> {
        let protocol = match v {
            Variant::B0 => SyncProtocol::Never,
            Variant::B1 => SyncProtocol::DetTrigger(self.det_threshold),
            Variant::B2 => SyncProtocol::Doubling,
            Variant::Fed | Variant::Priv | Variant::Custom => self.protocol,
        };
        let mut fc = if v.is_private(self.privacy) {
            FederationConfig::private(
                inst,
                protocol,
                self.c_f,
                self.alpha,
                self.lambda,
                self.epsilon,
                self.delta,
            )?
        } else {
            FederationConfig::standard(inst, protocol, self.c_f, self.alpha, self.lambda)?
        };
        fc.run_id = self.variant_label(v);
        fc.pgd = self.pgd;
        Ok(fc)
    }
}

/// Pointwise mean and min/max envelope of equally long curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Pointwise arithmetic mean with min/max envelope.
pub fn aggregate(curves: &[Vec<f64>]) -> Result<Envelope> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Invariant("no curves to aggregate".into()))?;
    let n = first.len();
    for c in curves {
        if c.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: c.len(),
            });
        }
    }
    let count = curves.len() as f64;
    let mut env = Envelope {
        mean: vec![0.0; n],
        lo: vec![f64::INFINITY; n],
        hi: vec![f64::NEG_INFINITY; n],
    };
    for c in curves {
        for (j, &v) in c.iter().enumerate() {
            env.mean[j] += v;
            env.lo[j] = env.lo[j].min(v);
            env.hi[j] = env.hi[j].max(v);
        }
    }
    env.mean.iter_mut().for_each(|v| *v /= count);
    Ok(env)
}

/// Aggregated result of one variant.
#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub label: String,
    pub variant: Variant,
    pub fairness: Envelope,
    pub reward_mean: Vec<f64>,
    pub surviving_seeds: Vec<u64>,
    pub failed_seeds: Vec<(u64, String)>,
    /// Per surviving seed.
    pub sync_counts: Vec<usize>,
    /// Summed over surviving seeds.
    pub total_bytes: u64,
    /// Per surviving seed, full run output.
    pub runs: Vec<FederationOutput>,
}

impl VariantSummary {
    pub fn final_fairness(&self) -> f64 {
        self.fairness.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_reward(&self) -> f64 {
        self.reward_mean.last().copied().unwrap_or(0.0)
    }

    /// Final cumulative fairness regret of each surviving seed.
    pub fn final_fairness_per_seed(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.final_fairness_regret())
            .collect()
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub variants: Vec<VariantSummary>,
    pub wall_time: f64,
}

impl RunSummary {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

/// Worker count requested through `FAIRFED_THREADS`, if any.
pub fn env_threads() -> Option<usize> {
    std::env::var("FAIRFED_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
}

/// Runs every variant on every seed and writes the output files.
/// Parallelism is capped by `FAIRFED_THREADS` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_experiment_with_threads(cfg, env_threads())
}

/// [`run_experiment`] on a dedicated pool of `threads` workers, or on the
/// global pool for `None`. Results do not depend on the worker count.
pub fn run_experiment_with_threads(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<RunSummary> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let instances: Vec<Instance> = cfg
        .seeds
        .iter()
        .map(|&s| cfg.instance(s))
        .collect::<Result<_>>()?;
    let mut configs = Vec::new();
    for &v in &cfg.variants {
        let per_seed: Vec<FederationConfig> = instances
            .iter()
            .map(|inst| cfg.federation_config(inst, v))
            .collect::<Result<_>>()?;
        configs.push(per_seed);
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.variants.len())
        .flat_map(|v| (0..instances.len()).map(move |s| (v, s)))
        .collect();
    let results: Vec<(FederationOutput, Option<Error>)> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let inst = &instances[s];
            let (out, err) = match Federation::new(inst, configs[v][s].clone()) {
                Ok(fed) => fed.run_partial(),
                Err(e) => return (empty_output(&configs[v][s], inst), Some(e)),
            };
            let err = err.or_else(|| check_schedule(&out, inst).err());
            (out, err)
        })
        .collect();

    let mut variants = Vec::new();
    let mut results = results.into_iter();
    for &v in &cfg.variants {
        let label = cfg.variant_label(v);
        let mut runs = Vec::new();
        let mut failed = Vec::new();
        for inst in &instances {
            let (out, err) = results.next().expect("one result per job");
            if cfg.round_logs {
                write_rounds(cfg, &label, &out)?;
            }
            match err {
                None => runs.push(out),
                Some(e) => failed.push((inst.seed, e.to_string())),
            }
        }
        if runs.is_empty() {
            return Err(Error::Config(format!(
                "variant {label}: every seed failed ({})",
                failed
                    .iter()
                    .map(|(s, e)| format!("seed {s}: {e}"))
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        let fr: Vec<Vec<f64>> = runs.iter().map(|r| r.fairness_curve()).collect();
        let rr: Vec<Vec<f64>> = runs.iter().map(|r| r.reward_curve()).collect();
        let summary = VariantSummary {
            label,
            variant: v,
            fairness: aggregate(&fr)?,
            reward_mean: aggregate(&rr)?.mean,
            surviving_seeds: runs.iter().map(|r| r.seed).collect(),
            failed_seeds: failed,
            sync_counts: runs.iter().map(|r| r.syncs.len()).collect(),
            total_bytes: runs.iter().map(|r| r.total_bytes()).sum(),
            runs,
        };
        write_variant(cfg, &summary, &configs[variants.len()][0])?;
        variants.push(summary);
    }
    Ok(RunSummary {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        variants,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn empty_output(fc: &FederationConfig, inst: &Instance) -> FederationOutput {
    FederationOutput {
        run_id: fc.run_id.clone(),
        seed: inst.seed,
        protocol: fc.protocol,
        m: inst.m,
        logs: Vec::new(),
        syncs: Vec::new(),
        max_gap: 0,
        warmup: 0,
    }
}

/// Per-run communication bounds of the proposed schedule.
fn check_schedule(out: &FederationOutput, inst: &Instance) -> Result<()> {
    if out.protocol != SyncProtocol::Proposed {
        return Ok(());
    }
    let bound = sync_bound(inst.t, inst.m, inst.d) + 1;
    if out.syncs.len() as u64 > bound {
        return Err(Error::Invariant(format!(
            "{} syncs exceed the bound {bound}",
            out.syncs.len()
        )));
    }
    let q = warmup_threshold(inst.t, inst.m, inst.d);
    if out.max_gap > q {
        return Err(Error::Invariant(format!(
            "sync gap {} exceeds the warm-up threshold {q}",
            out.max_gap
        )));
    }
    Ok(())
}

fn variant_dir(cfg: &ExperimentConfig, label: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(cfg.exp_id.to_string()).join(label);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_rounds(cfg: &ExperimentConfig, label: &str, out: &FederationOutput) -> Result<()> {
    let dir = variant_dir(cfg, label)?;
    let w = create(&dir.join(format!("rounds_seed{}.csv", out.seed)))?;
    write_round_logs(out, w)
}

fn write_variant(cfg: &ExperimentConfig, s: &VariantSummary, fc: &FederationConfig) -> Result<()> {
    let dir = variant_dir(cfg, &s.label)?;

    let mut w = csv::Writer::from_writer(create(&dir.join("curve.csv"))?);
    w.write_record(["t", "fr_cum_mean", "fr_env_lo", "fr_env_hi", "rr_cum_mean"])?;
    for j in 0..s.fairness.mean.len() {
        w.write_record([
            (j + 1).to_string(),
            s.fairness.mean[j].to_string(),
            s.fairness.lo[j].to_string(),
            s.fairness.hi[j].to_string(),
            s.reward_mean[j].to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&dir.join("sync.csv"))?);
    w.write_record(["seed", "t", "bytes_communicated", "sync_index"])?;
    for run in &s.runs {
        for e in &run.syncs {
            w.serialize((run.seed, e.t, e.bytes_communicated, e.sync_index))?;
        }
    }
    w.flush()?;

    let failed: Vec<_> = s
        .failed_seeds
        .iter()
        .map(|(seed, e)| json!({ "seed": seed, "error": e }))
        .collect();
    let provenance = json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": cfg,
        "variant": s.label,
        "protocol": fc.protocol,
        "private": fc.privacy.is_some(),
        "privacy": fc.privacy,
        "beta": fc.beta,
        "merit": fc.merit,
        "pgd": fc.pgd,
        "lambda": fc.lambda,
        "approximation": s.variant.approximation(),
        "conventions": {
            "schedule_log": "natural",
            "confidence_log": "natural",
            "tree_depth_log": "base 2",
        },
        "warmup_threshold": warmup_threshold(cfg.t, cfg.m, cfg.d),
        "sync_bound": sync_bound(cfg.t, cfg.m, cfg.d),
        "theta_star": "uniform on [0,1]^d, shrunk onto the ball of radius theta_bound when outside it",
        "contexts": format!("uniform on [0,1]^d, norm mode {}", cfg.norm_mode.as_str()),
        "seeds": s.surviving_seeds,
        "failed_seeds": failed,
        "sync_counts": s.sync_counts,
        "total_bytes": s.total_bytes,
    });
    let mut w = create(&dir.join("provenance.json"))?;
    serde_json::to_writer_pretty(&mut w, &provenance)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes a plain-text summary table.
pub fn print_summary<W: Write>(s: &RunSummary, mut w: W) -> std::io::Result<()> {
    let c = &s.config;
    writeln!(
        w,
        "{} T={} m={} d={} K={} eps={} seeds={} hash={} ({:.1}s)",
        c.exp_id,
        c.t,
        c.m,
        c.d,
        c.k,
        c.epsilon,
        c.seeds.len(),
        &s.config_hash[..12],
        s.wall_time
    )?;
    writeln!(
        w,
        "  {:<16} {:>14} {:>14} {:>10} {:>14} {:>6}",
        "variant", "fairness", "reward", "syncs", "bytes", "failed"
    )?;
    for v in &s.variants {
        let syncs = v.sync_counts.iter().sum::<usize>() as f64 / v.sync_counts.len().max(1) as f64;
        writeln!(
            w,
            "  {:<16} {:>14.3} {:>14.3} {:>10.1} {:>14} {:>6}",
            v.label,
            v.final_fairness(),
            v.final_reward(),
            syncs,
            v.total_bytes,
            v.failed_seeds.len()
        )?;
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(
    name = "fairfed",
    version,
    about = "Federated fair linear bandit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write curves under --out.
    Run(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = ExpId::Exp1)]
    exp: ExpId,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    /// JSON file with ExperimentConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Number of agents; a comma-separated list runs one experiment each.
    #[arg(long)]
    agents: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Privacy budget; a comma-separated list runs one experiment each.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "cf")]
    c_f: Option<f64>,
    /// proposed | every_round | fixed:Q | det:D | doubling | never
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long, value_enum)]
    privacy: Option<Privacy>,
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    #[arg(long)]
    seed_list: Option<String>,
    #[arg(long, value_parser = ["raw", "cap_unit"])]
    norm: Option<String>,
    #[arg(long)]
    det_threshold: Option<f64>,
    /// Also write per-round CSVs.
    #[arg(long)]
    round_logs: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let items: std::result::Result<Vec<T>, _> = s.split(',').map(|p| p.trim().parse()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::Config(format!("invalid {what} list `{s}`"))),
    }
}

/// Overlays the JSON object `patch` onto `base`, field by field.
fn overlay(base: &ExperimentConfig, patch: serde_json::Value) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(base)?;
    let (Some(dst), serde_json::Value::Object(src)) = (value.as_object_mut(), patch) else {
        return Err(Error::Config("config file must hold a JSON object".into()));
    };
    for (k, v) in src {
        if !dst.contains_key(&k) {
            return Err(Error::Config(format!("unknown config field `{k}`")));
        }
        dst.insert(k, v);
    }
    Ok(serde_json::from_value(value)?)
}

/// Expands command-line arguments into one config per swept value.
fn plan(args: &RunArgs) -> Result<Vec<ExperimentConfig>> {
    let mut cfg = ExperimentConfig::preset(args.exp, args.scale);
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        cfg = overlay(&cfg, serde_json::from_str(&text)?)?;
        cfg.exp_id = args.exp;
    }
    if let Some(v) = args.rounds {
        cfg.t = v;
    }
    if let Some(v) = args.dim {
        cfg.d = v;
    }
    if let Some(v) = args.arms {
        cfg.k = v;
    }
    if let Some(v) = args.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = args.delta {
        cfg.delta = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.c_f {
        cfg.c_f = v;
    }
    if let Some(p) = &args.protocol {
        cfg.protocol = p.parse()?;
    }
    if let Some(p) = args.privacy {
        cfg.privacy = p;
    }
    if let Some(n) = args.seeds {
        if n == 0 {
            return Err(Error::Config("--seeds must be at least 1".into()));
        }
        cfg.seeds = (0..n).collect();
    }
    if let Some(list) = &args.seed_list {
        cfg.seeds = parse_list(list, "seed")?;
    }
    if let Some(n) = &args.norm {
        cfg.norm_mode = n.parse()?;
    }
    if let Some(v) = args.det_threshold {
        cfg.det_threshold = v;
    }
    cfg.round_logs |= args.round_logs;
    cfg.output_dir = args.out.clone();

    let agents: Vec<usize> = match &args.agents {
        Some(list) => parse_list(list, "agent")?,
        None if args.exp == ExpId::Exp3 && args.config.is_none() => match args.scale {
            Scale::Desk => vec![2, 4, 8, 16],
            Scale::Paper => vec![10, 20, 30, 40],
        },
        None => vec![cfg.m],
    };
    let epsilons: Vec<f64> = match &args.epsilon {
        Some(list) => parse_list(list, "epsilon")?,
        None if args.exp == ExpId::Exp4 && args.config.is_none() => vec![0.1, 1.0, 10.0],
        None => vec![cfg.epsilon],
    };
    let mut plans = Vec::new();
    for &m in &agents {
        for (j, &eps) in epsilons.iter().enumerate() {
            let mut c = cfg.clone();
            c.m = m;
            c.epsilon = eps;
            if j > 0 {
                // Non-private variants do not depend on the budget.
                c.variants.retain(|v| v.is_private(c.privacy));
            }
            if !c.variants.is_empty() {
                c.validate()?;
                plans.push(c);
            }
        }
    }
    Ok(plans)
}

/// Entry point of the `fairfed` binary. Returns the process exit code:
/// 0 on success, 1 on a failed run, 2 on a usage error.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let Command::Run(args) = cli.command;
    let plans = match plan(&args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let stdout = std::io::stdout();
    for cfg in &plans {
        match run_experiment(cfg) {
            Ok(summary) => {
                let _ = print_summary(&summary, stdout.lock());
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        }
    }
    0
}
