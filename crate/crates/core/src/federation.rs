//! Multi-agent round loop with periodic pooling of sufficient statistics.
//!
//! Every round each agent observes its contexts, acts and updates its local
//! increment. After all agents finished the round, the communication
//! schedule decides whether they synchronize. A synchronization replaces
//! every agent's shared statistics by the sum of all agents' cumulative
//! statistics, either exactly or through the tree privatizer.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, BetaSchedule};
use crate::environment::Instance;
use crate::error::{Error, Result};
use crate::fairness::{fairness_regret_instant, optimal_policy, reward_regret_instant, MeritFn};
use crate::numkit::{logdet, min_eig, SymMat, Vector, PSD_TOL};
use crate::optimizer::PgdConfig;
use crate::privatizer::{privatize, NoiseTree, PrivacyParams};
use crate::rng::{stream, Purpose};

/// Communication protocol. Serialized in its command-line form, e.g.
/// `"fixed:50"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncProtocol {
    /// Doubling gaps until the warm-up threshold `Q`, then every `Q` rounds.
    Proposed,
    EveryRound,
    /// Rounds `q, 2q, 3q, ...`.
    FixedInterval(u64),
    /// Sync when some agent has `(t − t_last)(ln det V_t − ln det V_last) > D`.
    DetTrigger(f64),
    /// Rounds `1, 2, 4, 8, ...` with no cap on the gap.
    Doubling,
    Never,
}

impl SyncProtocol {
    /// Whether the sync rounds are known before the run.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, SyncProtocol::DetTrigger(_))
    }
}

impl fmt::Display for SyncProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyncProtocol::Proposed => write!(f, "proposed"),
            SyncProtocol::EveryRound => write!(f, "every_round"),
            SyncProtocol::FixedInterval(q) => write!(f, "fixed:{q}"),
            SyncProtocol::DetTrigger(d) => write!(f, "det:{d}"),
            SyncProtocol::Doubling => write!(f, "doubling"),
            SyncProtocol::Never => write!(f, "never"),
        }
    }
}

impl FromStr for SyncProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown protocol `{s}`"));
        match s {
            "proposed" => Ok(SyncProtocol::Proposed),
            "every_round" => Ok(SyncProtocol::EveryRound),
            "doubling" => Ok(SyncProtocol::Doubling),
            "never" => Ok(SyncProtocol::Never),
            _ => {
                if let Some(q) = s.strip_prefix("fixed:") {
                    let q: u64 = q.parse().map_err(|_| bad())?;
                    if q == 0 {
                        return Err(bad());
                    }
                    Ok(SyncProtocol::FixedInterval(q))
                } else if let Some(d) = s.strip_prefix("det:") {
                    let d: f64 = d.parse().map_err(|_| bad())?;
                    if !(d > 0.0) {
                        return Err(bad());
                    }
                    Ok(SyncProtocol::DetTrigger(d))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl Serialize for SyncProtocol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SyncProtocol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn log_term(t_total: u64, d: usize) -> f64 {
    (1.0 + t_total as f64 / d as f64).ln().powi(2)
}

/// Warm-up threshold `Q = ⌈T / (m d² ln²(1 + T/d))⌉`, at least 1.
pub fn warmup_threshold(t_total: u64, m: usize, d: usize) -> u64 {
    let denom = m as f64 * (d * d) as f64 * log_term(t_total, d);
    ((t_total as f64 / denom).ceil() as u64).max(1)
}

/// `⌈2 m d² ln²(1 + T/d)⌉`.
pub fn sync_bound(t_total: u64, m: usize, d: usize) -> u64 {
    (2.0 * m as f64 * (d * d) as f64 * log_term(t_total, d)).ceil() as u64
}

/// Communication schedule state.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncSchedule {
    pub protocol: SyncProtocol,
    /// Next scheduled sync round.
    pub tau: u64,
    pub warmup: u64,
    pub sync_count: usize,
    pub sync_rounds: Vec<u64>,
}

impl SyncSchedule {
    pub fn new(protocol: SyncProtocol, t_total: u64, m: usize, d: usize) -> Self {
        let tau = match protocol {
            SyncProtocol::FixedInterval(q) => q,
            _ => 1,
        };
        Self {
            protocol,
            tau,
            warmup: warmup_threshold(t_total, m, d),
            sync_count: 0,
            sync_rounds: Vec::new(),
        }
    }

    /// Decides whether round `t` ends with a sync and advances `τ`.
    /// `triggered` is only consulted by [`SyncProtocol::DetTrigger`].
    pub fn advance(&mut self, t: u64, triggered: bool) -> bool {
        let sync = match self.protocol {
            SyncProtocol::Proposed => {
                let hit = t == self.tau;
                if hit {
                    if t < self.warmup {
                        self.tau *= 2;
                    } else {
                        self.tau += self.warmup;
                    }
                }
                hit
            }
            SyncProtocol::Doubling => {
                let hit = t == self.tau;
                if hit {
                    self.tau *= 2;
                }
                hit
            }
            SyncProtocol::FixedInterval(q) => {
                let hit = t == self.tau;
                if hit {
                    self.tau += q;
                }
                hit
            }
            SyncProtocol::EveryRound => true,
            SyncProtocol::DetTrigger(_) => triggered,
            SyncProtocol::Never => false,
        };
        if sync {
            self.sync_count += 1;
            self.sync_rounds.push(t);
        }
        sync
    }

    /// Largest gap between consecutive syncs so far.
    pub fn max_gap(&self) -> u64 {
        self.sync_rounds
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }

    /// Sync rounds of a deterministic protocol over `1..=T`.
    pub fn planned(protocol: SyncProtocol, t_total: u64, m: usize, d: usize) -> Option<Vec<u64>> {
        if !protocol.is_deterministic() {
            return None;
        }
        let mut s = Self::new(protocol, t_total, m, d);
        for t in 1..=t_total {
            s.advance(t, false);
        }
        Some(s.sync_rounds)
    }
}

/// Free-function form of [`SyncSchedule::advance`].
pub fn advance_schedule(sched: &mut SyncSchedule, t: u64) -> bool {
    sched.advance(t, false)
}

/// Pooled statistics after the most recent sync.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedPool {
    pub gram: SymMat,
    pub rewards: Vector,
    /// Per-agent contributions of the most recent sync.
    pub contributions: Vec<(SymMat, Vector)>,
}

impl SharedPool {
    pub fn new(d: usize, m: usize, lambda: f64) -> Self {
        Self {
            gram: SymMat::scaled_identity(d, m as f64 * lambda),
            rewards: Vector::zeros(d),
            contributions: Vec::new(),
        }
    }
}

/// One agent's privatizer state.
#[derive(Debug, Clone)]
pub struct PrivateChannel {
    pub tree: NoiseTree,
    pub params: PrivacyParams,
}

impl PrivateChannel {
    /// Tree noise comes from the agent's own stream.
    pub fn new(params: PrivacyParams, seed: u64, agent: usize) -> Self {
        let mut rng = stream(seed, Purpose::TreeNoise, 0, agent as u64);
        Self {
            tree: NoiseTree::for_stats(&params, &mut rng),
            params,
        }
    }
}

/// Pools the agents' statistics and installs the result in every agent.
///
/// Without channels each agent contributes its exact cumulative
/// `(λI + Σ xxᵀ, Σ yx)`. With channels each agent's increment since the
/// previous sync passes through its privatizer, and `λI` is added to the
/// released Gram block.
pub fn synchronize(
    agents: &mut [AgentState],
    pool: &mut SharedPool,
    channels: Option<&mut [PrivateChannel]>,
) -> Result<()> {
    let d = agents.first().map_or(0, |a| a.dim());
    let contributions: Vec<(SymMat, Vector)> = match channels {
        None => agents
            .iter()
            .map(|a| (a.own_gram.clone(), a.own_rewards.clone()))
            .collect(),
        Some(channels) => {
            if channels.len() != agents.len() {
                return Err(Error::LengthMismatch {
                    expected: agents.len(),
                    got: channels.len(),
                });
            }
            let released: Result<Vec<_>> = agents
                .iter()
                .zip(channels.iter_mut())
                .map(|(a, ch)| {
                    let (mut g, r) = privatize(
                        a.id,
                        &a.local_gram,
                        &a.local_rewards,
                        &mut ch.tree,
                        &ch.params,
                    )?;
                    g.add_diagonal(a.lambda);
                    if ch.params.noise_sigma2 > 0.0 {
                        let low = min_eig(&g);
                        if low < -PSD_TOL {
                            return Err(Error::Calibration {
                                agent: a.id,
                                min_eig: low,
                            });
                        }
                    }
                    Ok((g, r))
                })
                .collect();
            released?
        }
    };
    let mut gram = SymMat::zeros(d);
    let mut rewards = Vector::zeros(d);
    for (g, r) in &contributions {
        gram.add_assign(g);
        rewards += r;
    }
    for a in agents.iter_mut() {
        a.apply_sync(&gram, &rewards);
    }
    pool.gram = gram;
    pool.rewards = rewards;
    pool.contributions = contributions;
    Ok(())
}

/// Settings of one federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub run_id: String,
    pub protocol: SyncProtocol,
    pub lambda: f64,
    pub merit: MeritFn,
    pub beta: BetaSchedule,
    /// Multiplies `√β_t` before use. 1 keeps the schedule as is.
    pub beta_scale: f64,
    pub pgd: PgdConfig,
    pub privacy: Option<PrivacyParams>,
}

impl FederationConfig {
    /// Non-private run with the standard confidence schedule over `m` agents.
    pub fn standard(
        inst: &Instance,
        protocol: SyncProtocol,
        steepness: f64,
        alpha: f64,
        lambda: f64,
    ) -> Result<Self> {
        let cap = inst.context_norm_cap();
        let bound = inst.c * cap;
        let merit = MeritFn::exponential(steepness, -bound, bound)?;
        let pooled = if protocol == SyncProtocol::Never {
            1
        } else {
            inst.m
        };
        Ok(Self {
            run_id: protocol.to_string(),
            protocol,
            lambda,
            merit,
            beta: BetaSchedule::nonprivate(inst.sigma, alpha, lambda, inst.c, pooled, cap),
            beta_scale: 1.0,
            pgd: PgdConfig::default(),
            privacy: None,
        })
    }

    /// Private run: calibrates the privatizer for the planned schedule and
    /// switches to the private confidence schedule.
    pub fn private(
        inst: &Instance,
        protocol: SyncProtocol,
        steepness: f64,
        alpha: f64,
        lambda: f64,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self> {
        let mut cfg = Self::standard(inst, protocol, steepness, alpha, lambda)?;
        let planned = SyncSchedule::planned(protocol, inst.t, inst.m, inst.d)
            .map_or(inst.t as usize, |r| r.len());
        let params = PrivacyParams::calibrate(
            epsilon,
            delta,
            inst.m,
            inst.d,
            inst.context_norm_cap(),
            planned,
            alpha,
            lambda,
        )?;
        cfg.beta = BetaSchedule::private(
            inst.sigma,
            alpha,
            lambda,
            inst.c,
            inst.m,
            inst.context_norm_cap(),
            params.triple(),
        );
        cfg.privacy = Some(params);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.beta_scale >= 0.0) {
            return Err(Error::Config(format!(
                "beta_scale must be >= 0, got {}",
                self.beta_scale
            )));
        }
        self.beta.validate()?;
        self.pgd.validate()
    }
}

/// Per-agent, per-round record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub t: u64,
    pub i: usize,
    pub action: usize,
    pub reward: f64,
    pub fr_instant: f64,
    pub rr_instant: f64,
    /// Cumulative fairness regret after round `t`, averaged over agents.
    pub fr_cum_mean: f64,
    pub synced: bool,
    pub beta_t: f64,
    pub pgd_iters: usize,
    #[serde(skip)]
    pub diag: RoundDiagnostics,
}

/// Quantities the theoretical checks need, recorded with every round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundDiagnostics {
    /// `θ* ∈ CR_t`.
    pub covered: bool,
    /// `E_{a∼π_t} ||x(a)||_{V⁻¹}`.
    pub expected_width: f64,
    /// `||x(a_t)||_{V⁻¹}` of the played arm.
    pub chosen_width: f64,
    /// Smallest and largest of `θ_t·x(a)` and `θ*·x(a)` over the arms.
    pub mu_min: f64,
    pub mu_max: f64,
}

/// One synchronization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncEvent {
    pub t: u64,
    pub bytes_communicated: u64,
    pub sync_index: usize,
}

/// Result of stepping one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub logs: Vec<RoundLog>,
    pub sync: Option<SyncEvent>,
}

/// Everything a finished (or aborted) run produced.
#[derive(Debug, Clone)]
pub struct FederationOutput {
    pub run_id: String,
    pub seed: u64,
    pub protocol: SyncProtocol,
    pub m: usize,
    pub logs: Vec<RoundLog>,
    pub syncs: Vec<SyncEvent>,
    pub max_gap: u64,
    pub warmup: u64,
}

impl FederationOutput {
    /// Mean cumulative fairness regret over agents, one entry per round.
    pub fn fairness_curve(&self) -> Vec<f64> {
        self.logs
            .chunks(self.m)
            .map(|round| round[0].fr_cum_mean)
            .collect()
    }

    /// Mean cumulative reward regret over agents, one entry per round.
    pub fn reward_curve(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.logs
            .chunks(self.m)
            .map(|round| {
                acc += round.iter().map(|l| l.rr_instant).sum::<f64>() / self.m as f64;
                acc
            })
            .collect()
    }

    pub fn final_fairness_regret(&self) -> f64 {
        self.logs.last().map_or(0.0, |l| l.fr_cum_mean)
    }

    pub fn total_bytes(&self) -> u64 {
        self.syncs.iter().map(|s| s.bytes_communicated).sum()
    }
}

/// Stepwise simulator of one federated run.
#[derive(Debug)]
pub struct Federation<'a> {
    inst: &'a Instance,
    cfg: FederationConfig,
    agents: Vec<AgentState>,
    pool: SharedPool,
    schedule: SyncSchedule,
    channels: Option<Vec<PrivateChannel>>,
    next_round: u64,
    fr_cum: Vec<f64>,
    last_sync_logdet: Vec<f64>,
    last_sync_round: u64,
}

impl<'a> Federation<'a> {
    pub fn new(inst: &'a Instance, cfg: FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, m) = (inst.d, inst.m);
        let agents: Vec<AgentState> = (1..=m).map(|i| AgentState::new(i, d, cfg.lambda)).collect();
        let channels = cfg.privacy.map(|p| {
            (1..=m)
                .map(|i| PrivateChannel::new(p, inst.seed, i))
                .collect()
        });
        let base_logdet = d as f64 * cfg.lambda.ln();
        Ok(Self {
            inst,
            schedule: SyncSchedule::new(cfg.protocol, inst.t, m, d),
            pool: SharedPool::new(d, m, cfg.lambda),
            cfg,
            agents,
            channels,
            next_round: 1,
            fr_cum: vec![0.0; m],
            last_sync_logdet: vec![base_logdet; m],
            last_sync_round: 0,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn pool(&self) -> &SharedPool {
        &self.pool
    }

    pub fn schedule(&self) -> &SyncSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    pub fn is_done(&self) -> bool {
        self.next_round > self.inst.t
    }

    /// Runs one round for every agent, then the sync check.
    pub fn step(&mut self) -> Result<RoundOutcome> {
        if self.is_done() {
            return Err(Error::OutOfRange(format!(
                "run already finished after {} rounds",
                self.inst.t
            )));
        }
        let t = self.next_round;
        let inst = self.inst;
        let d = inst.d;
        let theta_star = inst.theta_star();
        let beta_t = self.cfg.beta.beta(t, d)? * self.cfg.beta_scale * self.cfg.beta_scale;
        let radius = beta_t.sqrt();
        let (merit, pgd) = (self.cfg.merit, self.cfg.pgd);

        let records: Result<Vec<RoundLog>> = self
            .agents
            .par_iter_mut()
            .map(|agent| {
                let i = agent.id;
                let ctx = inst.draw_contexts_unchecked(t, i);
                let mut opt_rng = stream(inst.seed, Purpose::Optimizer, t, i as u64);
                let mut act_rng = stream(inst.seed, Purpose::Action, t, i as u64);
                let out = agent.act(&ctx, beta_t, &merit, &pgd, &mut opt_rng, &mut act_rng)?;
                let x = &ctx.arms[out.action];
                let y = inst.reward(x, &mut stream(inst.seed, Purpose::Reward, t, i as u64));

                let star = optimal_policy(inst, &ctx, &merit);
                let fr = fairness_regret_instant(&out.policy, &star)?;
                let rr = reward_regret_instant(&out.policy, &star, &ctx, &theta_star)?;

                let widths: Vec<f64> = ctx.arms.iter().map(|x| out.factor.inv_norm(x)).collect();
                let covered = out.factor.norm(&(&theta_star - &out.theta_hat))
                    <= radius * (1.0 + crate::optimizer::MEMBERSHIP_SLACK);
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for x in &ctx.arms {
                    for s in [out.theta_opt.dot(x), theta_star.dot(x)] {
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                }
                let diag = RoundDiagnostics {
                    covered,
                    expected_width: out.policy.expectation(&widths),
                    chosen_width: widths[out.action],
                    mu_min: lo,
                    mu_max: hi,
                };
                agent.update(x, y);
                Ok(RoundLog {
                    t,
                    i,
                    action: out.action,
                    reward: y,
                    fr_instant: fr,
                    rr_instant: rr,
                    fr_cum_mean: 0.0,
                    synced: false,
                    beta_t,
                    pgd_iters: out.pgd_iters,
                    diag,
                })
            })
            .collect();
        let mut logs = records?;

        for (acc, log) in self.fr_cum.iter_mut().zip(&logs) {
            *acc += log.fr_instant;
        }
        let fr_mean = self.fr_cum.iter().sum::<f64>() / self.fr_cum.len() as f64;

        let triggered = match self.cfg.protocol {
            SyncProtocol::DetTrigger(threshold) => {
                let elapsed = (t - self.last_sync_round) as f64;
                let mut hit = false;
                for (a, base) in self.agents.iter().zip(&self.last_sync_logdet) {
                    if elapsed * (logdet(&a.gram)? - base) > threshold {
                        hit = true;
                        break;
                    }
                }
                hit
            }
            _ => false,
        };
        let synced = self.schedule.advance(t, triggered);
        let mut sync = None;
        if synced {
            synchronize(
                &mut self.agents,
                &mut self.pool,
                self.channels.as_deref_mut(),
            )?;
            if matches!(self.cfg.protocol, SyncProtocol::DetTrigger(_)) {
                for (a, base) in self.agents.iter().zip(self.last_sync_logdet.iter_mut()) {
                    *base = logdet(&a.gram)?;
                }
            }
            self.last_sync_round = t;
            let per_agent = (d * (d + 1) * 8) as u64;
            sync = Some(SyncEvent {
                t,
                bytes_communicated: per_agent * inst.m as u64,
                sync_index: self.schedule.sync_count,
            });
        }
        for log in &mut logs {
            log.fr_cum_mean = fr_mean;
            log.synced = synced;
        }
        self.next_round += 1;
        Ok(RoundOutcome { logs, sync })
    }

    /// Runs to completion. On failure the rounds completed so far are
    /// returned alongside the error.
    pub fn run_partial(mut self) -> (FederationOutput, Option<Error>) {
        let mut logs = Vec::with_capacity(self.inst.t as usize * self.inst.m);
        let mut syncs = Vec::new();
        let mut failure = None;
        while !self.is_done() {
            match self.step() {
                Ok(out) => {
                    logs.extend(out.logs);
                    syncs.extend(out.sync);
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let output = FederationOutput {
            run_id: self.cfg.run_id.clone(),
            seed: self.inst.seed,
            protocol: self.cfg.protocol,
            m: self.inst.m,
            logs,
            syncs,
            max_gap: self.schedule.max_gap(),
            warmup: self.schedule.warmup,
        };
        (output, failure)
    }
}

/// Runs all `T` rounds of `inst` under `cfg`.
pub fn run_federation(inst: &Instance, cfg: FederationConfig) -> Result<FederationOutput> {
    let (out, err) = Federation::new(inst, cfg)?.run_partial();
    match err {
        None => Ok(out),
        Some(e) => Err(e),
    }
}

/// Writes the per-round CSV: `run_id, seed, protocol, t, i, action, reward,
/// fr_instant, rr_instant, fr_cum_mean, synced, beta_t, pgd_iters`.
pub fn write_round_logs<W: Write>(out: &FederationOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "run_id",
        "seed",
        "protocol",
        "t",
        "i",
        "action",
        "reward",
        "fr_instant",
        "rr_instant",
        "fr_cum_mean",
        "synced",
        "beta_t",
        "pgd_iters",
    ])?;
    let protocol = out.protocol.to_string();
    let seed = out.seed.to_string();
    for l in &out.logs {
        wr.write_record([
            out.run_id.as_str(),
            seed.as_str(),
            protocol.as_str(),
            &l.t.to_string(),
            &l.i.to_string(),
            &l.action.to_string(),
            &l.reward.to_string(),
            &l.fr_instant.to_string(),
            &l.rr_instant.to_string(),
            &l.fr_cum_mean.to_string(),
            if l.synced { "1" } else { "0" },
            &l.beta_t.to_string(),
            &l.pgd_iters.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes the sync CSV: `t, bytes_communicated, sync_index`.
pub fn write_sync_events<W: Write>(events: &[SyncEvent], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "bytes_communicated", "sync_index"])?;
    for e in events {
        wr.serialize((e.t, e.bytes_communicated, e.sync_index))?;
    }
    wr.flush()?;
    Ok(())
}
