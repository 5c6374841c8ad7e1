//! Single-agent FairX-LinUCB: sufficient statistics, confidence radius and
//! the act/update cycle.
//!
//! The agent's design matrix is `V = U + S`, where `U` holds whatever was
//! shared at the last synchronization and `S` the agent's own outer products
//! since then. Without communication this is plain ridge-regression LinUCB
//! with a fairness-of-exposure policy on top.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::ContextSet;
use crate::error::{Error, Result};
use crate::fairness::{construct_policy, MeritFn, Policy};
use crate::numkit::{SpdFactor, SymMat, Vector};
use crate::optimizer::{optimistic_theta, Ellipsoid, PgdConfig};

/// Spectral accuracy bounds of the injected privacy noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTriple {
    pub rho_bar: f64,
    pub rho_underbar: f64,
    pub z: f64,
}

/// Confidence-radius schedule `t ↦ β_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    /// Reward noise scale.
    pub sigma: f64,
    /// Failure probability.
    pub alpha: f64,
    pub lambda: f64,
    /// Bound on `||θ*||₂`.
    pub c: f64,
    /// Number of agents pooling data.
    pub m: usize,
    /// Bound on context norms.
    pub l_x: f64,
    /// Present for the private schedule.
    pub private: Option<AccuracyTriple>,
}

impl BetaSchedule {
    pub fn nonprivate(sigma: f64, alpha: f64, lambda: f64, c: f64, m: usize, l_x: f64) -> Self {
        Self {
            sigma,
            alpha,
            lambda,
            c,
            m,
            l_x,
            private: None,
        }
    }

    pub fn private(
        sigma: f64,
        alpha: f64,
        lambda: f64,
        c: f64,
        m: usize,
        l_x: f64,
        triple: AccuracyTriple,
    ) -> Self {
        Self {
            private: Some(triple),
            ..Self::nonprivate(sigma, alpha, lambda, c, m, l_x)
        }
    }

    pub fn is_private(&self) -> bool {
        self.private.is_some()
    }

    /// `β_t` of whichever mode this schedule is in.
    pub fn beta(&self, t: u64, d: usize) -> Result<f64> {
        if self.is_private() {
            beta_private(self, t, d)
        } else {
            Ok(beta_nonprivate(self, t, d))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma >= 0.0
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.lambda > 0.0
            && self.c >= 0.0
            && self.m >= 1
            && self.l_x > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid beta schedule {self:?}")));
        }
        if let Some(p) = self.private {
            if !(p.rho_underbar > 0.0 && p.rho_bar >= p.rho_underbar && p.z >= 0.0) {
                return Err(Error::Config(format!("invalid accuracy triple {p:?}")));
            }
        }
        Ok(())
    }
}

/// `β_t` with `√β_t = σ √(d ln((1 + m t L_x²/λ)/α)) + √λ c`.
pub fn beta_nonprivate(s: &BetaSchedule, t: u64, d: usize) -> f64 {
    let t = t.max(1) as f64;
    let growth = (1.0 + s.m as f64 * t * s.l_x * s.l_x / s.lambda) / s.alpha;
    let root = s.sigma * (d as f64 * growth.ln()).max(0.0).sqrt() + s.lambda.sqrt() * s.c;
    root * root
}

/// `β_t` with
/// `√β_t = σ √(2 ln(2/α) + d ln(ρ̄/ρ_ + t/(d ρ_))) + m c √ρ̄ + m z`.
pub fn beta_private(s: &BetaSchedule, t: u64, d: usize) -> Result<f64> {
    let p = s.private.ok_or_else(|| {
        Error::Config("private confidence radius needs an accuracy triple".into())
    })?;
    let t = t.max(1) as f64;
    let d_f = d as f64;
    let m = s.m as f64;
    let inner = 2.0 * (2.0 / s.alpha).ln()
        + d_f * (p.rho_bar / p.rho_underbar + t / (d_f * p.rho_underbar)).ln();
    let root = s.sigma * inner.max(0.0).sqrt() + m * s.c * p.rho_bar.sqrt() + m * p.z;
    Ok(root * root)
}

/// What [`AgentState::act`] decided.
#[derive(Debug, Clone)]
pub struct ActOutcome {
    pub action: usize,
    pub policy: Policy,
    pub theta_hat: Vector,
    pub theta_opt: Vector,
    pub pgd_iters: usize,
    /// Cholesky factor of the `V` the decision was made with.
    pub factor: SpdFactor,
}

/// Sufficient statistics of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub lambda: f64,
    /// Shared Gram matrix `U` from the last synchronization.
    pub shared_gram: SymMat,
    /// Shared reward vector `u`.
    pub shared_rewards: Vector,
    /// Own Gram increment `S` since the last synchronization.
    pub local_gram: SymMat,
    /// Own reward increment `s` since the last synchronization.
    pub local_rewards: Vector,
    /// Rounds since the last synchronization.
    pub delta: u64,
    /// `V = U + S`, maintained incrementally.
    pub gram: SymMat,
    /// `b = u + s`, maintained incrementally.
    pub rewards: Vector,
    /// `λI + Σ xxᵀ` over every observation this agent ever made.
    pub own_gram: SymMat,
    /// `Σ y x` over every observation this agent ever made.
    pub own_rewards: Vector,
    /// Previous optimistic parameter, used as a warm start.
    pub last_theta_opt: Option<Vector>,
}

impl AgentState {
    /// `U = V = λI`, everything else zero.
    pub fn new(id: usize, d: usize, lambda: f64) -> Self {
        let reg = SymMat::scaled_identity(d, lambda);
        Self {
            id,
            lambda,
            shared_gram: reg.clone(),
            shared_rewards: Vector::zeros(d),
            local_gram: SymMat::zeros(d),
            local_rewards: Vector::zeros(d),
            delta: 0,
            gram: reg.clone(),
            rewards: Vector::zeros(d),
            own_gram: reg,
            own_rewards: Vector::zeros(d),
            last_theta_opt: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.rewards.len()
    }

    /// Ridge estimate `θ̂ = V⁻¹ b`.
    pub fn estimate(&self) -> Result<Vector> {
        Ok(SpdFactor::new(&self.gram)?.solve(&self.rewards))
    }

    /// Picks the optimistic parameter, builds the fair policy and samples
    /// an arm. `opt_rng` feeds the optimizer restarts, `action_rng` the
    /// inverse-CDF draw.
    #[allow(clippy::too_many_arguments)]
    pub fn act<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        ctx: &ContextSet,
        beta_t: f64,
        f: &MeritFn,
        cfg: &PgdConfig,
        opt_rng: &mut R1,
        action_rng: &mut R2,
    ) -> Result<ActOutcome> {
        let factor = SpdFactor::new(&self.gram)?;
        let theta_hat = factor.solve(&self.rewards);
        let ellipsoid = Ellipsoid::with_factor(
            theta_hat.clone(),
            self.gram.clone(),
            beta_t.max(0.0).sqrt(),
            factor,
        );
        let out = optimistic_theta(
            &ellipsoid,
            ctx,
            f,
            cfg,
            opt_rng,
            self.last_theta_opt.as_ref(),
        );
        let policy = construct_policy(&out.theta, ctx, f);
        let action = policy.sample_index(action_rng.random::<f64>());
        self.last_theta_opt = Some(out.theta.clone());
        let factor = ellipsoid.factor().clone();
        Ok(ActOutcome {
            action,
            policy,
            theta_hat,
            theta_opt: out.theta,
            pgd_iters: out.iters,
            factor,
        })
    }

    /// Records reward `y` for the played context `x`.
    pub fn update(&mut self, x: &Vector, y: f64) {
        self.local_gram.add_outer(x);
        self.gram.add_outer(x);
        self.own_gram.add_outer(x);
        self.local_rewards.axpy(y, x, 1.0);
        self.rewards.axpy(y, x, 1.0);
        self.own_rewards.axpy(y, x, 1.0);
        self.delta += 1;
    }

    /// Installs freshly pooled statistics and clears the local increments.
    pub fn apply_sync(&mut self, shared_gram: &SymMat, shared_rewards: &Vector) {
        let d = self.dim();
        self.shared_gram = shared_gram.clone();
        self.shared_rewards = shared_rewards.clone();
        self.local_gram = SymMat::zeros(d);
        self.local_rewards = Vector::zeros(d);
        self.delta = 0;
        self.gram = shared_gram.clone();
        self.rewards = shared_rewards.clone();
    }
}
