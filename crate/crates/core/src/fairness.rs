//! Merit functions, exposure-proportional policies and the per-round
//! fairness and reward regret metrics.
//!
//! A policy is fair in the exposure sense when every arm is played with
//! probability proportional to the merit `f(μ_a)` of its expected reward.

use serde::{Deserialize, Serialize};

use crate::environment::{ContextSet, Instance};
use crate::error::{Error, Result};
use crate::numkit::Vector;

/// Largest accepted exponent `c_f · μ` in [`MeritFn::merit`].
pub const MAX_EXPONENT: f64 = 700.0;

/// Exponential merit `f(μ) = exp(c_f μ)` together with its certified lower
/// bound `gamma` and Lipschitz constant on a μ-range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeritFn {
    pub steepness: f64,
    pub gamma: f64,
    pub lipschitz: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl MeritFn {
    /// Builds `exp(c_f μ)` certified on `[mu_min, mu_max]`.
    ///
    /// The closed-form constants are re-checked on a dense grid.
    pub fn exponential(steepness: f64, mu_min: f64, mu_max: f64) -> Result<Self> {
        if !(steepness > 0.0) || !steepness.is_finite() {
            return Err(Error::Config(format!(
                "merit steepness must be positive, got {steepness}"
            )));
        }
        if !(mu_min <= mu_max) {
            return Err(Error::Config(format!(
                "empty merit range [{mu_min}, {mu_max}]"
            )));
        }
        if steepness * mu_max > MAX_EXPONENT {
            return Err(Error::OutOfRange(format!(
                "c_f * mu_max = {} exceeds {MAX_EXPONENT}",
                steepness * mu_max
            )));
        }
        let (gamma, lipschitz) = audit_merit(steepness, mu_min, mu_max);
        let f = Self {
            steepness,
            gamma,
            lipschitz,
            mu_min,
            mu_max,
        };
        f.grid_audit(2001)?;
        Ok(f)
    }

    /// `exp(c_f μ)`; rejects exponents above [`MAX_EXPONENT`].
    pub fn merit(&self, mu: f64) -> Result<f64> {
        let z = self.steepness * mu;
        if z > MAX_EXPONENT {
            return Err(Error::OutOfRange(format!(
                "merit exponent {z} exceeds {MAX_EXPONENT}"
            )));
        }
        Ok(z.exp())
    }

    /// `L_f / γ`, the factor that turns confidence widths into policy error.
    pub fn sensitivity(&self) -> f64 {
        self.lipschitz / self.gamma
    }

    fn grid_audit(&self, points: usize) -> Result<()> {
        let span = self.mu_max - self.mu_min;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..points {
            let mu = if points == 1 {
                self.mu_min
            } else {
                self.mu_min + span * k as f64 / (points - 1) as f64
            };
            let v = self.merit(mu)?;
            if v < self.gamma * (1.0 - 1e-12) {
                return Err(Error::Invariant(format!(
                    "merit {v} below certified minimum {} at mu={mu}",
                    self.gamma
                )));
            }
            if let Some((pm, pv)) = prev {
                if (v - pv).abs() > self.lipschitz * (mu - pm) * (1.0 + 1e-9) {
                    return Err(Error::Invariant(format!(
                        "merit slope exceeds certified Lipschitz constant on [{pm}, {mu}]"
                    )));
                }
            }
            prev = Some((mu, v));
        }
        Ok(())
    }
}

/// `(γ, L_f)` of `exp(c_f μ)` on `[mu_min, mu_max]`.
pub fn audit_merit(steepness: f64, mu_min: f64, mu_max: f64) -> (f64, f64) {
    let gamma = (steepness * mu_min).exp();
    let lipschitz = steepness * (steepness * mu_max).exp();
    (gamma, lipschitz)
}

/// `exp(c_f μ)` without range bookkeeping.
pub fn merit(steepness: f64, mu: f64) -> Result<f64> {
    let z = steepness * mu;
    if z > MAX_EXPONENT {
        return Err(Error::OutOfRange(format!(
            "merit exponent {z} exceeds {MAX_EXPONENT}"
        )));
    }
    Ok(z.exp())
}

/// Probability vector over the arms of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-CDF sample for `u ∈ [0, 1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (a, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // u landed in the rounding gap above the last partial sum
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }

    /// `E_{a∼π}[values[a]]`.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Exponent of a merit weight: `c_f · s`, capped at [`MAX_EXPONENT`] so
/// that unnormalized contexts cannot overflow.
pub(crate) fn merit_exponent(steepness: f64, score: f64) -> f64 {
    (steepness * score).min(MAX_EXPONENT)
}

/// Softmax of the capped exponents, max-shifted. Writes into `out`.
pub(crate) fn merit_weights(steepness: f64, scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |acc, &s| {
        acc.max(merit_exponent(steepness, s))
    });
    let mut total = 0.0;
    for (w, &s) in out.iter_mut().zip(scores) {
        *w = (merit_exponent(steepness, s) - max).exp();
        total += *w;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// `π(a) = f(θ·x(a)) / Σ_a' f(θ·x(a'))`.
pub fn construct_policy(theta: &Vector, ctx: &ContextSet, f: &MeritFn) -> Policy {
    policy_from_scores(&ctx.scores(theta), f.steepness)
}

pub fn policy_from_scores(scores: &[f64], steepness: f64) -> Policy {
    let mut probs = vec![0.0; scores.len()];
    merit_weights(steepness, scores, &mut probs);
    Policy { probs }
}

/// Merit-proportional policy under the true parameter.
pub fn optimal_policy(inst: &Instance, ctx: &ContextSet, f: &MeritFn) -> Policy {
    construct_policy(&inst.theta_star(), ctx, f)
}

/// `Σ_a |π*(a) − π(a)|`.
pub fn fairness_regret_instant(pi: &Policy, pi_star: &Policy) -> Result<f64> {
    check_len(pi, pi_star.len())?;
    Ok(pi
        .probs
        .iter()
        .zip(&pi_star.probs)
        .map(|(p, q)| (q - p).abs())
        .sum())
}

/// Expected-reward gap `Σ_a (π*(a) − π(a)) θ*·x(a)`. Can be negative.
pub fn reward_regret_instant(
    pi: &Policy,
    pi_star: &Policy,
    ctx: &ContextSet,
    theta_star: &Vector,
) -> Result<f64> {
    check_len(pi, pi_star.len())?;
    check_len(pi, ctx.len())?;
    Ok(pi
        .probs
        .iter()
        .zip(&pi_star.probs)
        .zip(&ctx.arms)
        .map(|((p, q), x)| (q - p) * theta_star.dot(x))
        .sum())
}

fn check_len(pi: &Policy, expected: usize) -> Result<()> {
    if pi.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: pi.len(),
        });
    }
    Ok(())
}
