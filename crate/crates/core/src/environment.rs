//! Synthetic linear-reward environment.
//!
//! Contexts are uniform on `[0, 1]^d`, optionally squashed into the unit
//! ball, and rewards are `θ*·x + η` with Gaussian `η`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Vector;
use crate::rng::{Purpose, StreamKey};

/// How sampled contexts are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Plain uniform `[0, 1]^d`; norms reach `sqrt(d)`.
    #[default]
    Raw,
    /// Each vector is scaled into the closed unit ball.
    CapUnit,
}

impl NormMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormMode::Raw => "raw",
            NormMode::CapUnit => "cap_unit",
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(NormMode::Raw),
            "cap_unit" => Ok(NormMode::CapUnit),
            other => Err(Error::Config(format!("unknown norm mode `{other}`"))),
        }
    }
}

/// Ground truth of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub t: u64,
    pub sigma: f64,
    /// Known bound on `||θ*||₂`.
    pub c: f64,
    pub seed: u64,
    pub norm_mode: NormMode,
    pub theta_star: Vec<f64>,
}

/// Per-agent, per-round action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub agent: usize,
    pub round: u64,
    pub arms: Vec<Vector>,
}

impl ContextSet {
    pub fn new(agent: usize, round: u64, arms: Vec<Vector>) -> Self {
        Self { agent, round, arms }
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.arms.first().map_or(0, |x| x.len())
    }

    /// `θ·x(a)` for every arm.
    pub fn scores(&self, theta: &Vector) -> Vec<f64> {
        self.arms.iter().map(|x| theta.dot(x)).collect()
    }
}

/// Default bound on `||θ*||₂`.
pub const DEFAULT_THETA_BOUND: f64 = 1.0;

/// Draws an instance with `c = 1`. See [`gen_instance_bounded`].
pub fn gen_instance(
    d: usize,
    k: usize,
    m: usize,
    t: u64,
    sigma: f64,
    seed: u64,
    norm_mode: NormMode,
) -> Result<Instance> {
    gen_instance_bounded(d, k, m, t, sigma, seed, norm_mode, DEFAULT_THETA_BOUND)
}

/// `θ*` is uniform on `[0, 1]^d`, then shrunk onto the ball of radius `c`
/// if it lies outside it.
#[allow(clippy::too_many_arguments)]
pub fn gen_instance_bounded(
    d: usize,
    k: usize,
    m: usize,
    t: u64,
    sigma: f64,
    seed: u64,
    norm_mode: NormMode,
    c: f64,
) -> Result<Instance> {
    if d == 0 || m == 0 || t == 0 {
        return Err(Error::Config(format!(
            "instance sizes must be positive (d={d}, m={m}, T={t})"
        )));
    }
    if k < 2 {
        return Err(Error::Config(format!("need at least two arms, got K={k}")));
    }
    if !(sigma >= 0.0) || !(c > 0.0) {
        return Err(Error::Config(format!(
            "sigma must be >= 0 and c > 0 (sigma={sigma}, c={c})"
        )));
    }
    let mut rng = StreamKey::new(seed, Purpose::Theta, 0, 0).rng();
    let mut theta: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > c {
        let s = c / norm;
        theta.iter_mut().for_each(|x| *x *= s);
    }
    Ok(Instance {
        d,
        k,
        m,
        t,
        sigma,
        c,
        seed,
        norm_mode,
        theta_star: theta,
    })
}

impl Instance {
    pub fn theta_star(&self) -> Vector {
        Vector::from_column_slice(&self.theta_star)
    }

    /// Upper bound on `||x||₂` for contexts drawn from this instance.
    pub fn context_norm_cap(&self) -> f64 {
        match self.norm_mode {
            NormMode::Raw => (self.d as f64).sqrt(),
            NormMode::CapUnit => 1.0,
        }
    }

    /// Contexts for agent `i` at round `t` (both 1-based).
    pub fn draw_contexts(&self, t: u64, i: usize) -> Result<ContextSet> {
        if t == 0 || t > self.t || i == 0 || i > self.m {
            return Err(Error::OutOfRange(format!(
                "(t={t}, i={i}) outside 1..={} x 1..={}",
                self.t, self.m
            )));
        }
        Ok(self.draw_contexts_unchecked(t, i))
    }

    pub(crate) fn draw_contexts_unchecked(&self, t: u64, i: usize) -> ContextSet {
        let key = StreamKey::new(self.seed, Purpose::Context, t, i as u64);
        let arms = (0..self.k)
            .map(|a| {
                let mut rng = key.with_arm(a as u32).rng();
                let mut x = Vector::from_fn(self.d, |_, _| rng.random::<f64>());
                if self.norm_mode == NormMode::CapUnit {
                    let scale = (x.norm() * (1.0 + 1e-12)).max(1.0);
                    x /= scale;
                }
                x
            })
            .collect();
        ContextSet::new(i, t, arms)
    }

    /// Noiseless expected reward `θ*·x`.
    pub fn mean_reward(&self, x: &Vector) -> f64 {
        self.theta_star
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `θ*·x + η` with `η ~ N(0, σ²)` drawn from `rng`.
    pub fn reward<R: Rng + ?Sized>(&self, x: &Vector, rng: &mut R) -> f64 {
        let mean = self.mean_reward(x);
        if self.sigma == 0.0 {
            return mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        mean + self.sigma * z
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Free-function form of [`Instance::draw_contexts`].
pub fn draw_contexts(inst: &Instance, t: u64, i: usize) -> Result<ContextSet> {
    inst.draw_contexts(t, i)
}

/// Free-function form of [`Instance::reward`].
pub fn reward<R: Rng + ?Sized>(inst: &Instance, x: &Vector, rng: &mut R) -> f64 {
    inst.reward(x, rng)
}
