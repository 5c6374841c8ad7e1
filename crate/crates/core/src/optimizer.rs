//! Optimistic parameter selection.
//!
//! Maximizes the expected fair reward
//! `J(θ) = Σ_a w_a(θ) θ·x(a)`, `w(θ) = softmax(c_f θ·x)`,
//! over the confidence ellipsoid `{θ : ||θ − θ̂||_V ≤ r}` by projected
//! gradient ascent. Steps are preconditioned by `V⁻¹` and projected radially
//! in the `V`-metric, so every iterate is feasible by construction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environment::ContextSet;
use crate::error::{Error, Result};
use crate::fairness::{merit_weights, MeritFn, MAX_EXPONENT};
use crate::numkit::{SpdFactor, SymMat, Vector};

/// Cap on the growing step length, in radii.
const MAX_STEP_SCALE: f64 = 1e6;

/// Relative slack of the membership test.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;

/// Confidence region `{θ : ||θ − center||_metric ≤ radius}`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    center: Vector,
    metric: SymMat,
    radius: f64,
    factor: SpdFactor,
}

impl Ellipsoid {
    pub fn new(center: Vector, metric: SymMat, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!(
                "ellipsoid radius must be finite and >= 0, got {radius}"
            )));
        }
        if center.len() != metric.dim() {
            return Err(Error::LengthMismatch {
                expected: metric.dim(),
                got: center.len(),
            });
        }
        let factor = SpdFactor::new(&metric)?;
        Ok(Self::with_factor(center, metric, radius, factor))
    }

    /// Reuses an existing factorization of `metric`.
    pub fn with_factor(center: Vector, metric: SymMat, radius: f64, factor: SpdFactor) -> Self {
        Self {
            center,
            metric,
            radius,
            factor,
        }
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn metric(&self) -> &SymMat {
        &self.metric
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// `||θ − center||_V`.
    pub fn distance(&self, theta: &Vector) -> f64 {
        self.factor.norm(&(theta - &self.center))
    }

    pub fn contains(&self, theta: &Vector) -> bool {
        self.distance(theta) <= self.radius * (1.0 + MEMBERSHIP_SLACK)
    }

    /// Uniform point on the boundary in the `V`-metric sense.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let d = self.center.len();
        loop {
            let z = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = z.norm();
            if n > 1e-12 {
                let dir = self.factor.upper_solve_transposed(&(z / n));
                return &self.center + dir * self.radius;
            }
        }
    }
}

/// Projected gradient ascent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub max_iters: usize,
    /// First trial step as a fraction of the radius (in `V`-norm).
    pub step0: f64,
    pub backtrack: f64,
    /// Number of starts: the center plus `restarts − 1` boundary samples.
    pub restarts: usize,
    pub grad_tol: f64,
    /// Adds the previous round's optimistic parameter as an extra start.
    pub warm_start: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step0: 0.5,
            backtrack: 0.5,
            restarts: 3,
            grad_tol: 1e-7,
            warm_start: true,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.step0 > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.restarts > 0
            && self.grad_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid PGD config {self:?}")))
        }
    }
}

/// Result of [`optimistic_theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub theta: Vector,
    pub value: f64,
    /// Accepted ascent steps summed over all starts.
    pub iters: usize,
}

/// Flat copy of a context set with scratch space for repeated evaluation.
struct Evaluator {
    d: usize,
    steepness: f64,
    features: Vec<f64>,
    scores: Vec<f64>,
    weights: Vec<f64>,
}

impl Evaluator {
    fn new(ctx: &ContextSet, f: &MeritFn) -> Self {
        let d = ctx.dim();
        let mut features = Vec::with_capacity(d * ctx.len());
        for x in &ctx.arms {
            features.extend(x.iter());
        }
        Self {
            d,
            steepness: f.steepness,
            features,
            scores: vec![0.0; ctx.len()],
            weights: vec![0.0; ctx.len()],
        }
    }

    fn fill(&mut self, theta: &Vector) {
        let th = theta.as_slice();
        for (s, x) in self
            .scores
            .iter_mut()
            .zip(self.features.chunks_exact(self.d))
        {
            *s = x.iter().zip(th).map(|(a, b)| a * b).sum();
        }
        merit_weights(self.steepness, &self.scores, &mut self.weights);
    }

    fn value(&mut self, theta: &Vector) -> f64 {
        self.fill(theta);
        self.weights
            .iter()
            .zip(&self.scores)
            .map(|(w, s)| w * s)
            .sum()
    }

    /// Value and gradient `Σ_a w_a x_a (1 + c_f (s_a − J))`, with `c_f`
    /// replaced by 0 for arms whose exponent is capped.
    fn value_and_gradient(&mut self, theta: &Vector) -> (f64, Vector) {
        let j = self.value(theta);
        let mut g = Vector::zeros(self.d);
        for ((w, s), x) in self
            .weights
            .iter()
            .zip(&self.scores)
            .zip(self.features.chunks_exact(self.d))
        {
            // capped exponents do not move with θ
            let slope = if self.steepness * s < MAX_EXPONENT {
                self.steepness
            } else {
                0.0
            };
            let coef = w * (1.0 + slope * (s - j));
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += coef * xi;
            }
        }
        (j, g)
    }
}

/// `Σ_a w_a(θ) θ·x(a)`.
pub fn objective(theta: &Vector, ctx: &ContextSet, f: &MeritFn) -> f64 {
    Evaluator::new(ctx, f).value(theta)
}

/// Analytic gradient `E_w[x] + c_f (E_w[s x] − E_w[s] E_w[x])`.
pub fn gradient(theta: &Vector, ctx: &ContextSet, f: &MeritFn) -> Vector {
    Evaluator::new(ctx, f).value_and_gradient(theta).1
}

/// Radial projection onto the ellipsoid in its own metric.
pub fn project(theta: &Vector, e: &Ellipsoid) -> Vector {
    if e.radius == 0.0 {
        return e.center.clone();
    }
    let delta = theta - &e.center;
    let dist = e.factor.norm(&delta);
    if dist <= e.radius * (1.0 + 1e-12) {
        return theta.clone();
    }
    &e.center + delta * (e.radius / dist)
}

/// Optimistic parameter: approximate `argmax_{θ ∈ E} J(θ)`.
///
/// Never returns a point worse than the center, and only consumes `rng` for
/// boundary starts.
pub fn optimistic_theta<R: Rng + ?Sized>(
    e: &Ellipsoid,
    ctx: &ContextSet,
    f: &MeritFn,
    cfg: &PgdConfig,
    rng: &mut R,
    warm: Option<&Vector>,
) -> PgdOutcome {
    let mut eval = Evaluator::new(ctx, f);
    if e.radius == 0.0 {
        let value = eval.value(&e.center);
        return PgdOutcome {
            theta: e.center.clone(),
            value,
            iters: 0,
        };
    }

    let mut starts = Vec::with_capacity(cfg.restarts + 1);
    starts.push(e.center.clone());
    if cfg.warm_start {
        if let Some(w) = warm {
            if w.len() == e.center.len() {
                starts.push(project(w, e));
            }
        }
    }
    for _ in 1..cfg.restarts {
        starts.push(e.sample_boundary(rng));
    }

    let mut best: Option<(Vector, f64)> = None;
    let mut iters = 0;
    for start in starts {
        let (theta, value, n) = ascend(e, &mut eval, start, cfg);
        iters += n;
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            best = Some((theta, value));
        }
    }
    let (theta, value) = best.expect("at least the center start");
    PgdOutcome {
        theta,
        value,
        iters,
    }
}

fn ascend(
    e: &Ellipsoid,
    eval: &mut Evaluator,
    start: Vector,
    cfg: &PgdConfig,
) -> (Vector, f64, usize) {
    let mut theta = start;
    let (mut value, mut grad) = eval.value_and_gradient(&theta);
    let mut accepted = 0;
    // Step length in units of the radius along the V-normalized direction.
    // It doubles after a first-try success, so iterates that slide along the
    // boundary are not held back by the initial step.
    let mut scale = cfg.step0;
    for _ in 0..cfg.max_iters {
        let dir = e.factor.solve(&grad);
        let dir_norm = grad.dot(&dir).max(0.0).sqrt();
        if !(dir_norm > cfg.grad_tol) {
            break;
        }
        let mut next = None;
        // 60 halvings take any step below the resolution of f64
        for attempt in 0..60 {
            let cand = project(&(&theta + &dir * (scale * e.radius / dir_norm)), e);
            let v = eval.value(&cand);
            if v > value {
                next = Some((cand, v));
                if attempt == 0 {
                    scale = (scale * 2.0).min(MAX_STEP_SCALE);
                }
                break;
            }
            scale *= cfg.backtrack;
        }
        let Some((cand, v)) = next else { break };
        let moved = e.factor.norm(&(&cand - &theta));
        let gain = v - value;
        theta = cand;
        accepted += 1;
        if moved <= cfg.grad_tol * (1.0 + e.radius) || gain <= 1e-15 * (1.0 + v.abs()) {
            value = v;
            break;
        }
        let (v2, g2) = eval.value_and_gradient(&theta);
        value = v2;
        grad = g2;
    }
    (theta, value, accepted)
}
