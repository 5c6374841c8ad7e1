//! Tree-based private release of cumulative sufficient statistics.
//!
//! Each agent owns a binary tree over its synchronization rounds. The
//! increment `(S | s)` of every sync is inserted as a `d × (d+1)` leaf; the
//! released value is the prefix sum over all leaves so far, assembled from at
//! most `depth` tree nodes, each carrying Gaussian noise fixed at
//! construction. The released Gram block is shifted by `2Λ I` so that,
//! with high probability, the noise-plus-shift spectrum lies in `[Λ, 3Λ]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::AccuracyTriple;
use crate::error::{Error, Result};
use crate::numkit::{min_eig, SymMat, Vector, PSD_TOL};

/// `(ε₀, δ₀) = (ε / √(8 m ln(2/δ)), δ / 2m)`.
pub fn per_node_privacy(epsilon: f64, delta: f64, m: usize) -> (f64, f64) {
    let m = m as f64;
    let eps0 = epsilon / (8.0 * m * (2.0 / delta).ln()).sqrt();
    (eps0, delta / (2.0 * m))
}

/// `1 + ⌈log₂ τ⌉` for `τ ≥ 1` planned releases.
pub fn tree_depth(releases: usize) -> usize {
    let releases = releases.max(1);
    1 + (usize::BITS - (releases - 1).leading_zeros()) as usize
}

/// Per-entry noise variance `16 n (L² + 1)² ln(2/δ₀)² / ε₀²`.
pub fn node_noise_variance(depth: usize, l_x: f64, eps0: f64, delta0: f64) -> f64 {
    let l2 = l_x * l_x;
    16.0 * depth as f64 * (l2 + 1.0).powi(2) * (2.0 / delta0).ln().powi(2) / (eps0 * eps0)
}

/// Calibrated privacy parameters of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub m: usize,
    pub d: usize,
    pub l_x: f64,
    pub per_node_eps: f64,
    pub per_node_delta: f64,
    /// Tree depth `n`.
    pub depth: usize,
    /// Planned number of synchronizations (tree capacity).
    pub planned_syncs: usize,
    pub noise_sigma2: f64,
    /// PSD shift magnitude `Λ`; released Gram blocks get `+2Λ I`.
    pub shift: f64,
    pub rho_bar: f64,
    pub rho_underbar: f64,
    pub z: f64,
    pub alpha: f64,
}

impl PrivacyParams {
    /// Calibrates noise and accuracy bounds for `planned_syncs` releases.
    #[allow(clippy::too_many_arguments)]
    pub fn calibrate(
        epsilon: f64,
        delta: f64,
        m: usize,
        d: usize,
        l_x: f64,
        planned_syncs: usize,
        alpha: f64,
        lambda: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) || m == 0 || d == 0 {
            return Err(Error::Config(format!(
                "invalid privacy budget (epsilon={epsilon}, delta={delta}, m={m}, d={d})"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) || !(lambda > 0.0) {
            return Err(Error::Config(format!(
                "invalid alpha/lambda ({alpha}, {lambda})"
            )));
        }
        let planned_syncs = planned_syncs.max(1);
        let (eps0, delta0) = per_node_privacy(epsilon, delta, m);
        let depth = tree_depth(planned_syncs);
        let noise_sigma2 = node_noise_variance(depth, l_x, eps0, delta0);
        let mut p = Self {
            epsilon,
            delta,
            m,
            d,
            l_x,
            per_node_eps: eps0,
            per_node_delta: delta0,
            depth,
            planned_syncs,
            noise_sigma2,
            shift: 0.0,
            rho_bar: 0.0,
            rho_underbar: 0.0,
            z: 0.0,
            alpha,
        };
        let triple = accuracy_triple(&p, planned_syncs, alpha, lambda);
        p.shift = shift_magnitude(&p, planned_syncs, alpha);
        p.rho_bar = triple.rho_bar;
        p.rho_underbar = triple.rho_underbar;
        p.z = triple.z;
        Ok(p)
    }

    /// Same calibration with all noise switched off.
    pub fn noiseless(d: usize, m: usize, planned_syncs: usize, lambda: f64) -> Self {
        let planned_syncs = planned_syncs.max(1);
        Self {
            epsilon: f64::INFINITY,
            delta: 0.0,
            m,
            d,
            l_x: 1.0,
            per_node_eps: f64::INFINITY,
            per_node_delta: 0.0,
            depth: tree_depth(planned_syncs),
            planned_syncs,
            noise_sigma2: 0.0,
            shift: 0.0,
            rho_bar: lambda,
            rho_underbar: lambda,
            z: 0.0,
            alpha: 0.1,
        }
    }

    pub fn triple(&self) -> AccuracyTriple {
        AccuracyTriple {
            rho_bar: self.rho_bar,
            rho_underbar: self.rho_underbar,
            z: self.z,
        }
    }

    pub fn sigma_node(&self) -> f64 {
        self.noise_sigma2.sqrt()
    }
}

fn log_term(p: &PrivacyParams, n_syncs: usize, alpha: f64) -> f64 {
    2.0 * (2.0 * n_syncs.max(1) as f64 * p.m as f64 / alpha).ln()
}

/// `Λ = √(2n) σ_node (4√d + 2 ln(2 n_syncs m / α))`.
pub fn shift_magnitude(p: &PrivacyParams, n_syncs: usize, alpha: f64) -> f64 {
    let d = p.d as f64;
    (2.0 * p.depth as f64).sqrt() * p.sigma_node() * (4.0 * d.sqrt() + log_term(p, n_syncs, alpha))
}

/// `(ρ̄, ρ_, z) = (3Λ, Λ, √(2n) σ_node (√d + 2 ln(2 n_syncs m / α)))`,
/// with both ρ floored at `λ`.
pub fn accuracy_triple(
    p: &PrivacyParams,
    n_syncs: usize,
    alpha: f64,
    lambda: f64,
) -> AccuracyTriple {
    let shift = shift_magnitude(p, n_syncs, alpha);
    let d = p.d as f64;
    let z =
        (2.0 * p.depth as f64).sqrt() * p.sigma_node() * (d.sqrt() + log_term(p, n_syncs, alpha));
    AccuracyTriple {
        rho_bar: (3.0 * shift).max(lambda),
        rho_underbar: shift.max(lambda),
        z,
    }
}

/// Node noise: i.i.d. `N(0, σ²)` entries, leading `d × d` block replaced by
/// `(N̂ + N̂ᵀ)/√2`. Row-major `d × (d+1)`.
pub fn sample_node_noise<R: Rng + ?Sized>(d: usize, noise_sigma2: f64, rng: &mut R) -> Vec<f64> {
    let w = d + 1;
    if noise_sigma2 == 0.0 {
        return vec![0.0; d * w];
    }
    let sd = noise_sigma2.sqrt();
    let raw: Vec<f64> = (0..d * w)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut out = raw.clone();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        for j in i..d {
            let v = (raw[i * w + j] + raw[j * w + i]) * inv_sqrt2;
            out[i * w + j] = v;
            out[j * w + i] = v;
        }
    }
    out
}

/// Flattens `(S | s)` row-major into `d × (d+1)`.
pub fn flatten_stats(gram: &SymMat, rewards: &Vector) -> Vec<f64> {
    let d = gram.dim();
    let mut out = Vec::with_capacity(d * (d + 1));
    for i in 0..d {
        for j in 0..d {
            out.push(gram.get(i, j));
        }
        out.push(rewards[i]);
    }
    out
}

/// Inverse of [`flatten_stats`]. The block must be exactly symmetric.
pub fn unflatten_stats(d: usize, cells: &[f64]) -> Result<(SymMat, Vector)> {
    let w = d + 1;
    if cells.len() != d * w {
        return Err(Error::LengthMismatch {
            expected: d * w,
            got: cells.len(),
        });
    }
    let mut block = Vec::with_capacity(d * d);
    let mut col = Vec::with_capacity(d);
    for row in cells.chunks_exact(w) {
        block.extend_from_slice(&row[..d]);
        col.push(row[d]);
    }
    Ok((SymMat::from_row_slice(d, &block)?, Vector::from_vec(col)))
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    data: Vec<f64>,
    noise: Vec<f64>,
}

/// Binary tree for continual release of prefix sums.
///
/// Level 0 holds `2^(depth−1)` leaves; a node at level `l`, index `j` covers
/// leaves `[j·2^l, (j+1)·2^l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTree {
    depth: usize,
    cells: usize,
    levels: Vec<Vec<Node>>,
    inserted: usize,
}

impl NoiseTree {
    /// Tree of the given depth over cells of length `cells`, with every
    /// node's noise drawn up front.
    pub fn new(depth: usize, cells: usize, mut noise: impl FnMut() -> Vec<f64>) -> Self {
        let depth = depth.max(1);
        let leaves = 1usize << (depth - 1);
        let levels = (0..depth)
            .map(|l| {
                (0..(leaves >> l))
                    .map(|_| {
                        let n = noise();
                        debug_assert_eq!(n.len(), cells);
                        Node {
                            data: vec![0.0; cells],
                            noise: n,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            depth,
            cells,
            levels,
            inserted: 0,
        }
    }

    /// Tree for `d × (d+1)` statistics with calibrated node noise.
    pub fn for_stats<R: Rng + ?Sized>(params: &PrivacyParams, rng: &mut R) -> Self {
        let (d, s2) = (params.d, params.noise_sigma2);
        Self::new(params.depth, d * (d + 1), || sample_node_noise(d, s2, rng))
    }

    /// Noise-free tree over `cells`-long values.
    pub fn exact(depth: usize, cells: usize) -> Self {
        Self::new(depth, cells, || vec![0.0; cells])
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    /// Appends `value` as the next leaf and refreshes its ancestors.
    pub fn insert(&mut self, value: &[f64]) -> Result<()> {
        if value.len() != self.cells {
            return Err(Error::LengthMismatch {
                expected: self.cells,
                got: value.len(),
            });
        }
        if self.inserted == self.leaf_count() {
            return Err(Error::TreeFull {
                capacity: self.leaf_count(),
            });
        }
        let mut idx = self.inserted;
        self.levels[0][idx].data.copy_from_slice(value);
        for l in 1..self.depth {
            idx /= 2;
            let (lower, upper) = self.levels.split_at_mut(l);
            let children = &lower[l - 1];
            let parent = &mut upper[0][idx];
            let (left, right) = (&children[2 * idx].data, &children[2 * idx + 1].data);
            for ((p, a), b) in parent.data.iter_mut().zip(left).zip(right) {
                *p = a + b;
            }
        }
        self.inserted += 1;
        Ok(())
    }

    /// Nodes `(level, index)` of the dyadic decomposition of leaves `1..=k`.
    pub fn decomposition(k: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0usize;
        for level in (0..usize::BITS as usize).rev() {
            if k & (1 << level) != 0 {
                out.push((level, start >> level));
                start += 1 << level;
            }
        }
        out
    }

    /// Noisy sum of the first `k` leaves.
    pub fn noisy_prefix(&self, k: usize) -> Result<Vec<f64>> {
        Ok(self.prefix_with_nodes(k)?.0)
    }

    /// Noisy prefix together with the number of nodes it touched.
    pub fn prefix_with_nodes(&self, k: usize) -> Result<(Vec<f64>, usize)> {
        if k == 0 || k > self.inserted {
            return Err(Error::OutOfRange(format!(
                "prefix length {k} outside 1..={}",
                self.inserted
            )));
        }
        let nodes = Self::decomposition(k);
        let mut out = vec![0.0; self.cells];
        for &(level, idx) in &nodes {
            let node = &self.levels[level][idx];
            for ((o, x), n) in out.iter_mut().zip(&node.data).zip(&node.noise) {
                *o += x + n;
            }
        }
        Ok((out, nodes.len()))
    }

    /// Noise contained in the prefix of length `k`.
    pub fn prefix_noise(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.inserted {
            return Err(Error::OutOfRange(format!(
                "prefix length {k} outside 1..={}",
                self.inserted
            )));
        }
        let mut out = vec![0.0; self.cells];
        for (level, idx) in Self::decomposition(k) {
            for (o, n) in out.iter_mut().zip(&self.levels[level][idx].noise) {
                *o += n;
            }
        }
        Ok(out)
    }

    /// Checks that every internal node equals the sum of its children.
    pub fn check_consistency(&self) -> Result<()> {
        for l in 1..self.depth {
            for (j, node) in self.levels[l].iter().enumerate() {
                let (a, b) = (&self.levels[l - 1][2 * j], &self.levels[l - 1][2 * j + 1]);
                for c in 0..self.cells {
                    if node.data[c] != a.data[c] + b.data[c] {
                        return Err(Error::Invariant(format!(
                            "tree node ({l}, {j}) cell {c} is not the sum of its children"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Private release for one agent at one sync.
///
/// Inserts the increment `(S | s)` since the previous sync and returns the
/// noisy cumulative `(Û, û)` with `Û` shifted by `2Λ I`.
pub fn privatize(
    agent: usize,
    increment_gram: &SymMat,
    increment_rewards: &Vector,
    tree: &mut NoiseTree,
    params: &PrivacyParams,
) -> Result<(SymMat, Vector)> {
    let d = increment_gram.dim();
    tree.insert(&flatten_stats(increment_gram, increment_rewards))?;
    let released = tree.noisy_prefix(tree.inserted())?;
    let (mut gram, rewards) = unflatten_stats(d, &released)?;
    gram.add_diagonal(2.0 * params.shift);
    if params.noise_sigma2 > 0.0 {
        let low = min_eig(&gram);
        if low < -PSD_TOL {
            return Err(Error::Calibration {
                agent,
                min_eig: low,
            });
        }
    }
    Ok((gram, rewards))
}
