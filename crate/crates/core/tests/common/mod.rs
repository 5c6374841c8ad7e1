#![allow(dead_code)]

use fairfed::environment::{gen_instance, Instance, NormMode};
use fairfed::federation::{run_federation, FederationConfig, FederationOutput, SyncProtocol};

pub const C_F: f64 = 10.0;
pub const ALPHA: f64 = 0.1;
pub const LAMBDA: f64 = 1.0;

/// One agent learning alone on a cap_unit instance.
pub fn single_agent_run(
    seed: u64,
    d: usize,
    k: usize,
    t: u64,
    sigma: f64,
) -> (Instance, FederationOutput) {
    let inst = gen_instance(d, k, 1, t, sigma, seed, NormMode::CapUnit).unwrap();
    let cfg = FederationConfig::standard(&inst, SyncProtocol::Never, C_F, ALPHA, LAMBDA).unwrap();
    let out = run_federation(&inst, cfg).unwrap();
    (inst, out)
}

/// Elliptical-potential right-hand side `2d ln((tr U₁ + T L²)/(d det(U₁)^{1/d}))`
/// for `U₁ = λI`.
pub fn potential_bound(d: usize, t: u64, lambda: f64, l_x: f64) -> f64 {
    let d_f = d as f64;
    let trace = d_f * lambda;
    2.0 * d_f * ((trace + t as f64 * l_x * l_x) / (d_f * lambda)).ln()
}
