//! Searching a confidence ellipsoid for the parameter with the largest
//! expected fair reward.

use fairfed::environment::ContextSet;
use fairfed::fairness::{construct_policy, MeritFn};
use fairfed::numkit::{SymMat, Vector};
use fairfed::optimizer::{objective, optimistic_theta, Ellipsoid, PgdConfig};
use fairfed::rng::{stream, Purpose};

fn main() -> fairfed::Result<()> {
    let center = Vector::from_vec(vec![0.3, 0.1]);
    let metric = SymMat::from_diagonal(&[4.0, 1.0]);
    let ctx = ContextSet::new(
        1,
        1,
        vec![
            Vector::from_vec(vec![1.0, 0.0]),
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![0.6, 0.6]),
        ],
    );
    let merit = MeritFn::exponential(10.0, -3.0, 3.0)?;

    for radius in [0.0, 0.25, 0.5, 1.0] {
        let e = Ellipsoid::new(center.clone(), metric.clone(), radius)?;
        let mut rng = stream(1, Purpose::Optimizer, 1, 1);
        let out = optimistic_theta(&e, &ctx, &merit, &PgdConfig::default(), &mut rng, None);
        let policy = construct_policy(&out.theta, &ctx, &merit);
        println!(
            "radius={radius:<4}  J(center)={:.4}  J(theta)={:.4}  theta=[{:.3}, {:.3}]  steps={}  policy={:.3?}",
            objective(&center, &ctx, &merit),
            out.value,
            out.theta[0],
            out.theta[1],
            out.iters,
            policy.probs
        );
    }
    Ok(())
}
