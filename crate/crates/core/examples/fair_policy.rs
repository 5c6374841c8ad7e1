//! Exposure-proportional policies and the regret metrics between them.

use fairfed::environment::{gen_instance, NormMode};
use fairfed::fairness::{
    construct_policy, fairness_regret_instant, optimal_policy, reward_regret_instant, MeritFn,
};
use fairfed::numkit::Vector;

fn main() -> fairfed::Result<()> {
    let inst = gen_instance(3, 5, 1, 10, 0.1, 3, NormMode::CapUnit)?;
    let ctx = inst.draw_contexts(1, 1)?;
    let theta_star = inst.theta_star();
    println!("expected rewards: {:.3?}", ctx.scores(&theta_star));

    for steepness in [1.0, 5.0, 10.0] {
        let merit = MeritFn::exponential(steepness, -1.0, 1.0)?;
        let star = optimal_policy(&inst, &ctx, &merit);
        println!(
            "c_f={steepness:<4} merit-proportional policy {:.3?}",
            star.probs
        );

        // A slightly wrong parameter gives a slightly unfair policy.
        let guess = &theta_star + Vector::from_element(3, 0.1);
        let pi = construct_policy(&guess, &ctx, &merit);
        println!(
            "         off by 0.1: fairness regret {:.4}, reward regret {:.4}",
            fairness_regret_instant(&pi, &star)?,
            reward_regret_instant(&pi, &star, &ctx, &theta_star)?
        );
    }
    Ok(())
}
