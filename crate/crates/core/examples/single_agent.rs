//! One learner playing fair policies against a synthetic instance, driven
//! round by round through the agent API.

use fairfed::agent::{AgentState, BetaSchedule};
use fairfed::environment::{gen_instance, NormMode};
use fairfed::fairness::{fairness_regret_instant, optimal_policy, MeritFn};
use fairfed::optimizer::PgdConfig;
use fairfed::rng::{stream, Purpose};

fn main() -> fairfed::Result<()> {
    let (d, k, t) = (4, 6, 3000);
    let inst = gen_instance(d, k, 1, t, 0.1, 7, NormMode::CapUnit)?;
    let merit = MeritFn::exponential(10.0, -1.0, 1.0)?;
    let beta = BetaSchedule::nonprivate(inst.sigma, 0.1, 1.0, inst.c, 1, 1.0);
    let pgd = PgdConfig::default();

    let mut agent = AgentState::new(1, d, 1.0);
    let mut regret = 0.0;
    for round in 1..=t {
        let ctx = inst.draw_contexts(round, 1)?;
        let out = agent.act(
            &ctx,
            beta.beta(round, d)?,
            &merit,
            &pgd,
            &mut stream(inst.seed, Purpose::Optimizer, round, 1),
            &mut stream(inst.seed, Purpose::Action, round, 1),
        )?;
        let x = &ctx.arms[out.action];
        let y = inst.reward(x, &mut stream(inst.seed, Purpose::Reward, round, 1));
        agent.update(x, y);

        regret += fairness_regret_instant(&out.policy, &optimal_policy(&inst, &ctx, &merit))?;
        if round % 500 == 0 {
            let err = (agent.estimate()? - inst.theta_star()).norm();
            println!("t={round:>5}  fairness regret={regret:>9.3}  |theta_hat - theta*|={err:.4}");
        }
    }
    Ok(())
}
