//! A small multi-seed experiment through the harness, writing curves and
//! provenance under the system temp directory.

use fairfed::harness::{print_summary, run_experiment, ExpId, ExperimentConfig, Scale, Variant};

fn main() -> fairfed::Result<()> {
    let mut cfg = ExperimentConfig::preset(ExpId::Exp1, Scale::Desk);
    cfg.t = 2000;
    cfg.m = 3;
    cfg.seeds = vec![0, 1];
    cfg.variants = vec![Variant::B0, Variant::Fed, Variant::Priv];
    cfg.output_dir = std::env::temp_dir().join("fairfed-example");

    let summary = run_experiment(&cfg)?;
    print_summary(&summary, std::io::stdout())?;
    println!(
        "outputs in {}",
        cfg.output_dir.join(cfg.exp_id.to_string()).display()
    );
    Ok(())
}
