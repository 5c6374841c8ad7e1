//! Several agents learning together under different communication
//! protocols, compared with agents that never talk.

use fairfed::environment::{gen_instance, NormMode};
use fairfed::federation::{run_federation, FederationConfig, SyncProtocol};

fn main() -> fairfed::Result<()> {
    let inst = gen_instance(4, 8, 4, 4000, 0.1, 11, NormMode::Raw)?;
    for protocol in [
        SyncProtocol::Never,
        SyncProtocol::Proposed,
        SyncProtocol::Doubling,
        SyncProtocol::FixedInterval(100),
    ] {
        let cfg = FederationConfig::standard(&inst, protocol, 10.0, 0.1, 1.0)?;
        let out = run_federation(&inst, cfg)?;
        println!(
            "{:<12} fairness regret per agent {:>9.3}  syncs {:>4}  max gap {:>5}  bytes {}",
            protocol.to_string(),
            out.final_fairness_regret(),
            out.syncs.len(),
            out.max_gap,
            out.total_bytes()
        );
    }
    Ok(())
}
