//! Noise calibration for private synchronization and the binary tree that
//! releases noisy running sums.

use fairfed::numkit::{min_eig, SymMat, Vector};
use fairfed::privatizer::{privatize, NoiseTree, PrivacyParams};
use fairfed::rng::{stream, Purpose};

fn main() -> fairfed::Result<()> {
    for epsilon in [0.1, 1.0, 10.0, 1e4] {
        let p = PrivacyParams::calibrate(epsilon, 0.1, 5, 5, 1.0, 64, 0.1, 1.0)?;
        println!(
            "eps={epsilon:<7} per-node eps={:.4} node sigma={:.3e} shift={:.3e} rho_bar={:.3e} z={:.3e}",
            p.per_node_eps,
            p.sigma_node(),
            p.shift,
            p.rho_bar,
            p.z
        );
    }

    // Without noise the tree returns exact prefix sums from O(log k) nodes.
    let mut tree = NoiseTree::exact(4, 1);
    for k in 1..=8usize {
        tree.insert(&[k as f64])?;
        let (sum, nodes) = tree.prefix_with_nodes(k)?;
        println!("prefix {k}: sum={} from {nodes} node(s)", sum[0]);
    }

    // One agent releasing its statistics at four syncs.
    let p = PrivacyParams::calibrate(1e4, 0.1, 1, 2, 1.0, 4, 0.1, 1.0)?;
    let mut tree = NoiseTree::for_stats(&p, &mut stream(3, Purpose::TreeNoise, 0, 1));
    for sync in 1..=4 {
        let increment = SymMat::from_diagonal(&[1.0, 0.5]);
        let (gram, rewards) =
            privatize(1, &increment, &Vector::from_element(2, 0.2), &mut tree, &p)?;
        println!(
            "sync {sync}: released gram diagonal [{:.3}, {:.3}], min eigenvalue {:.3}, rewards [{:.3}, {:.3}]",
            gram.as_matrix()[(0, 0)],
            gram.as_matrix()[(1, 1)],
            min_eig(&gram),
            rewards[0],
            rewards[1]
        );
    }
    Ok(())
}
