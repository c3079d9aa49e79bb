//! Solves the regularized MGDA problem for a pair of orthogonal gradients and
//! shows how beta and a preference vector move the weights.

use firm::actor::GradientSet;
use firm::mgda::{gram, resolve, solve_simplex_qp, MgdaConfig, Regularizer};

fn main() -> firm::Result<()> {
    let grads = GradientSet {
        grads: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
        batch_size: 1,
    };
    let g = gram(&grads);
    for beta in [0.0, 0.5, 2.0, 20.0] {
        let sol = solve_simplex_qp(&g, &MgdaConfig::beta(beta).with_normalization(false))?;
        println!(
            "beta={beta:<5} lambda={:.6?} kkt={:.1e}",
            sol.weights.0, sol.kkt_residual
        );
    }
    for p in [[4.0, 1.0], [1.0, 1.0], [1.0, 4.0]] {
        let config = MgdaConfig {
            regularizer: Regularizer::Preference(p.to_vec()),
            ..Default::default()
        };
        println!("p={p:?} lambda={:.6?}", resolve(&grads, &config)?.weights.0);
    }
    Ok(())
}
