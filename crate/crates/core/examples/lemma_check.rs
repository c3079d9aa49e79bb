//! Randomized check that regularized MGDA weights move at most
//! `(4 R M / beta) max_j ||dg_j||` when the gradients are perturbed.

use firm::metrics::lemma_stability_check;

fn main() -> firm::Result<()> {
    for (m, d, beta) in [(2, 8, 0.1), (3, 8, 0.05), (4, 16, 0.01)] {
        let r = lemma_stability_check(1000, m, d, beta, 7)?;
        println!(
            "M={m} d={d} beta={beta}: max_ratio={:.4} R={:.3} pass={}",
            r.max_ratio, r.r_used, r.pass
        );
    }
    Ok(())
}
