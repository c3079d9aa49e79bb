//! Variance of the client-averaged update direction as the number of
//! clients and the batch size grow.

use firm::actor::PolicyParams;
use firm::env::{build_random_momdp, one_hot_features};
use firm::metrics::variance_speedup_check;

fn main() -> firm::Result<()> {
    let spec = build_random_momdp(5, 3, 2, 0.9, 1.0, 0)?;
    let phi = one_hot_features(&spec);
    let policy = PolicyParams::zeros(5, 3);
    let grid = [(1, 16), (2, 16), (4, 16), (8, 16), (1, 32), (1, 64), (4, 64)];
    let rows = variance_speedup_check(&spec, &phi, &policy, &grid, 400, 3)?;
    let base = rows[0].variance;
    for r in &rows {
        println!(
            "C={:<2} B={:<3} variance={:.4e} reduction x{:.2}",
            r.n_clients,
            r.batch_size,
            r.variance,
            base / r.variance
        );
    }
    Ok(())
}
