//! Mini-batch TD(0) critic on a small random MOMDP, compared against the
//! exact TD fixed point as the iteration budget grows.

use firm::actor::PolicyParams;
use firm::critic::{default_radius, run_critic, CriticSchedule, CriticWeights};
use firm::env::{build_random_momdp, one_hot_features, stream_rng};
use firm::oracle::exact_td_fixpoint;

fn main() -> firm::Result<()> {
    let spec = build_random_momdp(4, 2, 2, 0.9, 1.0, 3)?;
    let phi = one_hot_features(&spec);
    let policy = PolicyParams::from_table(4, 2, vec![0.5, -0.5, 0.0, 1.0, -1.0, 0.2, 0.3, 0.3])?;
    let stars: Vec<Vec<f64>> = (0..2)
        .map(|j| exact_td_fixpoint(&spec, &policy, &phi, j))
        .collect::<firm::Result<_>>()?;
    let init = CriticWeights::zeros(2, phi.dim, default_radius(spec.r_max, spec.gamma, phi.dim));
    for n_iters in [10, 100, 1000, 4000] {
        let schedule = CriticSchedule {
            n_iters,
            batch_size: 8,
            stepsize: 0.1,
        };
        let mut rng = stream_rng(1, 0);
        let (w, _) = run_critic(&spec, &phi, &policy, &init, 0, &schedule, &mut rng)?;
        let err: Vec<f64> = (0..2)
            .map(|j| w.weights[j].iter().zip(&stars[j]).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        println!("N={n_iters:<5} ||w - w*||^2 per objective = {:.3e} {:.3e}", err[0], err[1]);
    }
    Ok(())
}
