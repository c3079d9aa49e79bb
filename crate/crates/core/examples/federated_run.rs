//! One federated run per mode on the same MOMDP, with per-round exact
//! returns, stationarity and client disagreement.

use firm::env::build_random_momdp;
use firm::experiments::mean_disagreement;
use firm::federation::{run_experiment, Mode, ProtocolConfig};

fn main() -> firm::Result<()> {
    let spec = build_random_momdp(5, 3, 2, 0.9, 1.0, 0)?;
    for mode in [Mode::Firm, Mode::FedcmooA, Mode::Centralized] {
        let config = ProtocolConfig {
            mode,
            n_rounds: 20,
            actor_lr: 0.5,
            parallel: true,
            ..Default::default()
        };
        let log = run_experiment(&config, &spec)?;
        println!("{mode}:");
        for r in log.rounds.iter().step_by(5) {
            println!(
                "  round {:>2} J={:.4?} stationarity={:.3e}",
                r.round, r.global_returns, r.stationarity
            );
        }
        println!("  mean lambda disagreement {:.3e}", mean_disagreement(&log));
    }
    Ok(())
}
