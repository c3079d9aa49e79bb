//! Client weight disagreement with and without MGDA regularization on a
//! MOMDP with nearly aligned objectives.

use firm::experiments::{ablation_protocol, beta_ablation, preset_ablation_env, PRESET_SEEDS};

fn main() -> firm::Result<()> {
    let spec = preset_ablation_env()?;
    let arms = beta_ablation(&spec, &ablation_protocol(), &[0.0, 0.01, 0.05, 0.2], &PRESET_SEEDS)?;
    for arm in &arms {
        println!("beta={:<5} mean disagreement={:.4e}", arm.beta, arm.disagreement);
    }
    Ok(())
}
