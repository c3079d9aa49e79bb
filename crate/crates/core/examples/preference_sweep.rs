//! Trade-off between two directly conflicting objectives as the preference
//! vector shifts weight from the first to the second.

use firm::experiments::{preference_means, preset_conflicting_env, sweep_protocol};

fn main() -> firm::Result<()> {
    let spec = preset_conflicting_env()?;
    let prefs = vec![
        vec![8.0, 1.0],
        vec![4.0, 1.0],
        vec![1.0, 1.0],
        vec![1.0, 4.0],
        vec![1.0, 8.0],
    ];
    for row in preference_means(&spec, &sweep_protocol(), &prefs, &[0, 1, 2])? {
        println!("p={:?} J={:.4?}", row.preference, row.returns.unwrap_or_default());
    }
    Ok(())
}
