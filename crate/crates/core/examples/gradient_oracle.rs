//! Exact returns and policy gradients from dynamic programming, checked
//! against central finite differences.

use firm::actor::PolicyParams;
use firm::env::build_random_momdp;
use firm::oracle::{exact_policy_gradient, exact_return};

fn main() -> firm::Result<()> {
    let spec = build_random_momdp(3, 2, 2, 0.9, 1.0, 5)?;
    let theta = vec![0.4, -0.2, 1.0, 0.0, -0.7, 0.3];
    let policy = PolicyParams::from_table(3, 2, theta.clone())?;
    println!("J = {:?}", exact_return(&spec, &policy)?);
    let exact = exact_policy_gradient(&spec, &policy)?;
    let h = 1e-5;
    for k in 0..theta.len() {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[k] += h;
        down[k] -= h;
        let ju = exact_return(&spec, &PolicyParams::from_table(3, 2, up)?)?;
        let jd = exact_return(&spec, &PolicyParams::from_table(3, 2, down)?)?;
        let fd: Vec<f64> = (0..2).map(|j| (ju[j] - jd[j]) / (2.0 * h)).collect();
        println!(
            "theta[{k}]: exact=({:+.6}, {:+.6}) fd=({:+.6}, {:+.6})",
            exact[0][k], exact[1][k], fd[0], fd[1]
        );
    }
    Ok(())
}
