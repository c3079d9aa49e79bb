//! Exact dynamic-programming ground truth for tabular MOMDPs.
//!
//! Everything here is computed by direct linear solves or power iteration on
//! the induced chain, never by sampling. Metrics and tests compare the
//! stochastic pipeline against these quantities.

use crate::actor::{add_score, PolicyParams};
use crate::env::{FeatureMap, MomdpSpec};
use crate::error::{FirmError, Result};
use crate::linalg::solve;

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Exact values, returns and state distributions of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactEvaluation {
    /// `values[j][s] = V_j(s)`
    pub values: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub stationary: Vec<f64>,
    pub discounted_visitation: Vec<f64>,
}

pub fn evaluate(momdp: &MomdpSpec, policy: &PolicyParams) -> Result<ExactEvaluation> {
    let values = (0..momdp.n_objectives)
        .map(|j| exact_values(momdp, policy, j))
        .collect::<Result<Vec<_>>>()?;
    let returns = returns_from_values(momdp, &values);
    Ok(ExactEvaluation {
        values,
        returns,
        stationary: stationary_distribution(momdp, policy)?,
        discounted_visitation: discounted_visitation(momdp, policy)?,
    })
}

fn residual(d: &[f64], chain: &[Vec<f64>]) -> f64 {
    let n = d.len();
    (0..n)
        .map(|j| ((0..n).map(|i| d[i] * chain[i][j]).sum::<f64>() - d[j]).abs())
        .fold(0.0, f64::max)
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_of_chain(chain: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = chain.len();
    let mut d = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut res = residual(&d, chain);
    let mut iters = 0;
    while res > STATIONARY_TOL {
        if iters == STATIONARY_MAX_ITERS {
            return Err(FirmError::NonMixing {
                residual: res,
                iters,
            });
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in chain.iter().enumerate() {
            for (x, p) in next.iter_mut().zip(row) {
                *x += d[i] * p;
            }
        }
        let total: f64 = next.iter().sum();
        d.iter_mut().zip(&next).for_each(|(a, b)| *a = b / total);
        res = residual(&d, chain);
        iters += 1;
    }
    Ok(d)
}

/// The unique `d` with `d^T P_pi = d^T`.
pub fn stationary_distribution(momdp: &MomdpSpec, policy: &PolicyParams) -> Result<Vec<f64>> {
    stationary_of_chain(&momdp.induced_chain(&policy.table()))
}

/// Solves `(I - gamma P_pi) V = r_pi` for objective `objective`.
pub fn exact_values(momdp: &MomdpSpec, policy: &PolicyParams, objective: usize) -> Result<Vec<f64>> {
    if objective >= momdp.n_objectives {
        return Err(FirmError::Index {
            what: "objective",
            index: objective,
            size: momdp.n_objectives,
        });
    }
    let table = policy.table();
    let chain = momdp.induced_chain(&table);
    let reward = momdp.induced_reward(&table, objective);
    let n = momdp.n_states;
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { 0.0 } - momdp.gamma * chain[i][j])
                .collect()
        })
        .collect();
    solve(&a, &reward, "policy evaluation")
}

fn returns_from_values(momdp: &MomdpSpec, values: &[Vec<f64>]) -> Vec<f64> {
    values
        .iter()
        .map(|v| momdp.gamma * crate::linalg::dot(&momdp.initial_dist, v))
        .collect()
}

/// `J_j = gamma * rho0^T V_j`: the discounted sum counted from `t = 1`.
pub fn exact_return(momdp: &MomdpSpec, policy: &PolicyParams) -> Result<Vec<f64>> {
    let values = (0..momdp.n_objectives)
        .map(|j| exact_values(momdp, policy, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(returns_from_values(momdp, &values))
}

/// Normalized discounted visitation, solving
/// `d = (1 - gamma) rho0 + gamma P_pi^T d`.
pub fn discounted_visitation(momdp: &MomdpSpec, policy: &PolicyParams) -> Result<Vec<f64>> {
    let chain = momdp.induced_chain(&policy.table());
    let n = momdp.n_states;
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { 0.0 } - momdp.gamma * chain[j][i])
                .collect()
        })
        .collect();
    let b: Vec<f64> = momdp
        .initial_dist
        .iter()
        .map(|p| (1.0 - momdp.gamma) * p)
        .collect();
    let mut d = solve(&a, &b, "discounted visitation")?;
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    Ok(d)
}

/// `Q_j(s, a) = r_j(s, a) + gamma sum_s' P(s'|s, a) V_j(s')`.
pub fn action_values(momdp: &MomdpSpec, values: &[f64], objective: usize) -> Vec<Vec<f64>> {
    (0..momdp.n_states)
        .map(|s| {
            (0..momdp.n_actions)
                .map(|a| {
                    momdp.rewards[objective][s][a]
                        + momdp.gamma * crate::linalg::dot(&momdp.transition[s][a], values)
                })
                .collect()
        })
        .collect()
}

/// Exact policy gradient of every objective, one `|S|*|A|` column per
/// objective:
/// `grad J_j = gamma/(1-gamma) sum_s d_gamma(s) sum_a pi(a|s) psi(s,a) Q_j(s,a)`.
pub fn exact_policy_gradient(momdp: &MomdpSpec, policy: &PolicyParams) -> Result<Vec<Vec<f64>>> {
    let visitation = discounted_visitation(momdp, policy)?;
    let scale = momdp.gamma / (1.0 - momdp.gamma);
    (0..momdp.n_objectives)
        .map(|j| {
            let values = exact_values(momdp, policy, j)?;
            let q = action_values(momdp, &values, j);
            let mut grad = vec![0.0; policy.dim()];
            for s in 0..momdp.n_states {
                let probs = policy.probs(s);
                for a in 0..momdp.n_actions {
                    add_score(policy, s, a, scale * visitation[s] * probs[a] * q[s][a], &mut grad);
                }
            }
            Ok(grad)
        })
        .collect()
}

/// Linear TD fixed point `A w = -b` with
/// `A = E_d[phi(s) (gamma phi(s') - phi(s))^T]`, `b = E_d[r_j phi(s)]`, built
/// exactly under the stationary distribution of `policy`.
pub fn exact_td_fixpoint(
    momdp: &MomdpSpec,
    policy: &PolicyParams,
    features: &FeatureMap,
    objective: usize,
) -> Result<Vec<f64>> {
    let table = policy.table();
    let chain = momdp.induced_chain(&table);
    let reward = momdp.induced_reward(&table, objective);
    let d = stationary_of_chain(&chain)?;
    let k = features.dim;
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for s in 0..momdp.n_states {
        let phi = features.phi(s);
        let mut next_phi = vec![0.0; k];
        for (s2, p) in chain[s].iter().enumerate() {
            for (x, f) in next_phi.iter_mut().zip(features.phi(s2)) {
                *x += p * f;
            }
        }
        for r in 0..k {
            for c in 0..k {
                a[r][c] += d[s] * phi[r] * (momdp.gamma * next_phi[c] - phi[c]);
            }
            b[r] += d[s] * reward[s] * phi[r];
        }
    }
    let neg_b: Vec<f64> = b.iter().map(|x| -x).collect();
    solve(&a, &neg_b, "TD fixed point")
}

/// Expected semi-gradient `E_{s~d_pi, a~pi, s'~P}[psi(s,a) delta_j(w)]` by
/// enumeration over `(s, a, s')`. This is the mean the stochastic actor
/// estimator targets.
pub fn expected_td_gradient(
    momdp: &MomdpSpec,
    policy: &PolicyParams,
    features: &FeatureMap,
    w: &[f64],
    objective: usize,
) -> Result<Vec<f64>> {
    let d = stationary_distribution(momdp, policy)?;
    let mut grad = vec![0.0; policy.dim()];
    for s in 0..momdp.n_states {
        let probs = policy.probs(s);
        let here = features.dot(s, w);
        for a in 0..momdp.n_actions {
            let mut delta = 0.0;
            for (s2, p) in momdp.transition[s][a].iter().enumerate() {
                delta += p
                    * (momdp.rewards[objective][s][a] + momdp.gamma * features.dot(s2, w) - here);
            }
            add_score(policy, s, a, d[s] * probs[a] * delta, &mut grad);
        }
    }
    Ok(grad)
}
