//! Pareto stationarity, weight disagreement, client drift and the randomized
//! checks of the stability and variance bounds.

use rand::Rng;

use crate::actor::{objective_gradients, PolicyParams};
use crate::critic::CriticWeights;
use crate::env::{sample_index, stream_rng, FeatureMap, MomdpSpec, SimRng};
use crate::error::{FirmError, Result};
use crate::linalg::{mean_of, norm1, norm2, sub};
use crate::mgda::{gram, minimize_on_simplex, solve_simplex_qp, GramMatrix, MgdaConfig, SimplexWeights};
use crate::actor::GradientSet;
use crate::oracle::{exact_td_fixpoint, stationary_distribution};

/// Tolerance used for the stationarity QP.
pub const STATIONARITY_TOL: f64 = 1e-10;

fn columns_gram(columns: &[Vec<f64>]) -> GramMatrix {
    gram(&GradientSet {
        grads: columns.to_vec(),
        batch_size: 1,
    })
}

/// `min_{lambda in simplex} ||grad_J lambda||^2` for the exact gradient
/// columns `grad_j J`.
pub fn pareto_stationarity(columns: &[Vec<f64>]) -> Result<f64> {
    let g = columns_gram(columns);
    let sol = solve_simplex_qp(&g, &MgdaConfig::plain(STATIONARITY_TOL))?;
    Ok(sol.objective.max(0.0))
}

/// `||grad_J lambda||^2` at a given weight vector.
pub fn weighted_stationarity(columns: &[Vec<f64>], lambda: &SimplexWeights) -> f64 {
    let dim = columns.first().map_or(0, Vec::len);
    let mut combined = vec![0.0; dim];
    for (c, l) in columns.iter().zip(&lambda.0) {
        combined.iter_mut().zip(c).for_each(|(o, x)| *o += l * x);
    }
    norm2(&combined).powi(2)
}

fn mean_lambda(lambdas: &[SimplexWeights]) -> Vec<f64> {
    mean_of(lambdas.iter().map(|l| l.as_slice())).unwrap_or_default()
}

/// `(1/C) sum_c ||lambda_c - mean lambda||_1`.
pub fn lambda_disagreement(lambdas: &[SimplexWeights]) -> f64 {
    if lambdas.is_empty() {
        return 0.0;
    }
    let mean = mean_lambda(lambdas);
    lambdas
        .iter()
        .map(|l| norm1(&sub(l.as_slice(), &mean)))
        .sum::<f64>()
        / lambdas.len() as f64
}

/// Same as [`lambda_disagreement`] in the Euclidean norm.
pub fn lambda_disagreement_l2(lambdas: &[SimplexWeights]) -> f64 {
    if lambdas.is_empty() {
        return 0.0;
    }
    let mean = mean_lambda(lambdas);
    lambdas
        .iter()
        .map(|l| norm2(&sub(l.as_slice(), &mean)))
        .sum::<f64>()
        / lambdas.len() as f64
}

/// `(1/C) sum_c ||theta_c - mean theta||_2`.
pub fn param_drift(policies: &[&PolicyParams]) -> f64 {
    if policies.is_empty() {
        return 0.0;
    }
    let mean = mean_of(policies.iter().map(|p| p.theta.as_slice())).unwrap_or_default();
    policies
        .iter()
        .map(|p| norm2(&sub(&p.theta, &mean)))
        .sum::<f64>()
        / policies.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheckReport {
    pub trials: usize,
    /// Largest observed `||lambda - lambda'|| / ((4RM/beta) max_j ||dg_j||)`.
    pub max_ratio: f64,
    /// Largest gradient norm over all trial inputs.
    pub r_used: f64,
    pub pass: bool,
}

/// Uniform direction in the cube, rescaled to norm `scale`.
fn random_vec(rng: &mut SimRng, d: usize, scale: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = norm2(&v).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x *= scale / n);
    v
}

/// Randomized check of the weight-stability bound
/// `||lambda*_c - lambda*_c'||_2 <= (4RM/beta) max_j ||g_j,c - g_j,c'||_2`
/// on raw (unnormalized) Gram matrices.
///
/// Each trial draws a base gradient set with per-objective scales spread
/// over several orders of magnitude and a perturbed copy whose perturbation
/// size is itself log-uniform, so both the near-identical and the far-apart
/// regimes are exercised.
pub fn lemma_stability_check(
    n_trials: usize,
    m: usize,
    d: usize,
    beta: f64,
    seed: u64,
) -> Result<LemmaCheckReport> {
    if !(beta > 0.0) {
        return Err(FirmError::Config("stability check needs beta > 0".into()));
    }
    let config = MgdaConfig {
        tol: 1e-12,
        max_iters: 100_000,
        ..MgdaConfig::beta(beta).with_normalization(false)
    };
    let mut rng = stream_rng(seed, 0);
    let mut max_ratio: f64 = 0.0;
    let mut r_used: f64 = 0.0;
    for trial in 0..n_trials {
        let base_scale = 10f64.powf(rng.gen_range(-1.5..1.0));
        let first: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let s = base_scale * rng.gen_range(0.2..1.0);
                random_vec(&mut rng, d, s)
            })
            .collect();
        let second: Vec<Vec<f64>> = if trial == 0 {
            first.clone()
        } else {
            let pert = base_scale * 10f64.powf(rng.gen_range(-3.0..0.5));
            first
                .iter()
                .map(|g| {
                    let noise = random_vec(&mut rng, d, pert);
                    g.iter().zip(&noise).map(|(a, b)| a + b).collect()
                })
                .collect()
        };
        let r = first
            .iter()
            .chain(&second)
            .map(|g| norm2(g))
            .fold(0.0, f64::max);
        r_used = r_used.max(r);
        let diff = first
            .iter()
            .zip(&second)
            .map(|(a, b)| norm2(&sub(a, b)))
            .fold(0.0, f64::max);
        let la = solve_simplex_qp(&columns_gram(&first), &config)?;
        let lb = solve_simplex_qp(&columns_gram(&second), &config)?;
        let lhs = norm2(&sub(la.weights.as_slice(), lb.weights.as_slice()));
        let rhs = 4.0 * r * m as f64 / beta * diff;
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(LemmaCheckReport {
        trials: n_trials,
        max_ratio,
        r_used,
        pass: max_ratio <= 1.0 + 1e-6,
    })
}

/// Trace-variance of the client-averaged combined gradient at one `(C, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub n_clients: usize,
    pub batch_size: usize,
    pub variance: f64,
}

/// Estimates the variance of `(1/C) sum_c sum_j lambda_j g_j,c` at a fixed
/// policy for every `(C, B)` in `grid`. Critics sit at their exact TD fixed
/// points, `lambda` is uniform, and every client batch starts from a state
/// drawn from the stationary distribution, so draws are unbiased and
/// independent across clients and repetitions.
pub fn variance_speedup_check(
    momdp: &MomdpSpec,
    features: &FeatureMap,
    policy: &PolicyParams,
    grid: &[(usize, usize)],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if n_reps < 2 {
        return Err(FirmError::Config("need at least two repetitions".into()));
    }
    let m = momdp.n_objectives;
    let weights = (0..m)
        .map(|j| exact_td_fixpoint(momdp, policy, features, j))
        .collect::<Result<Vec<_>>>()?;
    let radius = weights.iter().map(|w| norm2(w)).fold(0.0, f64::max) + 1.0;
    let critic = CriticWeights { weights, radius };
    let stationary = stationary_distribution(momdp, policy)?;
    let lambda = SimplexWeights::uniform(m);
    grid.iter()
        .enumerate()
        .map(|(row, &(n_clients, batch_size))| {
            if n_clients == 0 || batch_size == 0 {
                return Err(FirmError::Config("grid entries must be positive".into()));
            }
            let mut samples = Vec::with_capacity(n_reps);
            for rep in 0..n_reps {
                let mut total = vec![0.0; policy.dim()];
                for c in 0..n_clients {
                    let stream = ((row * n_reps + rep) * n_clients + c) as u64;
                    let mut rng = stream_rng(seed, stream);
                    let start = sample_index(&stationary, &mut rng);
                    let (gs, _) = objective_gradients(
                        policy, &critic, momdp, features, start, batch_size, &mut rng,
                    )?;
                    let combined = crate::mgda::combine(&gs, &lambda)?;
                    total.iter_mut().zip(&combined).for_each(|(t, x)| *t += x);
                }
                total.iter_mut().for_each(|t| *t /= n_clients as f64);
                samples.push(total);
            }
            let mean = mean_of(samples.iter().map(|s| s.as_slice())).unwrap_or_default();
            let variance = samples
                .iter()
                .map(|s| norm2(&sub(s, &mean)).powi(2))
                .sum::<f64>()
                / (n_reps - 1) as f64;
            Ok(VarianceRow {
                n_clients,
                batch_size,
                variance,
            })
        })
        .collect()
}

/// Minimum of `x^T G x` over the simplex on a uniform grid of the given
/// resolution, for `M` in `{1, 2, 3}`.
pub fn grid_minimum(q: &[Vec<f64>], resolution: f64) -> f64 {
    let quad = |x: &[f64]| -> f64 {
        q.iter()
            .zip(x)
            .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let n = (1.0 / resolution).round() as usize;
    match q.len() {
        1 => quad(&[1.0]),
        2 => (0..=n)
            .map(|k| {
                let l = k as f64 / n as f64;
                quad(&[l, 1.0 - l])
            })
            .fold(f64::INFINITY, f64::min),
        3 => {
            let mut best = f64::INFINITY;
            for a in 0..=n {
                for b in 0..=(n - a) {
                    let x = [a as f64 / n as f64, b as f64 / n as f64, (n - a - b) as f64 / n as f64];
                    best = best.min(quad(&x));
                }
            }
            best
        }
        _ => panic!("grid search supports at most three objectives"),
    }
}

/// Re-solves the unregularized problem from a given start; exposed for
/// cross-checks against [`pareto_stationarity`].
pub fn stationarity_from(columns: &[Vec<f64>], init: &SimplexWeights) -> Result<f64> {
    let g = columns_gram(columns);
    Ok(minimize_on_simplex(&g.entries, STATIONARITY_TOL, 100_000, init)?
        .objective
        .max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_random_momdp, one_hot_features};
    use crate::oracle::exact_policy_gradient;

    #[test]
    fn opposing_objectives_are_stationary() {
        let g = vec![1.0, -2.0, 0.5];
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!(pareto_stationarity(&[g, neg]).unwrap() < 1e-12);
    }

    #[test]
    fn single_objective_is_squared_norm() {
        let g = vec![3.0, 4.0];
        assert!((pareto_stationarity(&[g]).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn stationarity_matches_grid() {
        let mut rng = stream_rng(0, 0);
        for _ in 0..50 {
            let cols: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let s = pareto_stationarity(&cols).unwrap();
            let grid = grid_minimum(&columns_gram(&cols).entries, 1e-3);
            // a 1e-3 grid is off the true minimum by at most curvature * (5e-4)^2
            let curvature = norm2(&sub(&cols[0], &cols[1])).powi(2);
            let grid_err = curvature * 0.25e-6;
            assert!(s <= grid + 1e-12 && grid - s <= grid_err.max(1e-6), "{s} vs {grid}");
        }
    }

    #[test]
    fn stationarity_bounded_by_vertices() {
        let spec = build_random_momdp(4, 3, 3, 0.9, 1.0, 2).unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..20 {
            let theta = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let policy = PolicyParams::from_table(4, 3, theta).unwrap();
            let cols = exact_policy_gradient(&spec, &policy).unwrap();
            let s = pareto_stationarity(&cols).unwrap();
            let min_vertex = cols.iter().map(|c| norm2(c).powi(2)).fold(f64::INFINITY, f64::min);
            assert!(s >= 0.0 && s <= min_vertex + 1e-12);
        }
    }

    #[test]
    fn disagreement_cases() {
        let same = vec![SimplexWeights(vec![0.3, 0.7]); 4];
        assert_eq!(lambda_disagreement(&same), 0.0);
        let split = vec![SimplexWeights(vec![1.0, 0.0]), SimplexWeights(vec![0.0, 1.0])];
        assert!((lambda_disagreement(&split) - 1.0).abs() < 1e-15);
        let a = vec![
            SimplexWeights(vec![0.1, 0.9]),
            SimplexWeights(vec![0.6, 0.4]),
            SimplexWeights(vec![0.3, 0.7]),
        ];
        let mut b = a.clone();
        b.reverse();
        assert!((lambda_disagreement(&a) - lambda_disagreement(&b)).abs() < 1e-15);
        assert_eq!(lambda_disagreement(&a[..1]), 0.0);
    }

    #[test]
    fn drift_cases() {
        let p = PolicyParams::from_table(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(param_drift(&[&p, &p]), 0.0);
        let n = PolicyParams::from_table(1, 2, vec![-3.0, -4.0]).unwrap();
        assert!((param_drift(&[&p, &n]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_have_zero_ratio() {
        let report = lemma_stability_check(1, 3, 5, 0.1, 0).unwrap();
        assert_eq!(report.max_ratio, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn lemma_holds_small() {
        let report = lemma_stability_check(200, 2, 8, 0.1, 1).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.r_used > 0.0);
        assert!(lemma_stability_check(1, 2, 2, 0.0, 0).is_err());
    }

    #[test]
    fn variance_shrinks_with_batch() {
        let spec = build_random_momdp(3, 2, 2, 0.8, 1.0, 1).unwrap();
        let phi = one_hot_features(&spec);
        let policy = PolicyParams::zeros(3, 2);
        let rows =
            variance_speedup_check(&spec, &phi, &policy, &[(1, 4), (1, 16)], 200, 3).unwrap();
        assert!(rows[0].variance > rows[1].variance);
    }
}
