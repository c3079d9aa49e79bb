//! Regularized multiple-gradient descent: resolves `M` conflicting objective
//! gradients into one convex combination.
//!
//! The weights solve
//!
//! ```text
//! min_{lambda in simplex}  lambda^T Q lambda,
//! Q = G + (beta/2) I          (beta mode)
//! Q = G + Diag(1/p)           (preference mode)
//! ```
//!
//! where `G` is the (optionally trace-normalized) Gram matrix of the
//! gradients. The solver is projected gradient descent with an exact
//! Euclidean simplex projection, plus an active-set polish that snaps the
//! iterate to the exact minimizer once the support is identified.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::actor::GradientSet;
use crate::error::{FirmError, Result};
use crate::linalg::{dot, solve};

/// Traces at or below this are treated as an all-zero Gram matrix.
pub const TRACE_EPS: f64 = 1e-12;

const POLISH_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: Vec<Vec<f64>>,
    pub normalized: bool,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[i][i]).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues(&self.entries)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = self.dim();
        (0..m).all(|i| (0..m).all(|j| (self.entries[i][j] - self.entries[j][i]).abs() <= tol))
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.eigenvalues().iter().all(|e| *e >= -tol)
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights(pub Vec<f64>);

impl SimplexWeights {
    pub fn uniform(m: usize) -> Self {
        SimplexWeights(vec![1.0 / m as f64; m])
    }

    pub fn vertex(m: usize, j: usize) -> Self {
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        SimplexWeights(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.0.iter().all(|x| *x >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Regularizer {
    /// Uniform ridge `(beta/2) I`.
    Beta(f64),
    /// Diagonal `Diag(1/p)` with positive preferences `p`.
    Preference(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgdaConfig {
    pub regularizer: Regularizer,
    pub normalize_gram: bool,
    /// KKT residual target, relative to `1 + ||Q||`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for MgdaConfig {
    fn default() -> Self {
        MgdaConfig {
            regularizer: Regularizer::Beta(0.01),
            normalize_gram: true,
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

impl MgdaConfig {
    pub fn beta(beta: f64) -> Self {
        MgdaConfig {
            regularizer: Regularizer::Beta(beta),
            ..Default::default()
        }
    }

    /// Unregularized, unnormalized problem: the Pareto-stationarity measure.
    pub fn plain(tol: f64) -> Self {
        MgdaConfig {
            regularizer: Regularizer::Beta(0.0),
            normalize_gram: false,
            tol,
            max_iters: 100_000,
        }
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize_gram = on;
        self
    }

    pub fn validate(&self, m: Option<usize>) -> Result<()> {
        match &self.regularizer {
            Regularizer::Beta(beta) => {
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(FirmError::Config("beta must be ≥ 0".into()));
                }
            }
            Regularizer::Preference(p) => {
                if p.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(FirmError::Config(
                        "preference weights must be positive".into(),
                    ));
                }
                if let Some(m) = m {
                    if p.len() != m {
                        return Err(FirmError::Shape {
                            expected: m,
                            actual: p.len(),
                        });
                    }
                }
            }
        }
        if !(self.tol > 0.0) {
            return Err(FirmError::Config("solver tolerance must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(FirmError::Config("solver max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solver output. `converged == false` means `weights` is the best iterate
/// found within `max_iters`, with its residual reported.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: SimplexWeights,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mat = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    SymmetricEigen::new(mat).eigenvalues.iter().copied().collect()
}

/// Pairwise inner products `G[i][j] = <g_i, g_j>`.
pub fn gram(gradients: &GradientSet) -> GramMatrix {
    let m = gradients.n_objectives();
    let mut entries = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = dot(&gradients.grads[i], &gradients.grads[j]);
            entries[i][j] = v;
            entries[j][i] = v;
        }
    }
    GramMatrix {
        entries,
        normalized: false,
    }
}

/// `G * M / tr(G)`; a no-op when the trace is numerically zero.
pub fn normalize_trace(g: &GramMatrix) -> GramMatrix {
    let m = g.dim() as f64;
    let trace = g.trace();
    if trace <= TRACE_EPS {
        return GramMatrix {
            entries: g.entries.clone(),
            normalized: true,
        };
    }
    let scale = m / trace;
    GramMatrix {
        entries: g
            .entries
            .iter()
            .map(|row| row.iter().map(|x| x * scale).collect())
            .collect(),
        normalized: true,
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// The quadratic form `Q` the solver minimizes.
pub fn regularized_matrix(g: &GramMatrix, config: &MgdaConfig) -> Result<Vec<Vec<f64>>> {
    config.validate(Some(g.dim()))?;
    if g.entries.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FirmError::NonFinite("Gram matrix"));
    }
    let base = if config.normalize_gram && !g.normalized {
        normalize_trace(g)
    } else {
        g.clone()
    };
    let mut q = base.entries;
    for (i, row) in q.iter_mut().enumerate() {
        row[i] += match &config.regularizer {
            Regularizer::Beta(beta) => beta / 2.0,
            Regularizer::Preference(p) => 1.0 / p[i],
        };
    }
    Ok(q)
}

fn mat_vec(q: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    q.iter().map(|row| dot(row, x)).collect()
}

fn quad(q: &[Vec<f64>], x: &[f64]) -> f64 {
    dot(x, &mat_vec(q, x))
}

/// KKT residual of `min x^T Q x` over the simplex at `x`: the largest gap
/// between a supported coordinate's partial derivative and the smallest
/// partial derivative, relative to `1 + ||Q||`.
pub fn kkt_residual(q: &[Vec<f64>], x: &[f64], support_tol: f64) -> f64 {
    let grad: Vec<f64> = mat_vec(q, x).iter().map(|v| 2.0 * v).collect();
    let gmin = grad.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = grad
        .iter()
        .zip(x)
        .filter(|(_, xi)| **xi > support_tol)
        .map(|(g, _)| g - gmin)
        .fold(0.0, f64::max);
    gap / (1.0 + op_norm(q))
}

fn op_norm(q: &[Vec<f64>]) -> f64 {
    eigenvalues(q).iter().map(|e| e.abs()).fold(0.0, f64::max)
}

/// Minimizer restricted to the support of `x`, when it stays strictly
/// positive there.
fn polish(q: &[Vec<f64>], x: &[f64], support_tol: f64) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > support_tol).collect();
    if support.is_empty() {
        return None;
    }
    let sub: Vec<Vec<f64>> = support
        .iter()
        .map(|&i| support.iter().map(|&j| q[i][j]).collect())
        .collect();
    let y = solve(&sub, &vec![1.0; support.len()], "active set").ok()?;
    let total: f64 = y.iter().sum();
    if !(total > 0.0) || y.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let mut out = vec![0.0; x.len()];
    for (k, &i) in support.iter().enumerate() {
        out[i] = y[k] / total;
    }
    Some(out)
}

/// Solves the simplex QP from the uniform starting point.
pub fn solve_simplex_qp(g: &GramMatrix, config: &MgdaConfig) -> Result<QpSolution> {
    let m = g.dim();
    solve_simplex_qp_from(g, config, &SimplexWeights::uniform(m))
}

pub fn solve_simplex_qp_from(
    g: &GramMatrix,
    config: &MgdaConfig,
    init: &SimplexWeights,
) -> Result<QpSolution> {
    let q = regularized_matrix(g, config)?;
    minimize_on_simplex(&q, config.tol, config.max_iters, init)
}

/// Projected gradient descent on `x^T Q x` over the simplex with stepsize
/// `1 / (2 ||Q||)`.
pub fn minimize_on_simplex(
    q: &[Vec<f64>],
    tol: f64,
    max_iters: usize,
    init: &SimplexWeights,
) -> Result<QpSolution> {
    let m = q.len();
    if m == 0 {
        return Err(FirmError::Shape {
            expected: 1,
            actual: 0,
        });
    }
    if init.len() != m {
        return Err(FirmError::Shape {
            expected: m,
            actual: init.len(),
        });
    }
    if q.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FirmError::NonFinite("quadratic form"));
    }
    let support_tol = tol;
    let finish = |x: Vec<f64>, iterations: usize| {
        let kkt = kkt_residual(q, &x, support_tol);
        QpSolution {
            objective: quad(q, &x),
            kkt_residual: kkt,
            converged: kkt <= tol,
            weights: SimplexWeights(x),
            iterations,
        }
    };
    if m == 1 {
        return Ok(finish(vec![1.0], 0));
    }
    let norm = op_norm(q);
    let mut x = project_simplex(init.as_slice());
    if norm == 0.0 {
        return Ok(finish(x, 0));
    }
    let step = 1.0 / (2.0 * norm);
    let mut best = finish(x.clone(), 0);
    for it in 1..=max_iters {
        let grad = mat_vec(q, &x);
        let trial: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(xi, gi)| xi - step * 2.0 * gi)
            .collect();
        x = project_simplex(&trial);
        let current = finish(x.clone(), it);
        let check = current.converged || it % POLISH_EVERY == 0;
        if current.kkt_residual < best.kkt_residual {
            best = current;
        }
        if check {
            if let Some(p) = polish(q, &x, support_tol) {
                let polished = finish(p, it);
                if polished.kkt_residual <= best.kkt_residual
                    && polished.objective <= best.objective + tol
                {
                    best = polished;
                }
            }
        }
        if best.converged {
            return Ok(best);
        }
    }
    Ok(best)
}

/// Gram assembly, optional normalization and the QP in one call.
pub fn resolve(gradients: &GradientSet, config: &MgdaConfig) -> Result<QpSolution> {
    if gradients.grads.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FirmError::NonFinite("gradient set"));
    }
    solve_simplex_qp(&gram(gradients), config)
}

/// `(1 - eta) prev + eta star`, renormalized onto the simplex.
pub fn smooth_lambda(
    prev: &SimplexWeights,
    star: &SimplexWeights,
    eta: f64,
) -> Result<SimplexWeights> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(FirmError::Config(format!(
            "smoothing rate must lie in (0, 1], got {eta}"
        )));
    }
    if prev.len() != star.len() {
        return Err(FirmError::Shape {
            expected: prev.len(),
            actual: star.len(),
        });
    }
    let mut out: Vec<f64> = prev
        .0
        .iter()
        .zip(&star.0)
        .map(|(p, s)| (1.0 - eta) * p + eta * s)
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(SimplexWeights(out))
}

/// `g = sum_j lambda_j g_j`.
pub fn combine(gradients: &GradientSet, lambda: &SimplexWeights) -> Result<Vec<f64>> {
    if lambda.len() != gradients.n_objectives() {
        return Err(FirmError::Shape {
            expected: gradients.n_objectives(),
            actual: lambda.len(),
        });
    }
    let mut out = vec![0.0; gradients.dim()];
    for (g, l) in gradients.grads.iter().zip(&lambda.0) {
        out.iter_mut().zip(g).for_each(|(o, x)| *o += l * x);
    }
    Ok(out)
}
