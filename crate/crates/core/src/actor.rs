//! Tabular softmax actor and the per-objective TD policy-gradient estimator.

use serde::{Deserialize, Serialize};

use crate::critic::{td_error, CriticWeights};
use crate::env::{sample_index, step, FeatureMap, MomdpSpec, SimRng};
use crate::error::{FirmError, Result};

/// Bound on the tabular-softmax score norm, `||psi||_2 <= sqrt(2)`.
pub const SCORE_BOUND: f64 = std::f64::consts::SQRT_2;

/// Softmax policy parameters, one logit per `(state, action)` pair, stored
/// row-major. This is the unit of federated averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        PolicyParams {
            n_states,
            n_actions,
            theta: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_table(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_states * n_actions {
            return Err(FirmError::Shape {
                expected: n_states * n_actions,
                actual: theta.len(),
            });
        }
        Ok(PolicyParams {
            n_states,
            n_actions,
            theta,
        })
    }

    /// Flattened dimension `|S| * |A|`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn logits(&self, state: usize) -> &[f64] {
        &self.theta[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn logits_mut(&mut self, state: usize) -> &mut [f64] {
        let na = self.n_actions;
        &mut self.theta[state * na..(state + 1) * na]
    }

    /// `pi(.|s)`, computed on max-shifted logits.
    pub fn probs(&self, state: usize) -> Vec<f64> {
        let logits = self.logits(state);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// Full `|S| x |A|` action-probability table.
    pub fn table(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.probs(s)).collect()
    }

    pub fn flat_index(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    pub fn matches(&self, momdp: &MomdpSpec) -> bool {
        self.n_states == momdp.n_states && self.n_actions == momdp.n_actions
    }
}

/// `M` per-objective stochastic gradients from one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Vec<f64>>,
    pub batch_size: usize,
}

impl GradientSet {
    pub fn n_objectives(&self) -> usize {
        self.grads.len()
    }

    pub fn dim(&self) -> usize {
        self.grads.first().map_or(0, Vec::len)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.grads.iter().map(|g| crate::linalg::norm2(g)).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }
}

/// `R = C_psi * (r_max + (1 + gamma) * R_w)`, the uniform bound on every
/// per-objective stochastic gradient.
pub fn gradient_bound(r_max: f64, gamma: f64, radius: f64) -> f64 {
    SCORE_BOUND * (r_max + (1.0 + gamma) * radius)
}

pub fn sample_action(policy: &PolicyParams, state: usize, rng: &mut SimRng) -> usize {
    sample_index(&policy.probs(state), rng)
}

/// `grad_theta log pi(a|s)`: `1 - pi(a|s)` at `(s, a)`, `-pi(a'|s)` at the
/// other actions of `s`, zero elsewhere.
pub fn score(policy: &PolicyParams, state: usize, action: usize) -> Vec<f64> {
    let mut psi = vec![0.0; policy.dim()];
    add_score(policy, state, action, 1.0, &mut psi);
    psi
}

/// Accumulates `scale * psi(s, a)` into `out` touching only the row of `s`.
pub(crate) fn add_score(
    policy: &PolicyParams,
    state: usize,
    action: usize,
    scale: f64,
    out: &mut [f64],
) {
    let probs = policy.probs(state);
    let base = state * policy.n_actions;
    for (b, p) in probs.iter().enumerate() {
        let indicator = if b == action { 1.0 } else { 0.0 };
        out[base + b] += scale * (indicator - p);
    }
}

/// Collects `batch_size` consecutive transitions continuing from
/// `start_state` and forms `g_j = (1/B) sum_l delta_j,l * psi(s_l, a_l)` for
/// every objective from the shared trajectory.
pub fn objective_gradients(
    policy: &PolicyParams,
    critic: &CriticWeights,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    start_state: usize,
    batch_size: usize,
    rng: &mut SimRng,
) -> Result<(GradientSet, usize)> {
    if batch_size == 0 {
        return Err(FirmError::Config("batch size must be >= 1".into()));
    }
    let m = momdp.n_objectives;
    let mut grads = vec![vec![0.0; policy.dim()]; m];
    let mut state = start_state;
    let scale = 1.0 / batch_size as f64;
    for _ in 0..batch_size {
        let action = sample_action(policy, state, rng);
        let sample = step(momdp, state, action, rng)?;
        for (j, g) in grads.iter_mut().enumerate() {
            let delta = td_error(&critic.weights[j], features, &sample, j, momdp.gamma);
            add_score(policy, state, action, delta * scale, g);
        }
        state = sample.next_state;
    }
    Ok((GradientSet { grads, batch_size }, state))
}
