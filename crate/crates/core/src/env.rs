//! Synthetic tabular multi-objective MDPs.
//!
//! A [`MomdpSpec`] carries a shared transition kernel, `M` deterministic reward
//! tables, a discount and an initial state distribution. Generated specs have
//! strictly positive transition rows, so every policy induces an irreducible,
//! aperiodic chain.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FirmError, Result};

/// Random stream used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Build an independent, reproducible stream. Clients share a seed and differ
/// by stream id.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_objectives: usize,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `rewards[j][s][a]`
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub r_max: f64,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
}

/// One observed transition `(s, a, s', r)` with a vector reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward_vec: Vec<f64>,
}

/// Linear feature map `phi(s)`, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub dim: usize,
    pub table: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn phi(&self, state: usize) -> &[f64] {
        &self.table[state]
    }

    pub fn dot(&self, state: usize, w: &[f64]) -> f64 {
        self.table[state].iter().zip(w).map(|(p, x)| p * x).sum()
    }

    /// Checks `||phi(s)||_2 <= 1` for every state.
    pub fn is_normalized(&self) -> bool {
        self.table
            .iter()
            .all(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + 1e-12)
    }
}

fn check_dims(n_states: usize, n_actions: usize, n_objectives: usize) -> Result<()> {
    if n_states == 0 || n_actions == 0 || n_objectives == 0 {
        return Err(FirmError::Config(format!(
            "dimensions must be positive (n_states={n_states}, n_actions={n_actions}, n_objectives={n_objectives})"
        )));
    }
    Ok(())
}

fn check_discount(gamma: f64, r_max: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(FirmError::Config(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(FirmError::Config(format!("r_max must be > 0, got {r_max}")));
    }
    Ok(())
}

fn random_kernel(n_states: usize, n_actions: usize, rng: &mut SimRng) -> Vec<Vec<Vec<f64>>> {
    (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let mut row: Vec<f64> =
                        (0..n_states).map(|_| rng.gen_range(0.05..=1.0)).collect();
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                    row
                })
                .collect()
        })
        .collect()
}

/// Random MOMDP with positive transitions, uniform rewards in `[0, r_max]` and a
/// uniform initial distribution. Deterministic in `seed`.
pub fn build_random_momdp(
    n_states: usize,
    n_actions: usize,
    n_objectives: usize,
    gamma: f64,
    r_max: f64,
    seed: u64,
) -> Result<MomdpSpec> {
    check_dims(n_states, n_actions, n_objectives)?;
    check_discount(gamma, r_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = random_kernel(n_states, n_actions, &mut rng);
    let rewards = (0..n_objectives)
        .map(|_| {
            (0..n_states)
                .map(|_| (0..n_actions).map(|_| rng.gen_range(0.0..=r_max)).collect())
                .collect()
        })
        .collect();
    Ok(MomdpSpec {
        n_states,
        n_actions,
        n_objectives,
        transition,
        rewards,
        r_max,
        gamma,
        initial_dist: vec![1.0 / n_states as f64; n_states],
    })
}

/// Two-objective MOMDP whose rewards are in direct conflict:
/// `r_2(s, a) = r_max - r_1(s, a)`, so any gain on one objective is a loss on
/// the other.
pub fn build_conflicting_momdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    seed: u64,
) -> Result<MomdpSpec> {
    let mut spec = build_random_momdp(n_states, n_actions, 2, gamma, r_max, seed)?;
    let first = spec.rewards[0].clone();
    spec.rewards[1] = first
        .iter()
        .map(|row| row.iter().map(|r| r_max - r).collect())
        .collect();
    Ok(spec)
}

/// MOMDP whose objectives share a common reward component: each table is
/// `(1 - noise) * base + noise * own`, with `base` and `own` uniform in
/// `[0, r_max]`. Small `noise` gives strongly correlated objectives.
pub fn build_correlated_momdp(
    n_states: usize,
    n_actions: usize,
    n_objectives: usize,
    gamma: f64,
    r_max: f64,
    noise: f64,
    seed: u64,
) -> Result<MomdpSpec> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(FirmError::Config(format!(
            "reward noise must lie in [0, 1], got {noise}"
        )));
    }
    let mut spec = build_random_momdp(n_states, n_actions, n_objectives + 1, gamma, r_max, seed)?;
    let base = spec.rewards.pop().expect("at least one extra table");
    for table in spec.rewards.iter_mut() {
        for (row, base_row) in table.iter_mut().zip(&base) {
            for (r, b) in row.iter_mut().zip(base_row) {
                *r = ((1.0 - noise) * b + noise * *r).clamp(0.0, r_max);
            }
        }
    }
    spec.n_objectives = n_objectives;
    Ok(spec)
}

impl MomdpSpec {
    pub fn reward(&self, objective: usize, state: usize, action: usize) -> f64 {
        self.rewards[objective][state][action]
    }

    /// Transition matrix of the chain induced by `policy` (row-stochastic
    /// `|S| x |A|` table of action probabilities).
    pub fn induced_chain(&self, policy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_states;
        (0..n)
            .map(|s| {
                let mut row = vec![0.0; n];
                for (a, &pa) in policy[s].iter().enumerate() {
                    for (next, p) in row.iter_mut().zip(&self.transition[s][a]) {
                        *next += pa * p;
                    }
                }
                row
            })
            .collect()
    }

    /// Expected one-step reward `r_pi(s) = sum_a pi(a|s) r_j(s, a)`.
    pub fn induced_reward(&self, policy: &[Vec<f64>], objective: usize) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                policy[s]
                    .iter()
                    .zip(&self.rewards[objective][s])
                    .map(|(p, r)| p * r)
                    .sum()
            })
            .collect()
    }

    /// Checks every structural invariant, including irreducibility and
    /// aperiodicity of the uniform-policy chain.
    pub fn validate(&self) -> Result<()> {
        check_dims(self.n_states, self.n_actions, self.n_objectives)?;
        check_discount(self.gamma, self.r_max)?;
        let (ns, na) = (self.n_states, self.n_actions);
        if self.transition.len() != ns {
            return Err(FirmError::Shape {
                expected: ns,
                actual: self.transition.len(),
            });
        }
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != na {
                return Err(FirmError::Shape {
                    expected: na,
                    actual: per_action.len(),
                });
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(FirmError::Shape {
                        expected: ns,
                        actual: row.len(),
                    });
                }
                let total: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > ROW_TOL {
                    return Err(FirmError::Config(format!(
                        "transition row ({s}, {a}) is not a probability vector"
                    )));
                }
            }
        }
        if self.rewards.len() != self.n_objectives {
            return Err(FirmError::Shape {
                expected: self.n_objectives,
                actual: self.rewards.len(),
            });
        }
        for table in &self.rewards {
            if table.len() != ns || table.iter().any(|row| row.len() != na) {
                return Err(FirmError::Config("reward table has the wrong shape".into()));
            }
            if table
                .iter()
                .flatten()
                .any(|r| !(0.0..=self.r_max).contains(r))
            {
                return Err(FirmError::Config(format!(
                    "rewards must lie in [0, {}]",
                    self.r_max
                )));
            }
        }
        if self.initial_dist.len() != ns
            || self.initial_dist.iter().any(|p| *p < 0.0)
            || (self.initial_dist.iter().sum::<f64>() - 1.0).abs() > ROW_TOL
        {
            return Err(FirmError::Config(
                "initial distribution is not a probability vector".into(),
            ));
        }
        if !self.uniform_chain_is_primitive() {
            return Err(FirmError::Config(
                "uniform-policy chain is not irreducible and aperiodic".into(),
            ));
        }
        Ok(())
    }

    /// True when some power of the uniform-policy chain (up to Wielandt's bound
    /// `(n-1)^2 + 1`) is entrywise positive.
    pub fn uniform_chain_is_primitive(&self) -> bool {
        let n = self.n_states;
        let uniform = vec![vec![1.0 / self.n_actions as f64; self.n_actions]; n];
        let chain = self.induced_chain(&uniform);
        let support: Vec<Vec<bool>> = chain
            .iter()
            .map(|row| row.iter().map(|p| *p > 0.0).collect())
            .collect();
        let mut power = support.clone();
        let bound = (n - 1) * (n - 1) + 1;
        for _ in 0..bound {
            if power.iter().flatten().all(|b| *b) {
                return true;
            }
            power = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).any(|k| power[i][k] && support[k][j]))
                        .collect()
                })
                .collect();
        }
        power.iter().flatten().all(|b| *b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| FirmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FirmError::io(path, e))?;
        let spec: MomdpSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Inverse-CDF draw from a probability vector using one uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Executes `action` in `state`: samples `s'` from `P[state][action]` and
/// returns the deterministic reward vector.
pub fn step(
    momdp: &MomdpSpec,
    state: usize,
    action: usize,
    rng: &mut SimRng,
) -> Result<TransitionSample> {
    if state >= momdp.n_states {
        return Err(FirmError::Index {
            what: "state",
            index: state,
            size: momdp.n_states,
        });
    }
    if action >= momdp.n_actions {
        return Err(FirmError::Index {
            what: "action",
            index: action,
            size: momdp.n_actions,
        });
    }
    let next_state = sample_index(&momdp.transition[state][action], rng);
    let reward_vec = (0..momdp.n_objectives)
        .map(|j| momdp.rewards[j][state][action])
        .collect();
    Ok(TransitionSample {
        state,
        action,
        next_state,
        reward_vec,
    })
}

/// One-hot features: `phi(s) = e_s`, so linear value functions are exact.
pub fn one_hot_features(momdp: &MomdpSpec) -> FeatureMap {
    let n = momdp.n_states;
    let table = (0..n)
        .map(|s| {
            let mut row = vec![0.0; n];
            row[s] = 1.0;
            row
        })
        .collect();
    FeatureMap { dim: n, table }
}
