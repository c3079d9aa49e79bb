//! Per-objective mini-batch TD(0) critic with projection onto a ball.

use crate::actor::{sample_action, PolicyParams};
use crate::env::{step, FeatureMap, MomdpSpec, SimRng, TransitionSample};
use crate::error::{FirmError, Result};
use crate::linalg::norm2;

/// One weight vector per objective, all kept inside the ball of radius
/// `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticWeights {
    pub weights: Vec<Vec<f64>>,
    pub radius: f64,
}

impl CriticWeights {
    pub fn zeros(n_objectives: usize, dim: usize, radius: f64) -> Self {
        CriticWeights {
            weights: vec![vec![0.0; dim]; n_objectives],
            radius,
        }
    }

    pub fn within_ball(&self) -> bool {
        self.weights
            .iter()
            .all(|w| norm2(w) <= self.radius * (1.0 + 1e-12))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticSchedule {
    /// Outer iterations `N`.
    pub n_iters: usize,
    /// Transitions per iteration `D`.
    pub batch_size: usize,
    pub stepsize: f64,
}

impl Default for CriticSchedule {
    fn default() -> Self {
        CriticSchedule {
            n_iters: 50,
            batch_size: 8,
            stepsize: 0.1,
        }
    }
}

impl CriticSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FirmError::Config("critic batch size must be >= 1".into()));
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(FirmError::Config("critic stepsize must be > 0".into()));
        }
        Ok(())
    }
}

/// Default projection radius `max(2, sqrt(d)) * r_max / (1 - gamma)`; contains
/// every exact value vector under one-hot features.
pub fn default_radius(r_max: f64, gamma: f64, feature_dim: usize) -> f64 {
    (feature_dim as f64).sqrt().max(2.0) * r_max / (1.0 - gamma)
}

/// `delta = r_j + gamma * phi(s')^T w - phi(s)^T w`.
pub fn td_error(
    w: &[f64],
    features: &FeatureMap,
    sample: &TransitionSample,
    objective: usize,
    gamma: f64,
) -> f64 {
    sample.reward_vec[objective] + gamma * features.dot(sample.next_state, w)
        - features.dot(sample.state, w)
}

/// Euclidean projection onto `{w : ||w||_2 <= radius}`, in place. Vectors
/// within rounding of the sphere are left alone so the map is idempotent.
pub fn project_ball(w: &mut [f64], radius: f64) {
    let norm = norm2(w);
    if norm > radius * (1.0 + 4.0 * f64::EPSILON) {
        let scale = radius / norm;
        w.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Runs `N` iterations of mini-batch TD, each on `D` consecutive transitions
/// that continue the chain from where the previous batch stopped. Returns the
/// projected weights and the final chain state.
pub fn run_critic(
    momdp: &MomdpSpec,
    features: &FeatureMap,
    policy: &PolicyParams,
    initial: &CriticWeights,
    start_state: usize,
    schedule: &CriticSchedule,
    rng: &mut SimRng,
) -> Result<(CriticWeights, usize)> {
    schedule.validate()?;
    let mut critic = initial.clone();
    let mut state = start_state;
    let mut batch = Vec::with_capacity(schedule.batch_size);
    let scale = schedule.stepsize / schedule.batch_size as f64;
    for _ in 0..schedule.n_iters {
        batch.clear();
        for _ in 0..schedule.batch_size {
            let action = sample_action(policy, state, rng);
            let sample = step(momdp, state, action, rng)?;
            state = sample.next_state;
            batch.push(sample);
        }
        for (j, w) in critic.weights.iter_mut().enumerate() {
            let mut update = vec![0.0; w.len()];
            for sample in &batch {
                let delta = td_error(w, features, sample, j, momdp.gamma);
                for (u, p) in update.iter_mut().zip(features.phi(sample.state)) {
                    *u += delta * p;
                }
            }
            w.iter_mut().zip(&update).for_each(|(x, u)| *x += scale * u);
            project_ball(w, critic.radius);
        }
        debug_assert!(critic.within_ball());
    }
    Ok((critic, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_random_momdp, one_hot_features, stream_rng};
    use rand::Rng;

    fn sample(state: usize, next_state: usize, reward: f64) -> TransitionSample {
        TransitionSample {
            state,
            action: 0,
            next_state,
            reward_vec: vec![reward],
        }
    }

    #[test]
    fn td_error_zero_critic() {
        let spec = build_random_momdp(2, 1, 1, 0.9, 1.0, 0).unwrap();
        let phi = one_hot_features(&spec);
        assert_eq!(td_error(&[0.0, 0.0], &phi, &sample(0, 1, 1.0), 0, 0.9), 1.0);
    }

    #[test]
    fn td_error_self_loop_identity() {
        let spec = build_random_momdp(3, 1, 1, 0.9, 1.0, 0).unwrap();
        let phi = one_hot_features(&spec);
        let w = [0.3, -2.0, 4.0];
        for s in 0..3 {
            let d = td_error(&w, &phi, &sample(s, s, 0.0), 0, 0.75);
            assert!((d + 0.25 * w[s]).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_cases() {
        let mut inside = [0.0, 0.5];
        project_ball(&mut inside, 1.0);
        assert_eq!(inside, [0.0, 0.5]);
        let mut outside = [3.0, 4.0];
        project_ball(&mut outside, 1.0);
        assert!((outside[0] - 0.6).abs() < 1e-15 && (outside[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = stream_rng(0, 0);
        for _ in 0..1000 {
            let mut w: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let r = rng.gen_range(0.1..5.0);
            project_ball(&mut w, r);
            let once = w.clone();
            project_ball(&mut w, r);
            assert_eq!(w, once);
            assert!(norm2(&w) <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_iterations_is_noop() {
        let spec = build_random_momdp(3, 2, 2, 0.9, 1.0, 0).unwrap();
        let phi = one_hot_features(&spec);
        let policy = PolicyParams::zeros(3, 2);
        let mut init = CriticWeights::zeros(2, 3, 5.0);
        init.weights[0] = vec![1.0, 2.0, 3.0];
        let schedule = CriticSchedule {
            n_iters: 0,
            ..Default::default()
        };
        let mut rng = stream_rng(0, 0);
        let (out, end) = run_critic(&spec, &phi, &policy, &init, 2, &schedule, &mut rng).unwrap();
        assert_eq!(out, init);
        assert_eq!(end, 2);
    }

    #[test]
    fn single_state_converges_to_geometric_value() {
        let mut spec = build_random_momdp(1, 1, 1, 0.5, 1.0, 0).unwrap();
        spec.rewards[0][0][0] = 1.0;
        let phi = one_hot_features(&spec);
        let policy = PolicyParams::zeros(1, 1);
        let schedule = CriticSchedule {
            n_iters: 500,
            batch_size: 4,
            stepsize: 0.1,
        };
        let mut rng = stream_rng(0, 0);
        let init = CriticWeights::zeros(1, 1, 10.0);
        let (out, _) = run_critic(&spec, &phi, &policy, &init, 0, &schedule, &mut rng).unwrap();
        assert!((out.weights[0][0] - 2.0).abs() < 0.05, "{:?}", out.weights);
    }

    #[test]
    fn chain_continues_across_batches() {
        // N iterations of D transitions consume exactly N*D steps of the same
        // chain as a hand-rolled rollout on an identical stream.
        let spec = build_random_momdp(4, 2, 1, 0.9, 1.0, 3).unwrap();
        let phi = one_hot_features(&spec);
        let policy = PolicyParams::from_table(4, 2, vec![0.2, -0.1, 1.0, 0.0, -0.5, 0.5, 0.0, 0.3])
            .unwrap();
        let schedule = CriticSchedule {
            n_iters: 7,
            batch_size: 3,
            stepsize: 0.1,
        };
        let mut rng = stream_rng(12, 0);
        let init = CriticWeights::zeros(1, 4, 10.0);
        let (_, end) = run_critic(&spec, &phi, &policy, &init, 1, &schedule, &mut rng).unwrap();
        let mut manual = stream_rng(12, 0);
        let mut s = 1;
        for _ in 0..21 {
            let a = sample_action(&policy, s, &mut manual);
            s = step(&spec, s, a, &mut manual).unwrap().next_state;
        }
        assert_eq!(end, s);
        use rand::RngCore;
        assert_eq!(rng.next_u64(), manual.next_u64());
    }

    #[test]
    fn small_radius_binds() {
        let spec = build_random_momdp(3, 2, 2, 0.9, 1.0, 4).unwrap();
        let phi = one_hot_features(&spec);
        let policy = PolicyParams::zeros(3, 2);
        let init = CriticWeights::zeros(2, 3, 0.5);
        let mut rng = stream_rng(0, 0);
        let (out, _) = run_critic(
            &spec,
            &phi,
            &policy,
            &init,
            0,
            &CriticSchedule::default(),
            &mut rng,
        )
        .unwrap();
        assert!(out.within_ball());
        assert!(out.weights.iter().any(|w| (norm2(w) - 0.5).abs() < 1e-9));
    }
}
