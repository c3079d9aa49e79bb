//! The federated protocol: per-client critic/actor/MGDA local loops, FedAvg
//! aggregation of policy parameters, the server-side MGDA baseline and a
//! single-learner centralized mode.
//!
//! Clients own independent random streams (`stream_rng(seed, client_id)`),
//! so a run is reproducible regardless of whether clients execute
//! sequentially or on the rayon pool.
//!
//! Policy updates are gradient *ascent* on the returns: `theta += alpha * g`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor::{gradient_bound, objective_gradients, GradientSet, PolicyParams};
use crate::critic::{default_radius, run_critic, CriticSchedule, CriticWeights};
use crate::env::{sample_index, stream_rng, FeatureMap, MomdpSpec, SimRng};
use crate::error::{FirmError, Result};
use crate::linalg::mean_of;
use crate::metrics::{
    lambda_disagreement, lambda_disagreement_l2, param_drift, pareto_stationarity,
    weighted_stationarity,
};
use crate::mgda::{combine, resolve, smooth_lambda, MgdaConfig, QpSolution, SimplexWeights};
use crate::oracle::{exact_policy_gradient, exact_return};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every client solves its own regularized MGDA problem.
    Firm,
    /// Clients upload all `M` gradients each step; the server solves one
    /// MGDA problem on their per-objective average and broadcasts `lambda`.
    FedcmooA,
    /// A single learner, no aggregation.
    Centralized,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Firm => "firm",
            Mode::FedcmooA => "fedcmoo_a",
            Mode::Centralized => "centralized",
        })
    }
}

impl FromStr for Mode {
    type Err = FirmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "firm" => Ok(Mode::Firm),
            "fedcmoo_a" => Ok(Mode::FedcmooA),
            "centralized" => Ok(Mode::Centralized),
            other => Err(FirmError::Config(format!(
                "unknown mode {other:?} (expected firm, fedcmoo_a or centralized)"
            ))),
        }
    }
}

/// Step size of the `lambda` smoothing at global step `t` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EtaSchedule {
    /// `eta_t = 1 / t`
    Reciprocal,
    Constant(f64),
}

impl EtaSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        match self {
            EtaSchedule::Reciprocal => 1.0 / t.max(1) as f64,
            EtaSchedule::Constant(eta) => *eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub n_clients: usize,
    pub n_rounds: usize,
    pub local_steps: usize,
    pub actor_lr: f64,
    pub critic: CriticSchedule,
    /// Critic ball radius; `None` picks [`default_radius`].
    pub critic_radius: Option<f64>,
    /// Refresh the critic every this many local steps.
    pub critic_every: usize,
    pub batch_size: usize,
    pub mgda: MgdaConfig,
    pub eta: EtaSchedule,
    pub mode: Mode,
    pub seed: u64,
    /// Run clients on the rayon pool.
    pub parallel: bool,
    /// Evaluate stationarity at every client model after every step instead
    /// of once per round at the averaged model.
    pub per_step_stationarity: bool,
    /// Start client `c` in state `c mod |S|` instead of sampling `rho0`.
    pub heterogeneous_init: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_clients: 8,
            n_rounds: 16,
            local_steps: 4,
            actor_lr: 0.05,
            critic: CriticSchedule::default(),
            critic_radius: None,
            critic_every: 1,
            batch_size: 16,
            mgda: MgdaConfig::default(),
            eta: EtaSchedule::Reciprocal,
            mode: Mode::Firm,
            seed: 0,
            parallel: false,
            per_step_stationarity: false,
            heterogeneous_init: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(FirmError::Config("n_clients must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(FirmError::Config("batch_size must be >= 1".into()));
        }
        if self.critic_every == 0 {
            return Err(FirmError::Config("critic_every must be >= 1".into()));
        }
        if !(self.actor_lr >= 0.0 && self.actor_lr.is_finite()) {
            return Err(FirmError::Config("actor_lr must be ≥ 0".into()));
        }
        if let Some(r) = self.critic_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(FirmError::Config("critic_radius must be > 0".into()));
            }
        }
        if let EtaSchedule::Constant(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(FirmError::Config("eta must lie in (0, 1]".into()));
            }
        }
        self.critic.validate()?;
        self.mgda.validate(None)
    }

    /// Number of clients actually simulated.
    pub fn effective_clients(&self) -> usize {
        match self.mode {
            Mode::Centralized => 1,
            _ => self.n_clients,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub policy: PolicyParams,
    pub critic: CriticWeights,
    /// Smoothed MGDA weights; persist across rounds.
    pub lambda: SimplexWeights,
    pub chain_state: usize,
    pub rng: SimRng,
    pub local_step_count: usize,
}

impl ClientState {
    pub fn new(
        id: usize,
        momdp: &MomdpSpec,
        features: &FeatureMap,
        config: &ProtocolConfig,
        policy: PolicyParams,
    ) -> Self {
        let mut rng = stream_rng(config.seed, id as u64);
        let chain_state = if config.heterogeneous_init {
            id % momdp.n_states
        } else {
            sample_index(&momdp.initial_dist, &mut rng)
        };
        let radius = config
            .critic_radius
            .unwrap_or_else(|| default_radius(momdp.r_max, momdp.gamma, features.dim));
        ClientState {
            id,
            policy,
            critic: CriticWeights::zeros(momdp.n_objectives, features.dim, radius),
            lambda: SimplexWeights::uniform(momdp.n_objectives),
            chain_state,
            rng,
            local_step_count: 0,
        }
    }
}

/// What one local step produced, before cross-client metrics are attached.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub global_step: usize,
    pub client: usize,
    pub policy: PolicyParams,
    pub lambda: SimplexWeights,
    pub lambda_star: SimplexWeights,
    pub solver_converged: bool,
    pub max_grad_norm: f64,
}

/// Critic refresh (per schedule) followed by one fresh actor batch.
pub fn estimate_gradients(
    client: &mut ClientState,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    config: &ProtocolConfig,
) -> Result<GradientSet> {
    if client.local_step_count.is_multiple_of(config.critic_every) {
        let (critic, state) = run_critic(
            momdp,
            features,
            &client.policy,
            &client.critic,
            client.chain_state,
            &config.critic,
            &mut client.rng,
        )?;
        client.critic = critic;
        client.chain_state = state;
    }
    let (grads, state) = objective_gradients(
        &client.policy,
        &client.critic,
        momdp,
        features,
        client.chain_state,
        config.batch_size,
        &mut client.rng,
    )?;
    client.chain_state = state;
    Ok(grads)
}

fn ascend(client: &mut ClientState, direction: &[f64], lr: f64) {
    client
        .policy
        .theta
        .iter_mut()
        .zip(direction)
        .for_each(|(t, g)| *t += lr * g);
    client.local_step_count += 1;
}

fn outcome(
    client: &ClientState,
    global_step: usize,
    star: &QpSolution,
    grads: &GradientSet,
) -> StepOutcome {
    StepOutcome {
        global_step,
        client: client.id,
        policy: client.policy.clone(),
        lambda: client.lambda.clone(),
        lambda_star: star.weights.clone(),
        solver_converged: star.converged,
        max_grad_norm: grads.max_norm(),
    }
}

/// One local step: gradients, local MGDA solve, smoothing with `eta_t`,
/// combination and an ascent step on the local policy.
pub fn local_step(
    client: &mut ClientState,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    config: &ProtocolConfig,
    global_step: usize,
) -> Result<StepOutcome> {
    let grads = estimate_gradients(client, momdp, features, config)?;
    let star = resolve(&grads, &config.mgda)?;
    client.lambda = smooth_lambda(&client.lambda, &star.weights, config.eta.eta(global_step))?;
    let direction = combine(&grads, &client.lambda)?;
    ascend(client, &direction, config.actor_lr);
    Ok(outcome(client, global_step, &star, &grads))
}

/// Single-objective actor-critic step with no MGDA machinery. With `M = 1`
/// this must coincide with [`local_step`].
pub fn actor_critic_step(
    client: &mut ClientState,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    config: &ProtocolConfig,
) -> Result<()> {
    let grads = estimate_gradients(client, momdp, features, config)?;
    let direction = grads.grads[0].clone();
    ascend(client, &direction, config.actor_lr);
    Ok(())
}

/// Elementwise mean of the client policies.
pub fn fedavg(policies: &[&PolicyParams]) -> Result<PolicyParams> {
    let first = policies
        .first()
        .ok_or_else(|| FirmError::Config("cannot average zero policies".into()))?;
    for p in policies {
        if p.theta.len() != first.theta.len() || p.n_actions != first.n_actions {
            return Err(FirmError::Shape {
                expected: first.theta.len(),
                actual: p.theta.len(),
            });
        }
    }
    let theta = mean_of(policies.iter().map(|p| p.theta.as_slice())).expect("non-empty");
    Ok(PolicyParams {
        n_states: first.n_states,
        n_actions: first.n_actions,
        theta,
    })
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_policy: PolicyParams,
    pub round_index: usize,
    pub clients: Vec<ClientState>,
    /// Broadcast weights of the server-side baseline.
    pub server_lambda: SimplexWeights,
}

impl ServerState {
    pub fn new(momdp: &MomdpSpec, features: &FeatureMap, config: &ProtocolConfig) -> Self {
        let policy = PolicyParams::zeros(momdp.n_states, momdp.n_actions);
        let clients = (0..config.effective_clients())
            .map(|c| ClientState::new(c, momdp, features, config, policy.clone()))
            .collect();
        ServerState {
            global_policy: policy,
            round_index: 0,
            clients,
            server_lambda: SimplexWeights::uniform(momdp.n_objectives),
        }
    }

    pub fn mean_lambda(&self) -> SimplexWeights {
        SimplexWeights(
            mean_of(self.clients.iter().map(|c| c.lambda.as_slice())).unwrap_or_default(),
        )
    }
}

/// Per-step, per-client metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEntry {
    pub global_step: usize,
    pub client: usize,
    /// Exact returns of the client's model after the step.
    pub returns: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub stationarity: f64,
    pub lambda_disagreement: f64,
    pub lambda_disagreement_l2: f64,
    pub param_drift: f64,
    pub solver_converged: bool,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub steps: Vec<StepEntry>,
    /// `min_lambda ||grad J(theta_bar) lambda||^2` at the aggregated model.
    pub stationarity: f64,
    /// `||grad J(theta_bar) lambda_bar||^2` with the clients' mean weights.
    pub weighted_stationarity: f64,
    pub mean_lambda: Vec<f64>,
    pub global_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: Mode,
    pub n_objectives: usize,
    pub rounds: Vec<RoundRecord>,
    pub final_policy: PolicyParams,
    pub final_lambda: Vec<f64>,
    /// `R = C_psi (r_max + (1 + gamma) R_w)`.
    pub gradient_bound: f64,
    pub max_grad_norm: f64,
    pub bound_violations: usize,
}

fn for_each_client<F>(clients: &mut [ClientState], parallel: bool, f: F) -> Result<Vec<Vec<StepOutcome>>>
where
    F: Fn(&mut ClientState) -> Result<Vec<StepOutcome>> + Sync + Send,
{
    if parallel {
        clients.par_iter_mut().map(f).collect()
    } else {
        clients.iter_mut().map(f).collect()
    }
}

fn local_loops(
    server: &mut ServerState,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    config: &ProtocolConfig,
) -> Result<Vec<Vec<StepOutcome>>> {
    let first_step = server.round_index * config.local_steps + 1;
    let round = server.round_index;
    for_each_client(&mut server.clients, config.parallel, |client| {
        (0..config.local_steps)
            .map(|k| {
                local_step(client, momdp, features, config, first_step + k).map_err(|e| {
                    FirmError::Context {
                        round,
                        step: first_step + k,
                        source: Box::new(e),
                    }
                })
            })
            .collect()
    })
}

/// Server-side baseline: every step is a synchronization barrier at which the
/// server averages each objective's gradient over clients, solves one MGDA
/// problem and broadcasts the smoothed weights.
pub fn fedcmoo_a_step(
    server: &mut ServerState,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    config: &ProtocolConfig,
    global_step: usize,
) -> Result<Vec<StepOutcome>> {
    let grads: Vec<GradientSet> = if config.parallel {
        server
            .clients
            .par_iter_mut()
            .map(|c| estimate_gradients(c, momdp, features, config))
            .collect::<Result<_>>()?
    } else {
        server
            .clients
            .iter_mut()
            .map(|c| estimate_gradients(c, momdp, features, config))
            .collect::<Result<_>>()?
    };
    let averaged = average_gradient_sets(&grads)?;
    let star = resolve(&averaged, &config.mgda)?;
    server.server_lambda = smooth_lambda(
        &server.server_lambda,
        &star.weights,
        config.eta.eta(global_step),
    )?;
    server
        .clients
        .iter_mut()
        .zip(&grads)
        .map(|(client, g)| {
            client.lambda = server.server_lambda.clone();
            let direction = combine(g, &client.lambda)?;
            ascend(client, &direction, config.actor_lr);
            Ok(outcome(client, global_step, &star, g))
        })
        .collect()
}

/// Per-objective mean of client gradient sets.
pub fn average_gradient_sets(sets: &[GradientSet]) -> Result<GradientSet> {
    let first = sets
        .first()
        .ok_or_else(|| FirmError::Config("no gradient sets to average".into()))?;
    let m = first.n_objectives();
    let grads = (0..m)
        .map(|j| {
            mean_of(sets.iter().map(|s| s.grads[j].as_slice())).expect("non-empty")
        })
        .collect();
    Ok(GradientSet {
        grads,
        batch_size: sets.iter().map(|s| s.batch_size).sum(),
    })
}

/// Broadcast, `K` local steps per client, then FedAvg. Centralized mode
/// skips broadcast and aggregation.
pub fn run_round(
    server: &mut ServerState,
    momdp: &MomdpSpec,
    features: &FeatureMap,
    config: &ProtocolConfig,
) -> Result<RoundRecord> {
    if config.mode != Mode::Centralized {
        for client in server.clients.iter_mut() {
            client.policy = server.global_policy.clone();
        }
    }
    let per_client: Vec<Vec<StepOutcome>> = match config.mode {
        Mode::Firm | Mode::Centralized => local_loops(server, momdp, features, config)?,
        Mode::FedcmooA => {
            let first_step = server.round_index * config.local_steps + 1;
            let mut per_client = vec![Vec::new(); server.clients.len()];
            for k in 0..config.local_steps {
                let t = first_step + k;
                let outcomes = fedcmoo_a_step(server, momdp, features, config, t).map_err(|e| {
                    FirmError::Context {
                        round: server.round_index,
                        step: t,
                        source: Box::new(e),
                    }
                })?;
                for (c, o) in outcomes.into_iter().enumerate() {
                    per_client[c].push(o);
                }
            }
            per_client
        }
    };
    server.global_policy = if config.mode == Mode::Centralized {
        server.clients[0].policy.clone()
    } else {
        let policies: Vec<&PolicyParams> = server.clients.iter().map(|c| &c.policy).collect();
        fedavg(&policies)?
    };
    let record = summarize_round(server, momdp, config, &per_client)?;
    server.round_index += 1;
    Ok(record)
}

fn summarize_round(
    server: &ServerState,
    momdp: &MomdpSpec,
    config: &ProtocolConfig,
    per_client: &[Vec<StepOutcome>],
) -> Result<RoundRecord> {
    let columns = exact_policy_gradient(momdp, &server.global_policy)?;
    let stationarity = pareto_stationarity(&columns)?;
    let mean_lambda = server.mean_lambda();
    let weighted = weighted_stationarity(&columns, &mean_lambda);
    let mut steps = Vec::with_capacity(per_client.len() * config.local_steps);
    for k in 0..config.local_steps {
        let lambdas: Vec<SimplexWeights> =
            per_client.iter().map(|o| o[k].lambda.clone()).collect();
        let policies: Vec<&PolicyParams> = per_client.iter().map(|o| &o[k].policy).collect();
        let disagreement = lambda_disagreement(&lambdas);
        let disagreement_l2 = lambda_disagreement_l2(&lambdas);
        let drift = param_drift(&policies);
        for outcomes in per_client {
            let o = &outcomes[k];
            let step_stationarity = if config.per_step_stationarity {
                pareto_stationarity(&exact_policy_gradient(momdp, &o.policy)?)?
            } else {
                stationarity
            };
            steps.push(StepEntry {
                global_step: o.global_step,
                client: o.client,
                returns: exact_return(momdp, &o.policy)?,
                lambda: o.lambda.0.clone(),
                lambda_star: o.lambda_star.0.clone(),
                stationarity: step_stationarity,
                lambda_disagreement: disagreement,
                lambda_disagreement_l2: disagreement_l2,
                param_drift: drift,
                solver_converged: o.solver_converged,
                max_grad_norm: o.max_grad_norm,
            });
        }
    }
    Ok(RoundRecord {
        round: server.round_index,
        steps,
        stationarity,
        weighted_stationarity: weighted,
        mean_lambda: mean_lambda.0,
        global_returns: exact_return(momdp, &server.global_policy)?,
    })
}

/// Runs `T` rounds in the configured mode from a zero-initialized policy.
pub fn run_experiment(config: &ProtocolConfig, momdp: &MomdpSpec) -> Result<RunLog> {
    config.validate()?;
    momdp.validate()?;
    if let crate::mgda::Regularizer::Preference(p) = &config.mgda.regularizer {
        if p.len() != momdp.n_objectives {
            return Err(FirmError::Config(format!(
                "preference vector has {} entries but the MOMDP has {} objectives",
                p.len(),
                momdp.n_objectives
            )));
        }
    }
    let features = crate::env::one_hot_features(momdp);
    let mut server = ServerState::new(momdp, &features, config);
    let bound = gradient_bound(momdp.r_max, momdp.gamma, server.clients[0].critic.radius);
    let mut rounds = Vec::with_capacity(config.n_rounds);
    for _ in 0..config.n_rounds {
        rounds.push(run_round(&mut server, momdp, &features, config)?);
    }
    let norms = rounds.iter().flat_map(|r| r.steps.iter().map(|s| s.max_grad_norm));
    let (max_grad_norm, bound_violations) = norms.fold((0.0f64, 0usize), |(m, v), n| {
        (m.max(n), v + usize::from(n > bound))
    });
    Ok(RunLog {
        mode: config.mode,
        n_objectives: momdp.n_objectives,
        rounds,
        final_policy: server.global_policy.clone(),
        final_lambda: server.mean_lambda().0,
        gradient_bound: bound,
        max_grad_norm,
        bound_violations,
    })
}
