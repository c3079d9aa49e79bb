//! Experiment configuration files.
//!
//! The format is `key = value` lines with dotted section prefixes and `#`
//! comments, which is a subset of TOML:
//!
//! ```text
//! env.n_states = 5
//! env.kind = "conflicting"
//! protocol.beta = 0.05
//! protocol.mode = "fedcmoo_a"
//! output.dir = "runs/beta"
//! sweep.preferences = [[4.0, 1.0], [1.0, 1.0], [1.0, 4.0]]
//! ```
//!
//! Unknown keys are rejected. Missing keys take the defaults of
//! [`EnvConfig`], [`ProtocolSection`] and [`OutputConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::CriticSchedule;
use crate::env::{
    build_conflicting_momdp, build_correlated_momdp, build_random_momdp, MomdpSpec,
};
use crate::error::{FirmError, Result};
use crate::federation::{EtaSchedule, Mode, ProtocolConfig};
use crate::mgda::{MgdaConfig, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Random,
    /// Two objectives with `r_2 = r_max - r_1`.
    Conflicting,
    /// Objectives sharing a common reward table plus `noise` of their own.
    Correlated,
    /// A JSON-serialized [`MomdpSpec`] at `env.path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_objectives: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub seed: u64,
    pub noise: f64,
    pub path: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: EnvKind::Random,
            n_states: 5,
            n_actions: 3,
            n_objectives: 2,
            gamma: 0.9,
            r_max: 1.0,
            seed: 0,
            noise: 0.2,
            path: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == EnvKind::File {
            return match self.path {
                Some(_) => Ok(()),
                None => Err(FirmError::Config("env.kind = \"file\" needs env.path".into())),
            };
        }
        if self.n_states == 0 || self.n_actions == 0 || self.n_objectives == 0 {
            return Err(FirmError::Config(
                "env.n_states, env.n_actions and env.n_objectives must be >= 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(FirmError::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(FirmError::Config("r_max must be > 0".into()));
        }
        if self.kind == EnvKind::Conflicting && self.n_objectives != 2 {
            return Err(FirmError::Config(
                "conflicting environments have exactly 2 objectives".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<MomdpSpec> {
        self.validate()?;
        let spec = match self.kind {
            EnvKind::Random => build_random_momdp(
                self.n_states,
                self.n_actions,
                self.n_objectives,
                self.gamma,
                self.r_max,
                self.seed,
            )?,
            EnvKind::Conflicting => build_conflicting_momdp(
                self.n_states,
                self.n_actions,
                self.gamma,
                self.r_max,
                self.seed,
            )?,
            EnvKind::Correlated => build_correlated_momdp(
                self.n_states,
                self.n_actions,
                self.n_objectives,
                self.gamma,
                self.r_max,
                self.noise,
                self.seed,
            )?,
            EnvKind::File => MomdpSpec::load(self.path.as_deref().expect("validated"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The `protocol.*` keys. `preference`, when present, switches the MGDA
/// regularizer from `beta * I` to `Diag(1/p)`; `eta`, when present, replaces
/// the `1/t` smoothing schedule with a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub mode: Mode,
    pub n_clients: usize,
    pub n_rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub beta: f64,
    pub preference: Option<Vec<f64>>,
    pub normalize_gram: bool,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    pub eta: Option<f64>,
    pub critic_iters: usize,
    pub critic_batch: usize,
    pub critic_stepsize: f64,
    pub critic_radius: Option<f64>,
    pub critic_every: usize,
    pub seed: u64,
    pub parallel: bool,
    pub per_step_stationarity: bool,
    pub heterogeneous_init: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        let m = MgdaConfig::default();
        ProtocolSection {
            mode: p.mode,
            n_clients: p.n_clients,
            n_rounds: p.n_rounds,
            local_steps: p.local_steps,
            batch_size: p.batch_size,
            actor_lr: p.actor_lr,
            beta: 0.01,
            preference: None,
            normalize_gram: m.normalize_gram,
            solver_tol: m.tol,
            solver_max_iters: m.max_iters,
            eta: None,
            critic_iters: p.critic.n_iters,
            critic_batch: p.critic.batch_size,
            critic_stepsize: p.critic.stepsize,
            critic_radius: None,
            critic_every: p.critic_every,
            seed: p.seed,
            parallel: p.parallel,
            per_step_stationarity: p.per_step_stationarity,
            heterogeneous_init: p.heterogeneous_init,
        }
    }
}

impl ProtocolSection {
    pub fn to_protocol(&self) -> ProtocolConfig {
        let regularizer = match &self.preference {
            Some(p) => Regularizer::Preference(p.clone()),
            None => Regularizer::Beta(self.beta),
        };
        ProtocolConfig {
            n_clients: self.n_clients,
            n_rounds: self.n_rounds,
            local_steps: self.local_steps,
            actor_lr: self.actor_lr,
            critic: CriticSchedule {
                n_iters: self.critic_iters,
                batch_size: self.critic_batch,
                stepsize: self.critic_stepsize,
            },
            critic_radius: self.critic_radius,
            critic_every: self.critic_every,
            batch_size: self.batch_size,
            mgda: MgdaConfig {
                regularizer,
                normalize_gram: self.normalize_gram,
                tol: self.solver_tol,
                max_iters: self.solver_max_iters,
            },
            eta: self.eta.map_or(EtaSchedule::Reciprocal, EtaSchedule::Constant),
            mode: self.mode,
            seed: self.seed,
            parallel: self.parallel,
            per_step_stationarity: self.per_step_stationarity,
            heterogeneous_init: self.heterogeneous_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: String,
    /// Write CSV rows for every n-th global step only.
    pub log_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            csv: "run.csv".into(),
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub preferences: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub protocol: ProtocolSection,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| FirmError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.protocol.to_protocol().validate()?;
        if self.env.kind != EnvKind::File {
            if let Some(p) = &self.protocol.preference {
                if p.len() != self.env.n_objectives {
                    return Err(FirmError::Config(format!(
                        "protocol.preference has {} entries, env.n_objectives is {}",
                        p.len(),
                        self.env.n_objectives
                    )));
                }
            }
        }
        if self.output.log_every == 0 {
            return Err(FirmError::Config("output.log_every must be >= 1".into()));
        }
        if self.output.csv.is_empty() {
            return Err(FirmError::Config("output.csv must not be empty".into()));
        }
        for p in &self.sweep.preferences {
            MgdaConfig {
                regularizer: Regularizer::Preference(p.clone()),
                ..Default::default()
            }
            .validate(None)?;
        }
        Ok(())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.csv)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| FirmError::io(path, e))?;
    ExperimentConfig::parse_str(&text).map_err(|e| match e {
        FirmError::Parse(msg) => FirmError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse_str("").unwrap();
        let p = c.protocol.to_protocol();
        assert_eq!(p.n_clients, 8);
        assert_eq!(p.n_rounds, 16);
        assert_eq!(p.batch_size, 16);
        assert_eq!(p.mgda.regularizer, Regularizer::Beta(0.01));
        assert_eq!(p.eta, EtaSchedule::Reciprocal);
        assert_eq!(c.env.n_states, 5);
    }

    #[test]
    fn dotted_keys_and_comments() {
        let c = ExperimentConfig::parse_str(
            "# header\nenv.n_states = 4\nprotocol.mode = \"fedcmoo_a\"  # trailing\n\
             protocol.eta = 0.5\nsweep.preferences = [[4.0, 1.0], [1.0, 4.0]]\n",
        )
        .unwrap();
        assert_eq!(c.env.n_states, 4);
        assert_eq!(c.protocol.mode, Mode::FedcmooA);
        assert_eq!(c.protocol.to_protocol().eta, EtaSchedule::Constant(0.5));
        assert_eq!(c.sweep.preferences.len(), 2);
    }

    #[test]
    fn negative_beta_is_rejected() {
        let err = ExperimentConfig::parse_str("protocol.beta = -1").unwrap_err();
        assert!(err.to_string().contains("beta must be ≥ 0"), "{err}");
    }

    #[test]
    fn gamma_one_is_rejected() {
        let err = ExperimentConfig::parse_str("env.gamma = 1.0").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::parse_str("env.n_states = 3\nprotocol.n_client = 2\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, FirmError::Parse(_)));
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("n_client"), "{msg}");
    }

    #[test]
    fn preference_length_must_match() {
        assert!(ExperimentConfig::parse_str("protocol.preference = [1.0, 2.0, 3.0]").is_err());
        assert!(ExperimentConfig::parse_str("protocol.preference = [1.0, 0.0]").is_err());
    }
}
