//! Experiment drivers: single config runs, the preference sweep, and the
//! named presets with their pinned seeds and pass/fail checks.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::actor::PolicyParams;
use crate::config::ExperimentConfig;
use crate::env::{
    build_conflicting_momdp, build_correlated_momdp, build_random_momdp, one_hot_features,
    stream_rng, MomdpSpec,
};
use crate::error::{FirmError, Result};
use crate::federation::{run_experiment, Mode, ProtocolConfig, RunLog};
use crate::metrics::{lemma_stability_check, variance_speedup_check, LemmaCheckReport, VarianceRow};
use crate::mgda::{MgdaConfig, Regularizer};
use crate::oracle::exact_return;
use crate::report::{emit_csv, emit_sweep_csv, render_run_csv, SweepRow};

pub const PRESETS: [&str; 5] = [
    "rq1_firm_vs_fedcmoo",
    "rq2_beta_ablation",
    "rq3_preference_sweep",
    "lemma_check",
    "speedup_check",
];

/// Protocol seeds shared by every multi-seed preset.
pub const PRESET_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Reward noise of the beta-ablation environment. Near-identical objectives
/// are where unregularized MGDA weights swing between vertices.
pub const ABLATION_NOISE: f64 = 0.02;

/// Rounds for the convergence-trend run at the default step size.
pub const TREND_ROUNDS: usize = 800;

/// Rounds for each preference-sweep run.
pub const SWEEP_ROUNDS: usize = 200;

/// One checked property of a preset.
#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Criterion {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Criterion {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{}: {verdict} {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub name: String,
    pub criteria: Vec<Criterion>,
    pub files: Vec<PathBuf>,
}

impl PresetReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

/// Builds the environment, runs the protocol and writes the CSV named in
/// `config.output`.
pub fn run_config(config: &ExperimentConfig) -> Result<(RunLog, PathBuf)> {
    config.validate()?;
    let spec = config.env.build()?;
    let log = run_experiment(&config.protocol.to_protocol(), &spec)?;
    let path = config.csv_path();
    emit_csv(&log, &path, config.output.log_every)?;
    Ok((log, path))
}

fn with_preference(protocol: &ProtocolConfig, p: &[f64], seed: u64) -> ProtocolConfig {
    ProtocolConfig {
        mgda: MgdaConfig {
            regularizer: Regularizer::Preference(p.to_vec()),
            ..protocol.mgda.clone()
        },
        seed,
        ..protocol.clone()
    }
}

/// One preference-mode run per entry, all on the same environment; entry `i`
/// uses protocol seed `seed + i` and reports the exact returns of the final
/// averaged policy. A failing entry is recorded and the sweep continues.
pub fn pareto_sweep(base: &ExperimentConfig, preferences: &[Vec<f64>]) -> Result<Vec<SweepRow>> {
    let spec = base.env.build()?;
    let protocol = base.protocol.to_protocol();
    Ok(preference_runs(&spec, &protocol, preferences))
}

fn preference_runs(
    spec: &MomdpSpec,
    protocol: &ProtocolConfig,
    preferences: &[Vec<f64>],
) -> Vec<SweepRow> {
    preferences
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let config = with_preference(protocol, p, protocol.seed.wrapping_add(i as u64));
            let outcome = run_experiment(&config, spec)
                .and_then(|log| exact_return(spec, &log.final_policy));
            match outcome {
                Ok(j) => SweepRow {
                    preference: p.clone(),
                    returns: Some(j),
                    error: None,
                },
                Err(e) => SweepRow {
                    preference: p.clone(),
                    returns: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Mean over all steps of the per-step `lambda` disagreement.
pub fn mean_disagreement(log: &RunLog) -> f64 {
    let per_step: Vec<f64> = log
        .rounds
        .iter()
        .flat_map(|r| r.steps.iter().filter(|e| e.client == 0))
        .map(|e| e.lambda_disagreement)
        .collect();
    if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().sum::<f64>() / per_step.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub beta: f64,
    /// Seed-averaged mean disagreement.
    pub disagreement: f64,
    pub logs: Vec<RunLog>,
}

/// Runs `protocol` at each `beta` for every seed.
pub fn beta_ablation(
    spec: &MomdpSpec,
    protocol: &ProtocolConfig,
    betas: &[f64],
    seeds: &[u64],
) -> Result<Vec<AblationArm>> {
    betas
        .iter()
        .map(|&beta| {
            let logs = seeds
                .iter()
                .map(|&seed| {
                    let config = ProtocolConfig {
                        mgda: MgdaConfig {
                            regularizer: Regularizer::Beta(beta),
                            ..protocol.mgda.clone()
                        },
                        seed,
                        ..protocol.clone()
                    };
                    run_experiment(&config, spec)
                })
                .collect::<Result<Vec<_>>>()?;
            let disagreement =
                logs.iter().map(mean_disagreement).sum::<f64>() / logs.len().max(1) as f64;
            Ok(AblationArm {
                beta,
                disagreement,
                logs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendRow {
    pub seed: u64,
    /// Mean of `||grad J(theta_bar) lambda_bar||^2` over the first quarter of
    /// rounds.
    pub first_quartile: f64,
    pub last_quartile: f64,
}

impl TrendRow {
    pub fn ratio(&self) -> f64 {
        self.last_quartile / self.first_quartile
    }
}

pub fn stationarity_trend(log: &RunLog, seed: u64) -> Result<TrendRow> {
    let q = log.rounds.len() / 4;
    if q == 0 {
        return Err(FirmError::Config("trend needs at least 4 rounds".into()));
    }
    let values: Vec<f64> = log.rounds.iter().map(|r| r.weighted_stationarity).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(TrendRow {
        seed,
        first_quartile: mean(&values[..q]),
        last_quartile: mean(&values[values.len() - q..]),
    })
}

pub fn convergence_trend(
    spec: &MomdpSpec,
    protocol: &ProtocolConfig,
    seeds: &[u64],
) -> Result<Vec<TrendRow>> {
    seeds
        .iter()
        .map(|&seed| {
            let log = run_experiment(&ProtocolConfig { seed, ..protocol.clone() }, spec)?;
            stationarity_trend(&log, seed)
        })
        .collect()
}

/// Seed-averaged final returns for each preference vector.
pub fn preference_means(
    spec: &MomdpSpec,
    protocol: &ProtocolConfig,
    preferences: &[Vec<f64>],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let m = spec.n_objectives;
    preferences
        .iter()
        .map(|p| {
            let mut total = vec![0.0; m];
            for &seed in seeds {
                let log = run_experiment(&with_preference(protocol, p, seed), spec)?;
                let j = exact_return(spec, &log.final_policy)?;
                total.iter_mut().zip(&j).for_each(|(t, x)| *t += x / seeds.len() as f64);
            }
            Ok(SweepRow {
                preference: p.clone(),
                returns: Some(total),
                error: None,
            })
        })
        .collect()
}

/// The pinned environments of the presets.
pub fn preset_random_env() -> Result<MomdpSpec> {
    build_random_momdp(5, 3, 2, 0.9, 1.0, 0)
}

pub fn preset_ablation_env() -> Result<MomdpSpec> {
    build_correlated_momdp(5, 3, 2, 0.9, 1.0, ABLATION_NOISE, 0)
}

pub fn preset_conflicting_env() -> Result<MomdpSpec> {
    build_conflicting_momdp(5, 3, 0.9, 1.0, 0)
}

pub fn ablation_protocol() -> ProtocolConfig {
    ProtocolConfig {
        n_clients: 2,
        n_rounds: 30,
        local_steps: 4,
        batch_size: 16,
        parallel: true,
        ..Default::default()
    }
}

pub fn trend_protocol() -> ProtocolConfig {
    ProtocolConfig {
        n_rounds: TREND_ROUNDS,
        parallel: true,
        ..Default::default()
    }
}

pub fn sweep_protocol() -> ProtocolConfig {
    ProtocolConfig {
        n_rounds: SWEEP_ROUNDS,
        parallel: true,
        ..Default::default()
    }
}

pub fn sweep_preferences() -> Vec<Vec<f64>> {
    vec![vec![4.0, 1.0], vec![1.0, 1.0], vec![1.0, 4.0]]
}

/// Both stability settings: `(M, d, beta, seed)`.
pub const LEMMA_SETTINGS: [(usize, usize, f64, u64); 2] = [(2, 8, 0.1, 11), (4, 16, 0.01, 12)];

pub fn lemma_reports(n_trials: usize) -> Result<Vec<LemmaCheckReport>> {
    LEMMA_SETTINGS
        .iter()
        .map(|&(m, d, beta, seed)| lemma_stability_check(n_trials, m, d, beta, seed))
        .collect()
}

/// `(C, B)` grid: baseline, four times the clients, four times the batch.
pub const SPEEDUP_GRID: [(usize, usize); 3] = [(1, 16), (4, 16), (1, 64)];

/// Variance table at a fixed, non-uniform policy on the pinned random env.
pub fn speedup_table(n_reps: usize) -> Result<Vec<VarianceRow>> {
    use rand::Rng;
    let spec = preset_random_env()?;
    let features = one_hot_features(&spec);
    let mut rng = stream_rng(21, 0);
    let theta = (0..spec.n_states * spec.n_actions)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let policy = PolicyParams::from_table(spec.n_states, spec.n_actions, theta)?;
    variance_speedup_check(&spec, &features, &policy, &SPEEDUP_GRID, n_reps, 5)
}

/// `(C-scaling ratio, B-scaling ratio)` from a [`SPEEDUP_GRID`] table.
pub fn speedup_ratios(rows: &[VarianceRow]) -> (f64, f64) {
    (
        rows[0].variance / rows[1].variance,
        rows[0].variance / rows[2].variance,
    )
}

fn in_band(r: f64) -> bool {
    (2.0..=8.0).contains(&r)
}

pub fn run_preset(name: &str, out_dir: &Path) -> Result<PresetReport> {
    let (criteria, files) = match name {
        "rq1_firm_vs_fedcmoo" => rq1(out_dir)?,
        "rq2_beta_ablation" => rq2(out_dir)?,
        "rq3_preference_sweep" => rq3(out_dir)?,
        "lemma_check" => (lemma_check()?, vec![]),
        "speedup_check" => (speedup_check()?, vec![]),
        other => {
            return Err(FirmError::Config(format!(
                "unknown preset {other:?}; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(PresetReport {
        name: name.to_string(),
        criteria,
        files,
    })
}

type PresetOutput = (Vec<Criterion>, Vec<PathBuf>);

fn rq1(out_dir: &Path) -> Result<PresetOutput> {
    let spec = preset_random_env()?;
    let base = ProtocolConfig {
        n_rounds: 40,
        ..Default::default()
    };
    let mut files = Vec::new();
    let mut criteria = Vec::new();
    let mut summary = Vec::new();
    for mode in [Mode::Firm, Mode::FedcmooA] {
        let sequential = run_experiment(&ProtocolConfig { mode, ..base.clone() }, &spec)?;
        let parallel = run_experiment(
            &ProtocolConfig {
                mode,
                parallel: true,
                ..base.clone()
            },
            &spec,
        )?;
        let csv = render_run_csv(&sequential, 1);
        let identical = csv == render_run_csv(&parallel, 1);
        criteria.push(Criterion::new(
            &format!("determinism_{mode}"),
            identical,
            format!("sequential and parallel CSVs identical={identical}"),
        ));
        let path = out_dir.join(format!("rq1_{mode}.csv"));
        emit_csv(&sequential, &path, 1)?;
        files.push(path);
        let last = sequential.rounds.last().expect("40 rounds");
        // floats uploaded per round: parameters once, or M gradients per step
        let d = sequential.final_policy.dim();
        let uploads = match mode {
            Mode::FedcmooA => base.n_clients * base.local_steps * spec.n_objectives * d,
            _ => base.n_clients * d,
        };
        summary.push(format!(
            "{mode}: J={:?} stationarity={:.4e} disagreement={:.4e} uploads_per_round={uploads}",
            last.global_returns,
            last.stationarity,
            mean_disagreement(&sequential)
        ));
        if mode == Mode::FedcmooA {
            let max = sequential
                .rounds
                .iter()
                .flat_map(|r| &r.steps)
                .map(|e| e.lambda_disagreement)
                .fold(0.0, f64::max);
            criteria.push(Criterion::new(
                "fedcmoo_zero_disagreement",
                max == 0.0,
                format!("max_disagreement={max:e}"),
            ));
        }
    }
    criteria.push(Criterion::new("rq1_summary", true, summary.join("; ")));
    let trend = convergence_trend(&spec, &trend_protocol(), &PRESET_SEEDS)?;
    let passing = trend.iter().filter(|r| r.ratio() <= 0.25).count();
    let ratios: Vec<String> = trend.iter().map(|r| format!("{:.3}", r.ratio())).collect();
    criteria.push(Criterion::new(
        "convergence_trend",
        passing * 2 > trend.len(),
        format!("last/first quartile ratios=[{}] threshold=0.25", ratios.join(", ")),
    ));
    Ok((criteria, files))
}

fn rq2(out_dir: &Path) -> Result<PresetOutput> {
    let spec = preset_ablation_env()?;
    let arms = beta_ablation(&spec, &ablation_protocol(), &[0.0, 0.05], &PRESET_SEEDS)?;
    let mut files = Vec::new();
    for arm in &arms {
        for (log, seed) in arm.logs.iter().zip(PRESET_SEEDS) {
            let path = out_dir.join(format!("rq2_beta{}_seed{seed}.csv", arm.beta));
            emit_csv(log, &path, 1)?;
            files.push(path);
        }
    }
    let ratio = arms[0].disagreement / arms[1].disagreement;
    let logs = arms.iter().flat_map(|a| &a.logs);
    let violations: usize = logs.clone().map(|l| l.bound_violations).sum();
    let max_norm = logs.clone().map(|l| l.max_grad_norm).fold(0.0, f64::max);
    let bound = arms[0].logs[0].gradient_bound;
    Ok((
        vec![
            Criterion::new(
                "rq2_beta_ablation",
                ratio >= 1.5,
                format!(
                    "disagreement beta=0: {:.6e} beta=0.05: {:.6e} ratio={ratio:.4}",
                    arms[0].disagreement, arms[1].disagreement
                ),
            ),
            Criterion::new(
                "bounded_gradients",
                violations == 0,
                format!("violations={violations} max_norm={max_norm:.4} bound={bound:.4}"),
            ),
        ],
        files,
    ))
}

fn rq3(out_dir: &Path) -> Result<PresetOutput> {
    let spec = preset_conflicting_env()?;
    let rows = preference_means(&spec, &sweep_protocol(), &sweep_preferences(), &PRESET_SEEDS)?;
    let path = out_dir.join("rq3_sweep.csv");
    emit_sweep_csv(&rows, 2, &path)?;
    let j1: Vec<f64> = rows
        .iter()
        .map(|r| r.returns.as_ref().expect("filled")[0])
        .collect();
    let monotone = j1.windows(2).all(|w| w[0] >= w[1]);
    let shown: Vec<String> = j1.iter().map(|x| format!("{x:.6}")).collect();
    Ok((
        vec![Criterion::new(
            "rq3_preference_monotonicity",
            monotone,
            format!("mean J_1 for p=(4,1),(1,1),(1,4): [{}]", shown.join(", ")),
        )],
        vec![path],
    ))
}

fn lemma_check() -> Result<Vec<Criterion>> {
    let reports = lemma_reports(1000)?;
    let max_ratio = reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);
    Ok(vec![Criterion::new(
        "lemma_stability",
        pass,
        format!("max_ratio={max_ratio:.6}"),
    )])
}

fn speedup_check() -> Result<Vec<Criterion>> {
    let rows = speedup_table(500)?;
    let (c_ratio, b_ratio) = speedup_ratios(&rows);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("(C={},B={}):{:.4e}", r.n_clients, r.batch_size, r.variance))
        .collect();
    Ok(vec![Criterion::new(
        "linear_speedup",
        in_band(c_ratio) && in_band(b_ratio),
        format!(
            "C_ratio={c_ratio:.3} B_ratio={b_ratio:.3} variances {}",
            table.join(" ")
        ),
    )])
}
