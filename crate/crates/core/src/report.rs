//! CSV emission. Floats are written in `{:.16e}` form (17 significant
//! digits), so a CSV round-trips every `f64` and equal logs give equal bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{FirmError, Result};
use crate::federation::RunLog;

fn float(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

fn numbered(out: &mut String, prefix: &str, m: usize) {
    for j in 1..=m {
        write!(out, ",{prefix}_{j}").expect("writing to a String");
    }
}

pub fn run_header(m: usize) -> String {
    let mut h = String::from("round,step,client,mode");
    numbered(&mut h, "J", m);
    numbered(&mut h, "lambda", m);
    h.push_str(",stationarity,lambda_disagreement,param_drift,solver_converged");
    h
}

/// One row per (step, client); only steps with `global_step % log_every == 0`
/// are written.
pub fn render_run_csv(log: &RunLog, log_every: usize) -> String {
    let mut out = run_header(log.n_objectives);
    out.push('\n');
    let every = log_every.max(1);
    for round in &log.rounds {
        for e in round.steps.iter().filter(|e| e.global_step % every == 0) {
            write!(out, "{},{},{},{}", round.round, e.global_step, e.client, log.mode)
                .expect("writing to a String");
            for x in e.returns.iter().chain(&e.lambda) {
                out.push(',');
                float(&mut out, *x);
            }
            for x in [e.stationarity, e.lambda_disagreement, e.param_drift] {
                out.push(',');
                float(&mut out, x);
            }
            writeln!(out, ",{}", e.solver_converged).expect("writing to a String");
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FirmError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| FirmError::io(path, e))
}

pub fn emit_csv(log: &RunLog, path: &Path, log_every: usize) -> Result<()> {
    write_file(path, &render_run_csv(log, log_every))
}

/// Final returns of one preference-sweep entry; `returns` is `None` when
/// the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub preference: Vec<f64>,
    pub returns: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// `p_1..p_M,J_1..J_M`; failed entries get `NaN` returns.
pub fn render_sweep_csv(rows: &[SweepRow], m: usize) -> String {
    let mut out = String::new();
    let mut header = String::new();
    numbered(&mut header, "p", m);
    numbered(&mut header, "J", m);
    out.push_str(&header[1..]);
    out.push('\n');
    for row in rows {
        let nan = vec![f64::NAN; m];
        let returns = row.returns.as_ref().unwrap_or(&nan);
        for (i, x) in row.preference.iter().chain(returns).enumerate() {
            if i > 0 {
                out.push(',');
            }
            float(&mut out, *x);
        }
        out.push('\n');
    }
    out
}

pub fn emit_sweep_csv(rows: &[SweepRow], m: usize, path: &Path) -> Result<()> {
    write_file(path, &render_sweep_csv(rows, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::PolicyParams;
    use crate::env::build_random_momdp;
    use crate::federation::{run_experiment, Mode, ProtocolConfig};

    #[test]
    fn header_layout() {
        assert_eq!(
            run_header(2),
            "round,step,client,mode,J_1,J_2,lambda_1,lambda_2,stationarity,\
             lambda_disagreement,param_drift,solver_converged"
        );
    }

    #[test]
    fn empty_log_is_header_only() {
        let log = RunLog {
            mode: Mode::Firm,
            n_objectives: 3,
            rounds: vec![],
            final_policy: PolicyParams::zeros(1, 1),
            final_lambda: vec![],
            gradient_bound: 1.0,
            max_grad_norm: 0.0,
            bound_violations: 0,
        };
        assert_eq!(render_run_csv(&log, 1), format!("{}\n", run_header(3)));
    }

    #[test]
    fn row_count_and_reemission() {
        let spec = build_random_momdp(3, 2, 2, 0.9, 1.0, 1).unwrap();
        let config = ProtocolConfig {
            n_clients: 2,
            n_rounds: 1,
            local_steps: 1,
            ..Default::default()
        };
        let log = run_experiment(&config, &spec).unwrap();
        let csv = render_run_csv(&log, 1);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv, render_run_csv(&log, 1));
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 12);
        let j1: f64 = row[4].parse().unwrap();
        assert_eq!(j1, log.rounds[0].steps[0].returns[0]);
    }

    #[test]
    fn floats_roundtrip() {
        let mut s = String::new();
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17] {
            s.clear();
            float(&mut s, x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn sweep_layout() {
        let rows = vec![
            SweepRow {
                preference: vec![4.0, 1.0],
                returns: Some(vec![2.0, 1.0]),
                error: None,
            },
            SweepRow {
                preference: vec![1.0, 4.0],
                returns: None,
                error: Some("boom".into()),
            },
        ];
        let csv = render_sweep_csv(&rows, 2);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "p_1,p_2,J_1,J_2");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with("NaN,NaN"));
    }
}
