//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or overruns its time limit.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;

use firm::actor::{objective_gradients, PolicyParams, SCORE_BOUND};
use firm::critic::{default_radius, run_critic, CriticSchedule, CriticWeights};
use firm::env::{build_random_momdp, one_hot_features, sample_index, stream_rng};
use firm::experiments::{
    ablation_protocol, beta_ablation, convergence_trend, lemma_reports, preference_means,
    preset_ablation_env, preset_conflicting_env, preset_random_env, run_preset, speedup_ratios,
    speedup_table, sweep_preferences, sweep_protocol, trend_protocol, AblationArm, PRESET_SEEDS,
};
use firm::federation::{
    actor_critic_step, local_step, run_experiment, ClientState, Mode, ProtocolConfig,
};
use firm::metrics::grid_minimum;
use firm::mgda::{kkt_residual, regularized_matrix, solve_simplex_qp, GramMatrix, MgdaConfig};
use firm::oracle::{
    exact_policy_gradient, exact_return, exact_td_fixpoint, expected_td_gradient,
    stationary_distribution,
};
use firm::report::render_run_csv;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_gram(m: usize, d: usize, rng: &mut firm::env::SimRng) -> GramMatrix {
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
            (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
        })
        .collect();
    let entries = cols
        .iter()
        .map(|a| cols.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect();
    GramMatrix {
        entries,
        normalized: false,
    }
}

fn quad(q: &[Vec<f64>], x: &[f64]) -> f64 {
    q.iter()
        .zip(x)
        .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn mgda_solver() -> Verdict {
    let mut rng = stream_rng(101, 0);
    let configs = [MgdaConfig::default(), MgdaConfig::plain(1e-10)];
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_kkt: f64 = 0.0;
    for trial in 0..100 {
        let m = 2 + trial % 2;
        let g = random_gram(m, 5, &mut rng);
        for config in &configs {
            let sol = solve_simplex_qp(&g, config).expect("solver");
            let q = regularized_matrix(&g, config).expect("matrix");
            let grid = grid_minimum(&q, 1e-3);
            worst_gap = worst_gap.max(quad(&q, &sol.weights.0) - grid);
            worst_kkt = worst_kkt.max(kkt_residual(&q, &sol.weights.0, 1e-12));
        }
    }
    let orth = GramMatrix {
        entries: vec![vec![1.0, 0.0], vec![0.0, 4.0]],
        normalized: false,
    };
    let raw = |beta: f64| MgdaConfig::beta(beta).with_normalization(false);
    let l0 = solve_simplex_qp(&orth, &raw(0.0)).unwrap().weights.0[0];
    let l2 = solve_simplex_qp(&orth, &raw(2.0)).unwrap().weights.0[0];
    let closed = (l0 - 0.8).abs() <= 1e-6 && (l2 - 5.0 / 7.0).abs() <= 1e-6;
    verdict(
        worst_gap <= 1e-5 && worst_kkt <= 1e-8 && closed,
        format!(
            "max(obj - grid)={worst_gap:.3e} max_kkt={worst_kkt:.3e} lambda1(beta=0)={l0:.8} lambda1(beta=2)={l2:.8}"
        ),
    )
}

fn lemma_stability() -> Verdict {
    let reports = lemma_reports(1000).expect("lemma check");
    let detail = reports
        .iter()
        .map(|r| format!("trials={} max_ratio={:.6} R={:.4}", r.trials, r.max_ratio, r.r_used))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(reports.iter().all(|r| r.max_ratio <= 1.0), detail)
}

fn bounded_gradients(arms: &[AblationArm]) -> Verdict {
    let spec = preset_ablation_env().unwrap();
    let radius = default_radius(spec.r_max, spec.gamma, spec.n_states);
    let bound = SCORE_BOUND * (spec.r_max + (1.0 + spec.gamma) * radius);
    let logs = arms.iter().flat_map(|a| &a.logs);
    let steps = logs.clone().flat_map(|l| &l.rounds).flat_map(|r| &r.steps);
    let violations = steps.clone().filter(|e| e.max_grad_norm > bound).count();
    let max = steps.map(|e| e.max_grad_norm).fold(0.0, f64::max);
    let agree = logs.clone().all(|l| l.gradient_bound == bound);
    verdict(
        violations == 0 && agree,
        format!("violations={violations} max_norm={max:.4} bound={bound:.4}"),
    )
}

fn critic_convergence() -> Verdict {
    let schedule = CriticSchedule {
        n_iters: 2000,
        batch_size: 8,
        stepsize: 0.1,
    };
    let mut errors = Vec::new();
    for seed in 0..10u64 {
        let spec = build_random_momdp(4, 2, 2, 0.9, 1.0, 200 + seed).unwrap();
        let phi = one_hot_features(&spec);
        let mut rng = stream_rng(300 + seed, 0);
        let theta = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let policy = PolicyParams::from_table(4, 2, theta).unwrap();
        let radius = default_radius(spec.r_max, spec.gamma, phi.dim);
        let init = CriticWeights::zeros(2, phi.dim, radius);
        let (w, _) = run_critic(&spec, &phi, &policy, &init, 0, &schedule, &mut rng).unwrap();
        for j in 0..2 {
            let star = exact_td_fixpoint(&spec, &policy, &phi, j).unwrap();
            let err: f64 = w.weights[j].iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum();
            errors.push(err);
        }
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    verdict(
        mean <= 0.01,
        format!("mean ||w_N - w*||^2={mean:.4e} over {} critics", errors.len()),
    )
}

fn gradient_oracle() -> Verdict {
    let h = 1e-5;
    let mut worst_fd: f64 = 0.0;
    for (i, &(ns, na, m)) in [(2, 2, 1), (4, 3, 2), (6, 3, 3), (6, 2, 3)].iter().enumerate() {
        let spec = build_random_momdp(ns, na, m, 0.9, 1.0, 400 + i as u64).unwrap();
        let mut rng = stream_rng(500 + i as u64, 0);
        let theta: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let policy = PolicyParams::from_table(ns, na, theta.clone()).unwrap();
        let exact = exact_policy_gradient(&spec, &policy).unwrap();
        for k in 0..theta.len() {
            let mut up = theta.clone();
            up[k] += h;
            let mut down = theta.clone();
            down[k] -= h;
            let ju = exact_return(&spec, &PolicyParams::from_table(ns, na, up).unwrap()).unwrap();
            let jd = exact_return(&spec, &PolicyParams::from_table(ns, na, down).unwrap()).unwrap();
            for j in 0..m {
                let fd = (ju[j] - jd[j]) / (2.0 * h);
                worst_fd = worst_fd.max((fd - exact[j][k]).abs());
            }
        }
    }

    // stochastic estimator vs enumerated expectation at the TD fixed point
    let spec = build_random_momdp(4, 3, 2, 0.9, 1.0, 450).unwrap();
    let phi = one_hot_features(&spec);
    let mut rng = stream_rng(451, 0);
    let theta = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let policy = PolicyParams::from_table(4, 3, theta).unwrap();
    let weights: Vec<Vec<f64>> = (0..2)
        .map(|j| exact_td_fixpoint(&spec, &policy, &phi, j).unwrap())
        .collect();
    let critic = CriticWeights {
        weights: weights.clone(),
        radius: 1e6,
    };
    let d_pi = stationary_distribution(&spec, &policy).unwrap();
    let n_batches = 200;
    let mut samples = vec![Vec::new(); 2];
    for b in 0..n_batches {
        let mut rng = stream_rng(452, b as u64);
        let start = sample_index(&d_pi, &mut rng);
        let (g, _) = objective_gradients(&policy, &critic, &spec, &phi, start, 64, &mut rng).unwrap();
        for j in 0..2 {
            samples[j].push(g.grads[j].clone());
        }
    }
    let mut worst_z: f64 = 0.0;
    for j in 0..2 {
        let target = expected_td_gradient(&spec, &policy, &phi, &weights[j], j).unwrap();
        for k in 0..policy.dim() {
            let xs: Vec<f64> = samples[j].iter().map(|g| g[k]).collect();
            let mean = xs.iter().sum::<f64>() / n_batches as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
            let se = (var / n_batches as f64).sqrt();
            let z = if se > 0.0 {
                (mean - target[k]).abs() / se
            } else if (mean - target[k]).abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
    }
    verdict(
        worst_fd <= 1e-4 && worst_z <= 3.0,
        format!("max |exact - fd|={worst_fd:.3e} max |mean - expected|/se={worst_z:.3}"),
    )
}

fn rq2_ablation(arms: &[AblationArm]) -> Verdict {
    let ratio = arms[0].disagreement / arms[1].disagreement;
    verdict(
        ratio >= 1.5,
        format!(
            "disagreement beta=0: {:.6e} beta=0.05: {:.6e} ratio={ratio:.4}",
            arms[0].disagreement, arms[1].disagreement
        ),
    )
}

fn convergence() -> Verdict {
    let spec = preset_random_env().unwrap();
    let protocol = trend_protocol();
    assert_eq!(protocol.n_clients, 8);
    assert_eq!(protocol.local_steps, 4);
    assert_eq!(protocol.mgda, MgdaConfig::beta(0.01));
    let rows = convergence_trend(&spec, &protocol, &PRESET_SEEDS).unwrap();
    let passing = rows.iter().filter(|r| r.ratio() <= 0.25).count();
    let ratios: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.ratio())).collect();
    verdict(
        passing * 2 > rows.len(),
        format!(
            "T={} last/first quartile ratios=[{}], {passing}/{} seeds <= 0.25",
            protocol.n_rounds,
            ratios.join(", "),
            rows.len()
        ),
    )
}

fn speedup() -> Verdict {
    let rows = speedup_table(500).unwrap();
    let (c, b) = speedup_ratios(&rows);
    let band = |r: f64| (2.0..=8.0).contains(&r);
    verdict(band(c) && band(b), format!("C x4 ratio={c:.3} B x4 ratio={b:.3}"))
}

fn mode_equivalences() -> Verdict {
    let spec = build_random_momdp(4, 3, 2, 0.9, 1.0, 600).unwrap();
    let base = ProtocolConfig {
        n_clients: 1,
        n_rounds: 5,
        local_steps: 3,
        seed: 17,
        ..Default::default()
    };
    let run = |mode, n_clients| {
        run_experiment(
            &ProtocolConfig {
                mode,
                n_clients,
                ..base.clone()
            },
            &spec,
        )
        .unwrap()
    };
    let firm = run(Mode::Firm, 1);
    // centralized ignores n_clients
    let central = run(Mode::Centralized, 5);
    let fedcmoo = run(Mode::FedcmooA, 1);
    let a = firm.final_policy == central.final_policy && firm.rounds == central.rounds;
    let b = firm.final_policy == fedcmoo.final_policy;

    let single = build_random_momdp(4, 3, 1, 0.9, 1.0, 601).unwrap();
    let phi = one_hot_features(&single);
    let mut x = ClientState::new(0, &single, &phi, &base, PolicyParams::zeros(4, 3));
    let mut y = x.clone();
    let mut c = true;
    for t in 1..=20 {
        let out = local_step(&mut x, &single, &phi, &base, t).unwrap();
        actor_critic_step(&mut y, &single, &phi, &base).unwrap();
        c &= out.lambda.0 == vec![1.0] && x.policy.theta == y.policy.theta;
    }

    let shared = run(Mode::FedcmooA, 4);
    let max_d = shared
        .rounds
        .iter()
        .flat_map(|r| &r.steps)
        .map(|e| e.lambda_disagreement)
        .fold(0.0, f64::max);
    let d = max_d == 0.0;
    verdict(
        a && b && c && d,
        format!("(a) firm==centralized {a} (b) fedcmoo==firm {b} (c) M=1 {c} (d) max fedcmoo disagreement={max_d:e}"),
    )
}

fn preference_sweep() -> Verdict {
    let spec = preset_conflicting_env().unwrap();
    let rows =
        preference_means(&spec, &sweep_protocol(), &sweep_preferences(), &PRESET_SEEDS).unwrap();
    let j1: Vec<f64> = rows.iter().map(|r| r.returns.as_ref().unwrap()[0]).collect();
    verdict(
        j1.windows(2).all(|w| w[0] >= w[1]),
        format!("mean J_1 for p=(4,1),(1,1),(1,4): {j1:.6?}"),
    )
}

fn read_dir(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Verdict {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    run_preset("rq2_beta_ablation", first.path()).unwrap();
    run_preset("rq2_beta_ablation", second.path()).unwrap();
    let a = read_dir(first.path());
    let b = read_dir(second.path());
    let rerun = !a.is_empty() && a == b;

    let spec = preset_ablation_env().unwrap();
    let mut sequential_matches = true;
    for beta in [0.0, 0.05] {
        for seed in PRESET_SEEDS {
            let config = ProtocolConfig {
                mgda: MgdaConfig::beta(beta),
                seed,
                parallel: false,
                ..ablation_protocol()
            };
            let csv = render_run_csv(&run_experiment(&config, &spec).unwrap(), 1);
            let name = format!("rq2_beta{beta}_seed{seed}.csv");
            sequential_matches &= a.get(&name).map(|bytes| bytes.as_slice()) == Some(csv.as_bytes());
        }
    }
    verdict(
        rerun && sequential_matches,
        format!(
            "{} preset CSVs byte-identical on rerun: {rerun}; parallel == sequential: {sequential_matches}",
            a.len()
        ),
    )
}

fn main() {
    let mut results = Vec::new();
    let mut record = |id: usize, name: &str, limit: Option<u64>, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|s| elapsed <= Duration::from_secs(s));
        let pass = v.pass && in_time;
        let limit_text = limit.map_or(String::new(), |s| format!(", limit {s}s"));
        println!(
            "[{}] {id:>2} {name}: {} ({:.1}s{limit_text})",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
        results.push(pass);
    };

    let mut arms = Vec::new();
    record(1, "mgda_solver", Some(10), &mut mgda_solver);
    record(2, "lemma_stability", Some(30), &mut lemma_stability);
    let ablation_start = Instant::now();
    let spec = preset_ablation_env().unwrap();
    arms.extend(beta_ablation(&spec, &ablation_protocol(), &[0.0, 0.05], &PRESET_SEEDS).unwrap());
    let ablation_time = ablation_start.elapsed();
    record(3, "bounded_gradients", None, &mut || bounded_gradients(&arms));
    record(4, "critic_convergence", Some(60), &mut critic_convergence);
    record(5, "gradient_oracle", Some(60), &mut gradient_oracle);
    record(6, "rq2_beta_ablation", Some(300), &mut || {
        let mut v = rq2_ablation(&arms);
        v.detail = format!("{} (runs {:.1}s)", v.detail, ablation_time.as_secs_f64());
        v.pass &= ablation_time <= Duration::from_secs(300);
        v
    });
    record(7, "convergence_trend", Some(600), &mut convergence);
    record(8, "linear_speedup", Some(120), &mut speedup);
    record(9, "mode_equivalences", None, &mut mode_equivalences);
    record(10, "rq3_preference_monotonicity", Some(300), &mut preference_sweep);
    record(11, "determinism", None, &mut determinism);

    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
