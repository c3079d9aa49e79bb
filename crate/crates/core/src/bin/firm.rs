use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use firm::config::{parse_config, ExperimentConfig};
use firm::experiments::{pareto_sweep, run_config, run_preset};
use firm::federation::Mode;
use firm::report::emit_sweep_csv;
use firm::FirmError;

#[derive(Parser)]
#[command(name = "firm", about = "Federated multi-objective actor-critic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preference sweep over `sweep.preferences`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named acceptance scenario.
    Preset {
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and validate a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn is_config_error(e: &FirmError) -> bool {
    matches!(e, FirmError::Config(_) | FirmError::Parse(_) | FirmError::Shape { .. })
}

fn fail(e: FirmError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, ExitCode> {
    parse_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            mode,
            out,
        } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(seed) = seed {
                cfg.protocol.seed = seed;
            }
            if let Some(mode) = mode {
                match mode.parse::<Mode>() {
                    Ok(m) => cfg.protocol.mode = m,
                    Err(e) => return fail(e),
                }
            }
            if let Some(out) = out {
                cfg.output.dir = out;
            }
            match run_config(&cfg) {
                Ok((log, path)) => {
                    let last = log.rounds.last();
                    println!(
                        "wrote {} ({} rounds, final J {:?}, stationarity {:e})",
                        path.display(),
                        log.rounds.len(),
                        last.map(|r| r.global_returns.clone()).unwrap_or_default(),
                        last.map_or(f64::NAN, |r| r.stationarity)
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep { config, out } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(out) = out {
                cfg.output.dir = out;
            }
            if cfg.sweep.preferences.is_empty() {
                return fail(FirmError::Config("sweep.preferences is empty".into()));
            }
            let rows = match pareto_sweep(&cfg, &cfg.sweep.preferences) {
                Ok(rows) => rows,
                Err(e) => return fail(e),
            };
            let m = cfg.sweep.preferences[0].len();
            let path = cfg.output.dir.join("sweep.csv");
            if let Err(e) = emit_sweep_csv(&rows, m, &path) {
                return fail(e);
            }
            let mut failed = false;
            for row in &rows {
                match (&row.returns, &row.error) {
                    (Some(j), _) => println!("p={:?} J={:?}", row.preference, j),
                    (None, err) => {
                        failed = true;
                        println!("p={:?} failed: {}", row.preference, err.as_deref().unwrap_or("?"));
                    }
                }
            }
            println!("wrote {}", path.display());
            if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Preset { name, out } => match run_preset(&name, &out.join(&name)) {
            Ok(report) => {
                for c in &report.criteria {
                    println!("{c}");
                }
                for f in &report.files {
                    println!("wrote {}", f.display());
                }
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => fail(e),
        },
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                let p = cfg.protocol.to_protocol();
                println!(
                    "ok: {} clients, {} rounds, {} local steps, mode {}",
                    p.n_clients, p.n_rounds, p.local_steps, p.mode
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
    }
}
