use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bcbf::config::{ScenarioConfig, ScenarioId};
use bcbf::estimators::EstimatorKind;
use bcbf::sim::{
    compute_metrics, monte_carlo, run_episode, summarize, write_events_csv, write_json, write_runs_csv,
    write_trajectory_csv, MetricsSummary, RunMetrics,
};
use bcbf::Error;

#[derive(Parser)]
#[command(name = "bcbf", version, about = "Belief CBF simulations with EKF and GEKF estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (JSON).
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// First seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trajectory, measurements and metrics.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimator: Option<EstimatorKind>,
    },
    /// Monte Carlo over consecutive seeds for one estimator.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimator: Option<EstimatorKind>,
        #[arg(long)]
        n_runs: Option<usize>,
    },
    /// Both estimators on the same seeds, side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_runs: Option<usize>,
    },
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

fn prepare(common: &Common) -> Result<(ScenarioConfig, u64), Failure> {
    let cfg = ScenarioConfig::load(&common.config)?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", common.out.display())))?;
    let seed = common.seed.unwrap_or(cfg.seeds.base_seed);
    Ok((cfg, seed))
}

fn n_runs(requested: Option<usize>, cfg: &ScenarioConfig) -> Result<usize, Failure> {
    match requested.unwrap_or(cfg.seeds.n_runs) {
        0 => Err(Failure::Usage("n-runs must be at least 1".into())),
        n => Ok(n),
    }
}

fn cmd_run(common: &Common, estimator: Option<EstimatorKind>) -> Result<bool, Failure> {
    let (cfg, seed) = prepare(common)?;
    let kind = estimator.unwrap_or(cfg.estimator);
    let record = run_episode(&cfg, kind, seed)?;
    let out = &common.out;
    let with_slack = cfg.scenario == ScenarioId::Integrator1d;
    write_trajectory_csv(&record, with_slack, &out.join("trajectory.csv"))?;
    write_events_csv(&record, &out.join("measurements.csv"))?;
    let metrics = compute_metrics(&record, &cfg)?;
    let summary = summarize(std::slice::from_ref(&metrics), kind, seed);
    write_json(&summary, &out.join("metrics.json"))?;
    match &record.failure_reason {
        Some(reason) => eprintln!("run failed: {reason}"),
        None => println!("{kind} seed {seed}: {} steps, {} measurements", record.steps.len(), record.events.len()),
    }
    Ok(!record.failed)
}

fn cmd_montecarlo(common: &Common, estimator: Option<EstimatorKind>, n: Option<usize>) -> Result<bool, Failure> {
    let (cfg, seed) = prepare(common)?;
    let n = n_runs(n, &cfg)?;
    let kind = estimator.unwrap_or(cfg.estimator);
    let mc = monte_carlo(&cfg, kind, n, seed)?;
    write_json(&mc.summary, &common.out.join("summary.json"))?;
    write_runs_csv(&mc.runs, &common.out.join("runs.csv"))?;
    println!(
        "{kind}: {n} runs from seed {seed}, failure rate {:.3}%",
        mc.summary.failure_rate
    );
    Ok(mc.runs.iter().all(|r| !r.failed))
}

fn table_rows(scenario: ScenarioId, g: &MetricsSummary, e: &MetricsSummary) -> Vec<(String, f64, f64)> {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let mut rows: Vec<(String, f64, f64)> = match scenario {
        ScenarioId::Integrator1d => vec![
            ("% estimated exceedances per run".into(), g.pct_estimated_exceedances, e.pct_estimated_exceedances),
            ("% true exceedances per run".into(), g.pct_true_exceedances, e.pct_true_exceedances),
            ("Max estimated position value".into(), g.max_est_coordinate, e.max_est_coordinate),
            ("Max true position value".into(), g.max_true_coordinate, e.max_true_coordinate),
            ("Mean est distance from boundary".into(), g.mean_est_distance_from_boundary, e.mean_est_distance_from_boundary),
            ("Average controller effort".into(), g.average_controller_effort, e.average_controller_effort),
            ("Tracking RMSE".into(), g.tracking_rmse, e.tracking_rmse),
            ("Setpoint RMSE".into(), opt(g.setpoint_rmse), opt(e.setpoint_rmse)),
        ],
        ScenarioId::Unicycle2d => vec![
            ("Max true y value".into(), g.max_true_coordinate, e.max_true_coordinate),
            ("Min true y value".into(), g.min_true_coordinate, e.min_true_coordinate),
            ("Max estimated y value".into(), g.max_est_coordinate, e.max_est_coordinate),
            ("Min estimated y value".into(), g.min_est_coordinate, e.min_est_coordinate),
            ("Tracking RMSE".into(), g.tracking_rmse, e.tracking_rmse),
            ("Average acceleration".into(), opt(g.average_acceleration), opt(e.average_acceleration)),
            ("Average yaw rate".into(), opt(g.average_yaw_rate), opt(e.average_yaw_rate)),
        ],
    };
    if scenario == ScenarioId::Unicycle2d {
        for i in 0..g.pct_bcbf_violations.len() {
            rows.push((
                format!("% of BCBF {} violations per run", i + 1),
                g.pct_bcbf_violations[i],
                e.pct_bcbf_violations[i],
            ));
        }
        rows.push(("Mean covariance trace".into(), g.mean_covariance_trace, e.mean_covariance_trace));
        rows.push(("Final covariance trace".into(), g.final_covariance_trace, e.final_covariance_trace));
    }
    rows.push(("Failure rate (%)".into(), g.failure_rate, e.failure_rate));
    rows
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let internal = |e: csv::Error| Failure::Internal(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(internal)?;
    w.write_record(header).map_err(internal)?;
    for row in rows {
        w.write_record(row).map_err(internal)?;
    }
    w.flush().map_err(|e| Failure::Internal(e.to_string()))
}

fn paired_row(g: &RunMetrics, e: &RunMetrics) -> Vec<String> {
    vec![
        g.seed.to_string(),
        g.failed.to_string(),
        e.failed.to_string(),
        g.tracking_rmse.to_string(),
        e.tracking_rmse.to_string(),
        g.pct_estimated_exceedances.to_string(),
        e.pct_estimated_exceedances.to_string(),
        g.max_true_coordinate.to_string(),
        e.max_true_coordinate.to_string(),
    ]
}

fn cmd_compare(common: &Common, n: Option<usize>) -> Result<bool, Failure> {
    let (cfg, seed) = prepare(common)?;
    let n = n_runs(n, &cfg)?;
    let gekf = monte_carlo(&cfg, EstimatorKind::Gekf, n, seed)?;
    let ekf = monte_carlo(&cfg, EstimatorKind::Ekf, n, seed)?;
    let out = &common.out;
    write_json(&gekf.summary, &out.join("summary_gekf.json"))?;
    write_json(&ekf.summary, &out.join("summary_ekf.json"))?;

    let rows = table_rows(cfg.scenario, &gekf.summary, &ekf.summary);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, g, e)| vec![name.clone(), format!("{g:.3}"), format!("{e:.3}")])
        .collect();
    write_csv_rows(&out.join("comparison.csv"), &["Metric", "GEKF", "EKF"], &csv_rows)?;

    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
    let mut text = String::new();
    let _ = writeln!(text, "{:<width$}  {:>10}  {:>10}", "Metric", "GEKF", "EKF");
    for (name, g, e) in &rows {
        let _ = writeln!(text, "{name:<width$}  {g:>10.3}  {e:>10.3}");
    }
    let _ = writeln!(text, "seeds {}..={} shared by both estimators", seed, seed + n as u64 - 1);
    std::fs::write(out.join("comparison.txt"), &text).map_err(|e| Failure::Internal(e.to_string()))?;
    print!("{text}");

    let paired: Vec<Vec<String>> = gekf.runs.iter().zip(&ekf.runs).map(|(g, e)| paired_row(g, e)).collect();
    write_csv_rows(
        &out.join("paired_runs.csv"),
        &[
            "seed",
            "gekf_failed",
            "ekf_failed",
            "gekf_tracking_rmse",
            "ekf_tracking_rmse",
            "gekf_pct_estimated_exceedances",
            "ekf_pct_estimated_exceedances",
            "gekf_max_true_coordinate",
            "ekf_max_true_coordinate",
        ],
        &paired,
    )?;
    Ok(gekf.runs.iter().chain(&ekf.runs).all(|r| !r.failed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { common, estimator } => cmd_run(common, *estimator),
        Command::Montecarlo {
            common,
            estimator,
            n_runs,
        } => cmd_montecarlo(common, *estimator, *n_runs),
        Command::Compare { common, n_runs } => cmd_compare(common, *n_runs),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
