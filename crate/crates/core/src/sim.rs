//! Closed-loop continuous-discrete simulation, Monte Carlo driver and the
//! metrics behind the comparison tables.
//!
//! Every control step holds the input over `dt`, advances the true state by
//! Euler-Maruyama and the belief by the estimator's time update. Measurements
//! are drawn from the true state every `measurement_period`. Each run owns one
//! random stream seeded with `base_seed + i`, consumed in a fixed order
//! (initial belief, then process noise every step, then `p` and `v` at every
//! measurement), so the two estimators see identical noise for a given seed.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief_safety::{bcbf_row_rd2, cvar_halfspace, jump_diagnostics, BcbfRow, SafetyDiagnostics};
use crate::config::{ControllerConfig, EffortKind, InitialBelief, ScenarioConfig, ScenarioId};
use crate::controllers::{
    clf_cbf_qp_control, gain_scheduled_control, reference_state, safety_filtered_control, Clf1dConfig,
    ControlOutcome, FilterState,
};
use crate::error::{Error, Result};
use crate::estimators::{measurement_update, time_update, Belief, EstimatorKind};
use crate::models::{sample_measurement, SimRng};
use crate::specfun::{erfc, psd_sqrt, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x_true: Vector,
    pub mu: Vector,
    pub sigma_diag: Vector,
    pub u: Vector,
    pub slack: f64,
    /// `h_b` of each constraint at the belief used for control.
    pub h_b: Vec<f64>,
    /// The belief was just updated by a measurement.
    pub event: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEvent {
    pub t: f64,
    pub z: Vector,
    pub z_hat: Vector,
    pub kalman_gain: Vec<f64>,
    pub innovation_covariance: Vec<f64>,
    pub innovation_term: Vector,
    pub lambda: Vec<f64>,
    pub h_prior: Vec<f64>,
    pub h_post: Vec<f64>,
    pub diagnostics: Vec<SafetyDiagnostics>,
    /// Exact Gaussian probability of `h_b(b+) < 0` per constraint when the
    /// innovation term is `N(0, Lambda)`.
    pub gaussian_leave_probability: Vec<f64>,
    /// No QP fallback since the previous measurement.
    pub controlled_safely: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub steps: Vec<StepRecord>,
    pub events: Vec<MeasurementEvent>,
    pub failed: bool,
    pub failure_reason: Option<String>,
}

/// Jump statistics over measurement events with `h_b(b-) >= 0` and no
/// fallback before them, summed over constraints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpStatistics {
    pub events: usize,
    pub left_safe_set: usize,
    pub sum_bound: f64,
    pub sum_bound_variance: f64,
    pub sum_gaussian_probability: f64,
}

impl JumpStatistics {
    fn add(&mut self, o: &JumpStatistics) {
        self.events += o.events;
        self.left_safe_set += o.left_safe_set;
        self.sum_bound += o.sum_bound;
        self.sum_bound_variance += o.sum_bound_variance;
        self.sum_gaussian_probability += o.sum_gaussian_probability;
    }

    /// Largest leave count compatible with the bounds at three binomial
    /// standard deviations.
    pub fn allowed_leaves(&self) -> f64 {
        self.sum_bound + 3.0 * self.sum_bound_variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub failed: bool,
    pub pct_estimated_exceedances: f64,
    pub pct_true_exceedances: f64,
    pub max_est_coordinate: f64,
    pub min_est_coordinate: f64,
    pub max_true_coordinate: f64,
    pub min_true_coordinate: f64,
    pub mean_est_distance_from_boundary: f64,
    pub average_controller_effort: f64,
    pub tracking_rmse: f64,
    pub setpoint_rmse: Option<f64>,
    pub estimation_rmse: f64,
    pub average_acceleration: Option<f64>,
    pub average_yaw_rate: Option<f64>,
    pub mean_covariance_trace: f64,
    pub final_covariance_trace: f64,
    pub pct_bcbf_violations: Vec<f64>,
    pub pct_true_bcbf_violations: Vec<f64>,
    pub pct_qp_fallback: f64,
    pub jumps: JumpStatistics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub estimator: EstimatorKind,
    pub n_runs: usize,
    pub base_seed: u64,
    pub pct_estimated_exceedances: f64,
    pub pct_true_exceedances: f64,
    pub max_est_coordinate: f64,
    pub min_est_coordinate: f64,
    pub max_true_coordinate: f64,
    pub min_true_coordinate: f64,
    pub mean_est_distance_from_boundary: f64,
    pub average_controller_effort: f64,
    pub tracking_rmse: f64,
    pub setpoint_rmse: Option<f64>,
    pub estimation_rmse: f64,
    pub average_acceleration: Option<f64>,
    pub average_yaw_rate: Option<f64>,
    pub mean_covariance_trace: f64,
    pub final_covariance_trace: f64,
    pub pct_bcbf_violations: Vec<f64>,
    pub pct_true_bcbf_violations: Vec<f64>,
    pub pct_qp_fallback: f64,
    pub failure_rate: f64,
    pub jumps: JumpStatistics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub summary: MetricsSummary,
    pub runs: Vec<RunMetrics>,
}

/// State index that the first constraint acts on.
fn monitored_index(cfg: &ScenarioConfig) -> usize {
    cfg.constraints
        .first()
        .map(|c| {
            (0..c.alpha.len())
                .max_by(|&i, &j| c.alpha[i].abs().total_cmp(&c.alpha[j].abs()))
                .unwrap_or(0)
        })
        .unwrap_or(0)
}

fn initial_belief(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Belief> {
    let x0 = Vector::from_column_slice(&cfg.x0);
    let mean = match cfg.initial_belief {
        InitialBelief::Exact => x0,
        InitialBelief::NoisyMeasurement => {
            let n = x0.len();
            let noise = &cfg.noise;
            let p = rng.standard_normal_vector(n) * noise.sigma_p + Vector::from_element(n, noise.mu_p);
            let r = noise.r[0][0].sqrt();
            let v = rng.standard_normal_vector(n) * r + Vector::from_element(n, noise.mu_v[0]);
            x0.zip_map(&p, |x, pi| (1.0 + pi) * x) + v
        }
    };
    Belief::new(mean, cfg.sigma0_matrix()?)
}

/// Error of the true position against the task reference.
fn position_error(cfg: &ScenarioConfig, x: &Vector, t: f64) -> Vec<f64> {
    match &cfg.controller {
        ControllerConfig::Clf1d { target, .. } => vec![x[0] - target],
        ControllerConfig::GainScheduled { trajectory, .. } => {
            let r = reference_state(trajectory, t);
            vec![x[0] - r[0], x[1] - r[1]]
        }
    }
}

/// `h_b(b+) = h_b(b-) + alpha' theta + kappa (s- - s+)`, so with `theta ~ N(0, lambda)`
/// the leave probability depends only on the deterministic part of the jump.
fn gaussian_leave_probability(margin: f64, lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return if margin >= 0.0 { 0.0 } else { 1.0 };
    }
    0.5 * erfc(margin / (2.0 * lambda).sqrt()).unwrap_or(f64::NAN)
}

/// One closed-loop episode. Numerical failures end the run early; the
/// truncated record is kept and flagged.
pub fn run_episode(cfg: &ScenarioConfig, estimator: EstimatorKind, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let obs = cfg.observation()?;
    let noise = cfg.noise.model()?;
    let n = sys.state_dim();
    let m = sys.control_dim();
    let dt = cfg.schedule.dt_control;
    let steps = cfg.schedule.steps();
    let every = cfg.schedule.measurement_every();
    let q_sqrt = psd_sqrt(sys.process_noise());
    let sqrt_dt = dt.sqrt();

    let mut rng = SimRng::new(seed);
    let mut x = Vector::from_column_slice(&cfg.x0);
    let mut belief = initial_belief(cfg, &mut rng)?;
    let mut filter = FilterState::new(m);
    let active_constraints = if cfg.safety_filter { cfg.constraints.as_slice() } else { &[] };

    let mut record = RunRecord {
        seed,
        estimator,
        steps: Vec::with_capacity(steps),
        events: Vec::with_capacity(cfg.schedule.measurement_count()),
        failed: false,
        failure_reason: None,
    };
    let fail = |record: &mut RunRecord, reason: String| {
        record.failed = true;
        record.failure_reason = Some(reason);
    };
    let mut fallback_since_event = false;
    let mut just_updated = false;

    for k in 0..steps {
        let t = k as f64 * dt;
        let outcome: Result<ControlOutcome> = match &cfg.controller {
            ControllerConfig::Clf1d {
                target,
                slack_penalty,
                u_max,
            } => {
                let clf = Clf1dConfig {
                    target: *target,
                    slack_penalty: *slack_penalty,
                    u_max: *u_max,
                };
                clf_cbf_qp_control(&clf, active_constraints, &belief, sys.as_ref(), &cfg.qp, &mut filter)
            }
            ControllerConfig::GainScheduled {
                gains,
                trajectory,
                rd2,
                u_max,
            } => {
                let r = reference_state(trajectory, t);
                let nominal = gain_scheduled_control(gains, &belief.mean, &r);
                active_constraints
                    .iter()
                    .map(|c| bcbf_row_rd2(c, &belief, sys.as_ref(), rd2))
                    .collect::<Result<Vec<BcbfRow>>>()
                    .and_then(|rows| {
                        safety_filtered_control(
                            &nominal,
                            &rows,
                            &Vector::from_column_slice(u_max),
                            &cfg.qp,
                            &mut filter,
                        )
                    })
            }
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                fail(&mut record, format!("controller at t={t}: {e}"));
                break;
            }
        };
        if outcome.fallback {
            fallback_since_event = true;
            log::debug!("QP {} at t={t}, previous input applied", outcome.status.as_str());
        }
        let h_b: Vec<f64> = cfg
            .constraints
            .iter()
            .map(|c| cvar_halfspace(c, &belief).unwrap_or(f64::NAN))
            .collect();
        record.steps.push(StepRecord {
            t,
            x_true: x.clone(),
            mu: belief.mean.clone(),
            sigma_diag: belief.cov.diagonal(),
            u: outcome.u.clone(),
            slack: outcome.slack,
            h_b,
            event: just_updated,
            fallback: outcome.fallback,
        });
        just_updated = false;

        let w = &q_sqrt * rng.standard_normal_vector(n) * sqrt_dt;
        x = &x + sys.dynamics(&x, &outcome.u) * dt + w;
        belief = match time_update(sys.as_ref(), &belief, &outcome.u, dt) {
            Ok(b) => b,
            Err(e) => {
                fail(&mut record, format!("time update at t={t}: {e}"));
                break;
            }
        };

        if (k + 1) % every == 0 {
            let t_meas = (k + 1) as f64 * dt;
            let z = sample_measurement(&obs, &noise, &x, &mut rng);
            match measurement_update(estimator, &obs, &noise, &belief, &z) {
                Ok((post, rep)) => {
                    let mut diagnostics = Vec::new();
                    let mut h_prior = Vec::new();
                    let mut h_post = Vec::new();
                    let mut gaussian = Vec::new();
                    for c in &cfg.constraints {
                        let d = jump_diagnostics(c, &belief, &rep, cfg.jump_epsilon)?;
                        let a = c.alpha_vector();
                        let lambda = a.dot(&(&rep.innovation_term_covariance * &a));
                        let hp = cvar_halfspace(c, &post).unwrap_or(f64::NAN);
                        let margin = hp - a.dot(&rep.innovation_term());
                        gaussian.push(gaussian_leave_probability(margin, lambda));
                        h_prior.push(d.h_b_value);
                        h_post.push(hp);
                        diagnostics.push(d);
                    }
                    record.events.push(MeasurementEvent {
                        t: t_meas,
                        innovation_term: rep.innovation_term(),
                        z,
                        z_hat: rep.predicted_measurement.clone(),
                        kalman_gain: rep.kalman_gain.iter().copied().collect(),
                        innovation_covariance: rep.innovation_covariance.iter().copied().collect(),
                        lambda: rep.innovation_term_covariance.iter().copied().collect(),
                        h_prior,
                        h_post,
                        diagnostics,
                        gaussian_leave_probability: gaussian,
                        controlled_safely: !fallback_since_event,
                    });
                    belief = post;
                    just_updated = true;
                }
                Err(Error::MeasurementRejected) => {
                    log::warn!("measurement at t={t_meas} rejected, prior kept");
                }
                Err(e) => {
                    fail(&mut record, format!("measurement update at t={t_meas}: {e}"));
                    break;
                }
            }
            fallback_since_event = false;
        }

        if x.iter().any(|v| !v.is_finite()) || !belief.is_finite() {
            fail(&mut record, format!("non-finite state or belief at t={}", t + dt));
            break;
        }
        let limit = cfg.failure.position_limit;
        if position_error(cfg, &x, t + dt).iter().any(|e| e.abs() > limit) {
            fail(&mut record, format!("position error beyond {limit} at t={}", t + dt));
            break;
        }
    }

    if !record.failed && cfg.failure.require_reentry && cfg.safety_filter {
        let outside = |s: &StepRecord| cfg.constraints.iter().any(|c| c.margin(&s.x_true) < 0.0);
        if record.steps.last().is_some_and(outside) {
            let exit = record.steps.iter().position(outside).map_or(0.0, |i| record.steps[i].t);
            fail(
                &mut record,
                format!("true state left the safe set at t={exit} and did not return"),
            );
        }
    }
    if record.failed {
        log::info!("run with seed {seed} failed: {}", record.failure_reason.as_deref().unwrap_or(""));
    }
    Ok(record)
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Per-run metrics from a record.
pub fn compute_metrics(record: &RunRecord, cfg: &ScenarioConfig) -> Result<RunMetrics> {
    let steps = &record.steps;
    if steps.is_empty() {
        return Err(Error::Domain("cannot compute metrics of an empty record".into()));
    }
    let total = steps.len();
    let dt = cfg.schedule.dt_control;
    let idx = monitored_index(cfg);
    let constraints = &cfg.constraints;
    let kappas: Vec<f64> = constraints.iter().map(|c| c.risk_factor()).collect::<Result<_>>()?;

    let est_exceed = steps
        .iter()
        .filter(|s| constraints.iter().any(|c| c.margin(&s.mu) < 0.0))
        .count();
    let true_exceed = steps
        .iter()
        .filter(|s| constraints.iter().any(|c| c.margin(&s.x_true) < 0.0))
        .count();

    let fold_minmax = |f: &dyn Fn(&StepRecord) -> f64| {
        steps
            .iter()
            .map(f)
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), v| (hi.max(v), lo.min(v)))
    };
    let (max_est, min_est) = fold_minmax(&|s| s.mu[idx]);
    let (max_true, min_true) = fold_minmax(&|s| s.x_true[idx]);

    let mean_dist = mean_of(steps.iter().map(|s| {
        constraints
            .iter()
            .map(|c| c.margin(&s.mu))
            .fold(f64::INFINITY, f64::min)
    }));

    let effort: f64 = steps
        .iter()
        .map(|s| match cfg.metrics.effort {
            EffortKind::Abs => s.u.iter().map(|v| v.abs()).sum::<f64>() * dt,
            EffortKind::Squared => s.u.norm_squared() * dt,
        })
        .sum();

    let est_sq = mean_of(steps.iter().map(|s| (&s.x_true - &s.mu).norm_squared()));
    let (tracking_rmse, setpoint_rmse, estimation_rmse, avg_acc, avg_yaw) = match (&cfg.controller, cfg.scenario) {
        (ControllerConfig::Clf1d { target, .. }, ScenarioId::Integrator1d) => {
            let setpoint = mean_of(
                steps
                    .iter()
                    .filter(|s| s.t >= cfg.metrics.setpoint_transient)
                    .map(|s| (s.x_true[0] - target).powi(2)),
            );
            let setpoint = setpoint.is_finite().then(|| setpoint.sqrt());
            (est_sq.sqrt(), setpoint, est_sq.sqrt(), None, None)
        }
        (ControllerConfig::GainScheduled { trajectory, .. }, _) => {
            let pos_sq = mean_of(steps.iter().map(|s| {
                let r = reference_state(trajectory, s.t);
                (s.x_true[0] - r[0]).powi(2) + (s.x_true[1] - r[1]).powi(2)
            }));
            (
                pos_sq.sqrt(),
                None,
                est_sq.sqrt(),
                Some(mean_of(steps.iter().map(|s| s.u[0]))),
                Some(mean_of(steps.iter().map(|s| s.u[1]))),
            )
        }
        _ => return Err(Error::Config("controller does not match scenario".into())),
    };

    let traces: Vec<f64> = steps.iter().map(|s| s.sigma_diag.sum()).collect();
    let pct_bcbf: Vec<f64> = (0..constraints.len())
        .map(|i| pct(steps.iter().filter(|s| s.h_b[i] < 0.0).count(), total))
        .collect();
    let pct_true_bcbf: Vec<f64> = constraints
        .iter()
        .zip(&kappas)
        .map(|(c, kappa)| {
            let a = c.alpha_vector();
            let count = steps
                .iter()
                .filter(|s| {
                    let var: f64 = a.iter().zip(s.sigma_diag.iter()).map(|(ai, si)| ai * ai * si).sum();
                    c.margin(&s.x_true) - kappa * var.sqrt() < 0.0
                })
                .count();
            pct(count, total)
        })
        .collect();

    let mut jumps = JumpStatistics::default();
    for ev in &record.events {
        if !ev.controlled_safely {
            continue;
        }
        for i in 0..constraints.len() {
            if ev.h_prior[i] >= 0.0 {
                let b = ev.diagnostics[i].leave_probability_bound;
                jumps.events += 1;
                jumps.sum_bound += b;
                jumps.sum_bound_variance += b * (1.0 - b);
                jumps.sum_gaussian_probability += ev.gaussian_leave_probability[i];
                if ev.h_post[i] < 0.0 {
                    jumps.left_safe_set += 1;
                }
            }
        }
    }

    Ok(RunMetrics {
        seed: record.seed,
        failed: record.failed,
        pct_estimated_exceedances: pct(est_exceed, total),
        pct_true_exceedances: pct(true_exceed, total),
        max_est_coordinate: max_est,
        min_est_coordinate: min_est,
        max_true_coordinate: max_true,
        min_true_coordinate: min_true,
        mean_est_distance_from_boundary: mean_dist,
        average_controller_effort: effort,
        tracking_rmse,
        setpoint_rmse,
        estimation_rmse,
        average_acceleration: avg_acc,
        average_yaw_rate: avg_yaw,
        mean_covariance_trace: mean_of(traces.iter().copied()),
        final_covariance_trace: *traces.last().expect("non-empty"),
        pct_bcbf_violations: pct_bcbf,
        pct_true_bcbf_violations: pct_true_bcbf,
        pct_qp_fallback: pct(steps.iter().filter(|s| s.fallback).count(), total),
        jumps,
    })
}

/// Runs and scores one seed.
pub fn run_and_score(cfg: &ScenarioConfig, estimator: EstimatorKind, seed: u64) -> Result<RunMetrics> {
    let record = run_episode(cfg, estimator, seed)?;
    compute_metrics(&record, cfg)
}

/// Aggregates per-run metrics in run order. Failed runs only enter the
/// failure rate and the jump statistics.
pub fn summarize(runs: &[RunMetrics], estimator: EstimatorKind, base_seed: u64) -> MetricsSummary {
    let ok: Vec<&RunMetrics> = runs.iter().filter(|r| !r.failed).collect();
    let avg = |f: &dyn Fn(&RunMetrics) -> f64| mean_of(ok.iter().map(|r| f(r)));
    let avg_opt = |f: &dyn Fn(&RunMetrics) -> Option<f64>| {
        let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!vals.is_empty()).then(|| mean_of(vals.into_iter()))
    };
    let nc = runs.first().map_or(0, |r| r.pct_bcbf_violations.len());
    let per_constraint = |f: &dyn Fn(&RunMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..nc).map(|i| mean_of(ok.iter().map(|r| f(r)[i]))).collect()
    };
    let mut jumps = JumpStatistics::default();
    for r in runs {
        jumps.add(&r.jumps);
    }
    MetricsSummary {
        estimator,
        n_runs: runs.len(),
        base_seed,
        pct_estimated_exceedances: avg(&|r| r.pct_estimated_exceedances),
        pct_true_exceedances: avg(&|r| r.pct_true_exceedances),
        max_est_coordinate: avg(&|r| r.max_est_coordinate),
        min_est_coordinate: avg(&|r| r.min_est_coordinate),
        max_true_coordinate: avg(&|r| r.max_true_coordinate),
        min_true_coordinate: avg(&|r| r.min_true_coordinate),
        mean_est_distance_from_boundary: avg(&|r| r.mean_est_distance_from_boundary),
        average_controller_effort: avg(&|r| r.average_controller_effort),
        tracking_rmse: avg(&|r| r.tracking_rmse),
        setpoint_rmse: avg_opt(&|r| r.setpoint_rmse),
        estimation_rmse: avg(&|r| r.estimation_rmse),
        average_acceleration: avg_opt(&|r| r.average_acceleration),
        average_yaw_rate: avg_opt(&|r| r.average_yaw_rate),
        mean_covariance_trace: avg(&|r| r.mean_covariance_trace),
        final_covariance_trace: avg(&|r| r.final_covariance_trace),
        pct_bcbf_violations: per_constraint(&|r| &r.pct_bcbf_violations),
        pct_true_bcbf_violations: per_constraint(&|r| &r.pct_true_bcbf_violations),
        pct_qp_fallback: avg(&|r| r.pct_qp_fallback),
        failure_rate: pct(runs.iter().filter(|r| r.failed).count(), runs.len()),
        jumps,
    }
}

/// `n_runs` episodes with seeds `base_seed + i`, run in parallel and reduced
/// in index order.
pub fn monte_carlo(
    cfg: &ScenarioConfig,
    estimator: EstimatorKind,
    n_runs: usize,
    base_seed: u64,
) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    cfg.validate()?;
    let runs = (0..n_runs)
        .into_par_iter()
        .map(|i| run_and_score(cfg, estimator, base_seed + i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloResult {
        summary: summarize(&runs, estimator, base_seed),
        runs,
    })
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("output: {e}"))
}

/// One row per control step: `t, x_true_*, mu_*, sigma_diag_*, u_*, h_b_*, [slack], event_flag`.
pub fn write_trajectory_csv(record: &RunRecord, with_slack: bool, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let Some(first) = record.steps.first() else {
        return Err(Error::Domain("empty record".into()));
    };
    let n = first.x_true.len();
    let m = first.u.len();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_true_{i}")));
    header.extend((0..n).map(|i| format!("mu_{i}")));
    header.extend((0..n).map(|i| format!("sigma_diag_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend((0..first.h_b.len()).map(|i| format!("h_b_{}", i + 1)));
    if with_slack {
        header.push("slack".into());
    }
    header.push("event_flag".into());
    w.write_record(&header).map_err(csv_error)?;
    for s in &record.steps {
        let mut row: Vec<String> = vec![s.t.to_string()];
        row.extend(s.x_true.iter().map(|v| v.to_string()));
        row.extend(s.mu.iter().map(|v| v.to_string()));
        row.extend(s.sigma_diag.iter().map(|v| v.to_string()));
        row.extend(s.u.iter().map(|v| v.to_string()));
        row.extend(s.h_b.iter().map(|v| v.to_string()));
        if with_slack {
            row.push(s.slack.to_string());
        }
        row.push(u8::from(s.event).to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

fn join(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// One row per measurement; matrices are flattened column-major with `;`.
pub fn write_events_csv(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record([
        "t",
        "z",
        "z_hat",
        "kalman_gain",
        "innovation_covariance",
        "innovation_term",
        "lambda",
        "h_prior",
        "h_post",
        "leave_probability_bound",
        "gamma_min",
        "xi",
        "controlled_safely",
    ])
    .map_err(csv_error)?;
    for e in &record.events {
        w.write_record([
            e.t.to_string(),
            join(e.z.iter().copied()),
            join(e.z_hat.iter().copied()),
            join(e.kalman_gain.iter().copied()),
            join(e.innovation_covariance.iter().copied()),
            join(e.innovation_term.iter().copied()),
            join(e.lambda.iter().copied()),
            join(e.h_prior.iter().copied()),
            join(e.h_post.iter().copied()),
            join(e.diagnostics.iter().map(|d| d.leave_probability_bound)),
            join(e.diagnostics.iter().map(|d| d.gamma_min)),
            join(e.diagnostics.iter().map(|d| d.xi)),
            e.controlled_safely.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(csv_error)?;
    std::fs::write(path, text).map_err(|e| csv_error(format!("{}: {e}", path.display())))
}

pub fn write_runs_csv(runs: &[RunMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record([
        "seed",
        "failed",
        "pct_estimated_exceedances",
        "pct_true_exceedances",
        "max_true_coordinate",
        "min_true_coordinate",
        "tracking_rmse",
        "estimation_rmse",
        "average_controller_effort",
        "mean_covariance_trace",
        "final_covariance_trace",
        "pct_bcbf_violations",
        "pct_qp_fallback",
    ])
    .map_err(csv_error)?;
    for r in runs {
        w.write_record([
            r.seed.to_string(),
            r.failed.to_string(),
            r.pct_estimated_exceedances.to_string(),
            r.pct_true_exceedances.to_string(),
            r.max_true_coordinate.to_string(),
            r.min_true_coordinate.to_string(),
            r.tracking_rmse.to_string(),
            r.estimation_rmse.to_string(),
            r.average_controller_effort.to_string(),
            r.mean_covariance_trace.to_string(),
            r.final_covariance_trace.to_string(),
            join(r.pct_bcbf_violations.iter().copied()),
            r.pct_qp_fallback.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}
