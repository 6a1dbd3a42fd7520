//! Scenario configuration (JSON), validation and the two bundled scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief_safety::{HalfSpaceConstraint, Rd2Gains};
use crate::controllers::{Clf1dConfig, GainScheduleConfig, HeadingReference, TrajectoryRef};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::models::{ControlAffineSystem, CoordinateObservation, Integrator1d, NoiseModel, Unicycle};
use crate::qp::QpSettings;
use crate::specfun::{psd_check, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Integrator1d,
    Unicycle2d,
}

impl ScenarioId {
    pub fn state_dim(self) -> usize {
        match self {
            ScenarioId::Integrator1d => 1,
            ScenarioId::Unicycle2d => 4,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            ScenarioId::Integrator1d => 1,
            ScenarioId::Unicycle2d => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub dt_control: f64,
    pub measurement_period: f64,
    pub duration: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            dt_control: 1e-3,
            measurement_period: 10.0,
            duration: 100.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_control > 0.0 && self.duration > 0.0 && self.measurement_period > 0.0) {
            return Err(Error::Config(format!("schedule entries must be positive, got {self:?}")));
        }
        let ratio = self.measurement_period / self.dt_control;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "measurement_period {} is not an integer multiple of dt_control {}",
                self.measurement_period, self.dt_control
            )));
        }
        Ok(())
    }

    /// Number of control steps.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt_control + 1e-9).floor() as usize
    }

    /// Control steps between measurements.
    pub fn measurement_every(&self) -> usize {
        (self.measurement_period / self.dt_control).round() as usize
    }

    pub fn measurement_count(&self) -> usize {
        self.steps() / self.measurement_every()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub mu_v: Vec<f64>,
    pub r: Vec<Vec<f64>>,
}

impl NoiseConfig {
    pub fn model(&self) -> Result<NoiseModel> {
        NoiseModel::new(
            self.mu_p,
            self.sigma_p,
            Vector::from_column_slice(&self.mu_v),
            matrix_from_rows(&self.r, "noise.r")?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Clf1d {
        target: f64,
        slack_penalty: f64,
        u_max: f64,
    },
    GainScheduled {
        gains: GainScheduleConfig,
        trajectory: TrajectoryRef,
        rd2: Rd2Gains,
        u_max: Vec<f64>,
    },
}

/// How the initial belief mean is formed from `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialBelief {
    Exact,
    /// `(1 + p) x0 + v` with the scalar noise parameters applied to every
    /// state component.
    NoisyMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffortKind {
    /// `sum |u| dt`
    Abs,
    /// `sum u^2 dt`
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub effort: EffortKind,
    /// Steps before this time are left out of the setpoint error.
    pub setpoint_transient: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            effort: EffortKind::Abs,
            setpoint_transient: 20.0,
        }
    }
}

/// A run fails when the state or belief stops being finite, when the true
/// position error leaves `position_limit`, or (with `require_reentry` and the
/// safety filter on) when the true state ends the run outside the safe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureConfig {
    pub position_limit: f64,
    pub require_reentry: bool,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            position_limit: 50.0,
            require_reentry: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub base_seed: u64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub estimator: EstimatorKind,
    pub noise: NoiseConfig,
    pub process_noise: Vec<Vec<f64>>,
    /// State indices seen by the observation function.
    pub observed: Vec<usize>,
    pub constraints: Vec<HalfSpaceConstraint>,
    pub safety_filter: bool,
    pub schedule: Schedule,
    pub controller: ControllerConfig,
    pub x0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    pub initial_belief: InitialBelief,
    pub qp: QpSettings,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub failure: FailureConfig,
    /// Risk level for the jump diagnostics' safety offset.
    #[serde(default = "default_jump_epsilon")]
    pub jump_epsilon: f64,
}

fn default_jump_epsilon() -> f64 {
    0.01
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what}: rows have different lengths")));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scenario.state_dim();
        let m = self.scenario.control_dim();
        self.schedule.validate()?;
        self.qp.validate()?;
        let noise = self.noise.model()?;
        if noise.obs_dim() != self.observed.len() {
            return Err(Error::Config(format!(
                "noise has dimension {}, {} coordinates are observed",
                noise.obs_dim(),
                self.observed.len()
            )));
        }
        CoordinateObservation::new(n, self.observed.clone())?;
        self.system()?;
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("x0 must hold {n} finite values")));
        }
        let sigma0 = self.sigma0_matrix()?;
        if sigma0.shape() != (n, n) || !psd_check(&sigma0) {
            return Err(Error::Config(format!("sigma0 must be a symmetric PSD {n}x{n} matrix")));
        }
        for c in &self.constraints {
            c.validate()?;
            if c.alpha.len() != n {
                return Err(Error::Config(format!(
                    "constraint alpha has {} entries, state has {n}",
                    c.alpha.len()
                )));
            }
        }
        if !(self.jump_epsilon > 0.0 && self.jump_epsilon <= 0.5) {
            return Err(Error::Config("jump_epsilon must lie in (0, 1/2]".into()));
        }
        if !(self.failure.position_limit > 0.0) || !(self.metrics.setpoint_transient >= 0.0) {
            return Err(Error::Config("position_limit must be positive and setpoint_transient non-negative".into()));
        }
        if self.seeds.n_runs == 0 {
            return Err(Error::Config("seeds.n_runs must be at least 1".into()));
        }
        match (&self.controller, self.scenario) {
            (ControllerConfig::Clf1d { target, slack_penalty, u_max }, ScenarioId::Integrator1d) => {
                self.clf(*target, *slack_penalty, *u_max).validate()
            }
            (ControllerConfig::GainScheduled { gains, trajectory, rd2, u_max }, ScenarioId::Unicycle2d) => {
                gains.validate()?;
                trajectory.validate()?;
                if u_max.len() != m || u_max.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config(format!("u_max must hold {m} positive values")));
                }
                if ![rd2.zeta1, rd2.zeta2, rd2.gain_k].iter().all(|g| g.is_finite()) {
                    return Err(Error::Config("rd2 gains must be finite".into()));
                }
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "controller type does not match scenario {:?}",
                self.scenario
            ))),
        }
    }

    fn clf(&self, target: f64, slack_penalty: f64, u_max: f64) -> Clf1dConfig {
        Clf1dConfig {
            target,
            slack_penalty,
            u_max,
        }
    }

    pub fn system(&self) -> Result<Box<dyn ControlAffineSystem>> {
        let q = matrix_from_rows(&self.process_noise, "process_noise")?;
        Ok(match self.scenario {
            ScenarioId::Integrator1d => Box::new(Integrator1d::with_process_noise(q)?),
            ScenarioId::Unicycle2d => Box::new(Unicycle::with_process_noise(q)?),
        })
    }

    pub fn observation(&self) -> Result<CoordinateObservation> {
        CoordinateObservation::new(self.scenario.state_dim(), self.observed.clone())
    }

    pub fn sigma0_matrix(&self) -> Result<Matrix> {
        matrix_from_rows(&self.sigma0, "sigma0")
    }

    /// The 1D setpoint scenario with the published parameters.
    pub fn integrator1d() -> Self {
        Self {
            scenario: ScenarioId::Integrator1d,
            estimator: EstimatorKind::Gekf,
            noise: NoiseConfig {
                mu_p: 0.1,
                sigma_p: 0.001,
                mu_v: vec![0.01],
                r: vec![vec![0.0005f64.powi(2)]],
            },
            process_noise: vec![vec![0.0]],
            observed: vec![0],
            constraints: vec![HalfSpaceConstraint {
                alpha: vec![-1.0],
                beta: -5.0,
                delta: 0.001,
            }],
            safety_filter: true,
            schedule: Schedule::default(),
            controller: ControllerConfig::Clf1d {
                target: 6.0,
                slack_penalty: 10.0,
                u_max: 1.0,
            },
            x0: vec![0.0],
            sigma0: vec![vec![0.1]],
            initial_belief: InitialBelief::NoisyMeasurement,
            qp: QpSettings::default(),
            seeds: SeedConfig {
                base_seed: 1000,
                n_runs: 100,
            },
            metrics: MetricsConfig::default(),
            failure: FailureConfig::default(),
            jump_epsilon: default_jump_epsilon(),
        }
    }

    /// The unicycle tracking scenario with the published parameters.
    pub fn unicycle2d() -> Self {
        let diag = |v: f64| -> Vec<Vec<f64>> {
            (0..4).map(|i| (0..4).map(|j| if i == j { v } else { 0.0 }).collect()).collect()
        };
        Self {
            scenario: ScenarioId::Unicycle2d,
            estimator: EstimatorKind::Gekf,
            noise: NoiseConfig {
                mu_p: 0.1,
                sigma_p: 0.01,
                mu_v: vec![0.001],
                r: vec![vec![0.0005f64.powi(2)]],
            },
            process_noise: diag(1e-4),
            observed: vec![1],
            constraints: vec![
                HalfSpaceConstraint {
                    alpha: vec![0.0, -1.0, 0.0, 0.0],
                    beta: -5.0,
                    delta: 0.001,
                },
                HalfSpaceConstraint {
                    alpha: vec![0.0, 1.0, 0.0, 0.0],
                    beta: -5.0,
                    delta: 0.001,
                },
            ],
            safety_filter: true,
            schedule: Schedule {
                duration: 60.0,
                ..Schedule::default()
            },
            controller: ControllerConfig::GainScheduled {
                gains: GainScheduleConfig {
                    v_r: 1.0,
                    lambda1: 1.0,
                    k_v: 1.0,
                    a1: 16.0,
                    a2: 100.0,
                },
                trajectory: TrajectoryRef {
                    amplitude: 1.0,
                    omega: 0.5,
                    v_r: 1.0,
                    heading: HeadingReference::PositionBearing,
                    singularity_step: 1e-3,
                },
                rd2: Rd2Gains {
                    zeta1: 1.0,
                    zeta2: 0.75,
                    gain_k: 50.0,
                    covariance_flow: true,
                },
                u_max: vec![1.0, 1.0],
            },
            x0: vec![0.0, 0.0, 5.0, 0.45],
            sigma0: diag(0.1),
            initial_belief: InitialBelief::NoisyMeasurement,
            qp: QpSettings::default(),
            seeds: SeedConfig {
                base_seed: 2000,
                n_runs: 100,
            },
            metrics: MetricsConfig::default(),
            failure: FailureConfig::default(),
            jump_epsilon: default_jump_epsilon(),
        }
    }
}
