//! Nominal controllers and their safety-filtered composition.
//!
//! The 1D setpoint task uses a CLF-CBF-QP over `(u, rho)`; the unicycle task
//! filters a gain-scheduled tracking law through a projection QP. When the QP
//! does not return a solved status the previous input, clamped to the box, is
//! applied and the step is flagged.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::belief_safety::{bcbf_row_rd1, BcbfRow, HalfSpaceConstraint};
use crate::error::{Error, Result};
use crate::estimators::Belief;
use crate::models::ControlAffineSystem;
use crate::qp::{solve_warm, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::specfun::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clf1dConfig {
    pub target: f64,
    pub slack_penalty: f64,
    pub u_max: f64,
}

impl Clf1dConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slack_penalty > 0.0 && self.u_max > 0.0) || !self.target.is_finite() {
            return Err(Error::Config(format!(
                "CLF controller needs slack_penalty > 0, u_max > 0 and a finite target, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainScheduleConfig {
    pub v_r: f64,
    pub lambda1: f64,
    pub k_v: f64,
    pub a1: f64,
    pub a2: f64,
}

impl GainScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda1, self.k_v, self.a1, self.a2].iter().all(|g| g.is_finite());
        if !(self.v_r > 0.0) || !finite {
            return Err(Error::Config(format!(
                "gain schedule needs v_r > 0 and finite gains, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(k_x, k_v, k_y, k_theta)`
    pub fn gains(&self) -> (f64, f64, f64, f64) {
        (self.lambda1, self.k_v, self.a1 / self.v_r, self.a2)
    }
}

/// Heading of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingReference {
    /// `arctan(y_d / x_d)`, the bearing of the reference position.
    #[default]
    PositionBearing,
    /// `atan2(dy_d/dt, dx_d/dt)`
    PathTangent,
}

fn default_singularity_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRef {
    pub amplitude: f64,
    pub omega: f64,
    pub v_r: f64,
    #[serde(default)]
    pub heading: HeadingReference,
    /// Time at which the bearing is evaluated in place of `t = 0`.
    #[serde(default = "default_singularity_step")]
    pub singularity_step: f64,
}

impl TrajectoryRef {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.omega > 0.0 && self.v_r > 0.0 && self.singularity_step > 0.0) {
            return Err(Error::Config(format!(
                "trajectory needs amplitude >= 0, omega > 0, v_r > 0, singularity_step > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn position(&self, t: f64) -> (f64, f64) {
        (self.v_r * t, self.amplitude * (self.omega * t).sin() + self.amplitude)
    }
}

/// `[x_d, y_d, v_d, theta_d]` at time `t`.
pub fn reference_state(traj: &TrajectoryRef, t: f64) -> Vector {
    let (xd, yd) = traj.position(t);
    let theta = match traj.heading {
        HeadingReference::PositionBearing => {
            let (xs, ys) = if xd == 0.0 {
                traj.position(traj.singularity_step)
            } else {
                (xd, yd)
            };
            (ys / xs).atan()
        }
        HeadingReference::PathTangent => {
            (traj.amplitude * traj.omega * (traj.omega * t).cos()).atan2(traj.v_r)
        }
    };
    Vector::from_column_slice(&[xd, yd, traj.v_r, theta])
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// `[-k_x e_x - k_v e_v, -k_y e_y - k_theta e_theta]` with `e = x_est - x_ref`.
pub fn gain_scheduled_control(cfg: &GainScheduleConfig, x_est: &Vector, x_ref: &Vector) -> Vector {
    let (kx, kv, ky, kth) = cfg.gains();
    let ex = x_est[0] - x_ref[0];
    let ey = x_est[1] - x_ref[1];
    let ev = x_est[2] - x_ref[2];
    let eth = wrap_angle(x_est[3] - x_ref[3]);
    Vector::from_column_slice(&[-kx * ex - kv * ev, -ky * ey - kth * eth])
}

/// Per-run controller memory: the last QP solution and the last applied input.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub warm: Option<QpSolution>,
    pub last_u: Vector,
}

impl FilterState {
    pub fn new(m: usize) -> Self {
        Self {
            warm: None,
            last_u: Vector::zeros(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub u: Vector,
    /// CLF relaxation (zero for the tracking filter).
    pub slack: f64,
    pub status: QpStatus,
    /// The QP failed and the clamped previous input was applied.
    pub fallback: bool,
}

fn clamp_box(u: &Vector, u_max: &Vector) -> Vector {
    u.zip_map(u_max, |v, m| v.clamp(-m, m))
}

fn finish(
    state: &mut FilterState,
    sol: QpSolution,
    m: usize,
    u_max: &Vector,
    slack_of: impl Fn(&QpSolution) -> f64,
) -> ControlOutcome {
    let status = sol.status;
    let outcome = if status == QpStatus::Solved && sol.primal.iter().all(|v| v.is_finite()) {
        ControlOutcome {
            u: clamp_box(&sol.primal.rows(0, m).into_owned(), u_max),
            slack: slack_of(&sol),
            status,
            fallback: false,
        }
    } else {
        ControlOutcome {
            u: clamp_box(&state.last_u, u_max),
            slack: 0.0,
            status,
            fallback: true,
        }
    };
    state.warm = (status == QpStatus::Solved).then_some(sol);
    state.last_u = outcome.u.clone();
    outcome
}

/// CLF-CBF-QP for a scalar system with `V = (mu - target)^2`:
///
/// ```text
/// min 1/2 u^2 + s rho^2
/// s.t. L_f V + L_g V u <= -V + rho,   BCBF rows,   |u| <= u_max
/// ```
pub fn clf_cbf_qp_control(
    cfg: &Clf1dConfig,
    constraints: &[HalfSpaceConstraint],
    b: &Belief,
    sys: &dyn ControlAffineSystem,
    settings: &QpSettings,
    state: &mut FilterState,
) -> Result<ControlOutcome> {
    if sys.state_dim() != 1 || sys.control_dim() != 1 || b.dim() != 1 {
        return Err(Error::Dimension(
            "the CLF-CBF-QP controller handles scalar systems only".into(),
        ));
    }
    let mu = b.mean[0];
    let e = mu - cfg.target;
    let v = e * e;
    let lf_v = 2.0 * e * sys.drift(&b.mean)[0];
    let lg_v = 2.0 * e * sys.control_matrix(&b.mean)[(0, 0)];

    let rows: Vec<BcbfRow> = constraints
        .iter()
        .map(|c| bcbf_row_rd1(c, b, sys))
        .collect::<Result<_>>()?;
    let r = 1 + rows.len();
    let mut a = Matrix::zeros(r, 2);
    let mut lo = Vector::from_element(r, f64::NEG_INFINITY);
    let mut hi = Vector::from_element(r, f64::INFINITY);
    a[(0, 0)] = lg_v;
    a[(0, 1)] = -1.0;
    hi[0] = -v - lf_v;
    for (i, row) in rows.iter().enumerate() {
        a[(i + 1, 0)] = row.coeff_u[0];
        lo[i + 1] = row.rhs;
    }
    let p = QpProblem {
        hessian: Matrix::from_diagonal(&Vector::from_column_slice(&[1.0, 2.0 * cfg.slack_penalty])),
        linear: Vector::zeros(2),
        ineq_lhs: a,
        ineq_lo: lo,
        ineq_hi: hi,
        box_lower: Vector::from_column_slice(&[-cfg.u_max, f64::NEG_INFINITY]),
        box_upper: Vector::from_column_slice(&[cfg.u_max, f64::INFINITY]),
    };
    let sol = solve_warm(&p, settings, state.warm.as_ref())?;
    let u_max = Vector::from_element(1, cfg.u_max);
    Ok(finish(state, sol, 1, &u_max, |s| s.primal[1]))
}

/// `min 1/2 |u - u_nom|^2` subject to every row and `|u_i| <= u_max_i`.
pub fn safety_filtered_control(
    nominal: &Vector,
    rows: &[BcbfRow],
    u_max: &Vector,
    settings: &QpSettings,
    state: &mut FilterState,
) -> Result<ControlOutcome> {
    let m = nominal.len();
    if u_max.len() != m || rows.iter().any(|r| r.coeff_u.len() != m) {
        return Err(Error::Dimension("safety filter rows do not match the input dimension".into()));
    }
    let mut a = Matrix::zeros(rows.len(), m);
    for (i, row) in rows.iter().enumerate() {
        a.row_mut(i).copy_from(&row.coeff_u.transpose());
    }
    let p = QpProblem {
        hessian: Matrix::identity(m, m),
        linear: -nominal,
        ineq_lhs: a,
        ineq_lo: Vector::from_iterator(rows.len(), rows.iter().map(|r| r.rhs)),
        ineq_hi: Vector::from_element(rows.len(), f64::INFINITY),
        box_lower: -u_max,
        box_upper: u_max.clone(),
    };
    let sol = solve_warm(&p, settings, state.warm.as_ref())?;
    Ok(finish(state, sol, m, u_max, |_| 0.0))
}
