//! Continuous-discrete Gaussian belief propagation.
//!
//! The time update integrates the mean with RK4 and the covariance with one
//! Euler step per control period. Two measurement updates share the same
//! gain machinery:
//!
//! * [`ekf_update`]: the additive-noise baseline, which predicts `l(mu)` and
//!   ignores the noise means.
//! * [`gekf_update`]: the generalized EKF, which carries the multiplicative
//!   noise `p` through the innovation covariance, the gain, the covariance
//!   correction and the predicted measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ControlAffineSystem, NoiseModel, ObservationModel};
use crate::specfun::{psd_check, solve_spd, symmetrize, Matrix, Vector};

/// Gaussian belief `(mu, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: Vector,
    pub cov: Matrix,
}

impl Belief {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "belief mean has length {n}, covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !psd_check(&cov) {
            return Err(Error::Domain("belief covariance is not symmetric PSD".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ekf,
    Gekf,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Ekf => "ekf",
            EstimatorKind::Gekf => "gekf",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ekf" => Ok(EstimatorKind::Ekf),
            "gekf" => Ok(EstimatorKind::Gekf),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Everything a measurement update computed along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementUpdateReport {
    /// `K` (EKF) or `K_G` (GEKF), n x o.
    pub kalman_gain: Matrix,
    /// `S` or `S_G`, o x o.
    pub innovation_covariance: Matrix,
    pub predicted_measurement: Vector,
    /// `z - z_hat`
    pub innovation: Vector,
    /// `Lambda = K S K^T` or `Lambda_G = K_G S_G K_G^T`.
    pub innovation_term_covariance: Matrix,
    /// The matrix `G` with `Sigma+ = (I - G) Sigma-`: `K H` or `(1 + mu_p) K_G H`.
    pub gain_jacobian: Matrix,
}

impl MeasurementUpdateReport {
    /// `theta = K (z - z_hat)`, the jump applied to the mean.
    pub fn innovation_term(&self) -> Vector {
        &self.kalman_gain * &self.innovation
    }
}

fn ensure_finite(v: &Vector, m: &Matrix) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            component: format!("mean[{i}]"),
        });
    }
    if let Some(k) = m.iter().position(|x| !x.is_finite()) {
        let n = m.nrows();
        return Err(Error::Divergence {
            component: format!("covariance[{}, {}]", k % n, k / n),
        });
    }
    Ok(())
}

/// Propagates the belief over `dt` with the control held constant.
pub fn time_update(
    sys: &dyn ControlAffineSystem,
    b: &Belief,
    u: &Vector,
    dt: f64,
) -> Result<Belief> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let mu = &b.mean;
    let k1 = sys.dynamics(mu, u);
    let k2 = sys.dynamics(&(mu + &k1 * (0.5 * dt)), u);
    let k3 = sys.dynamics(&(mu + &k2 * (0.5 * dt)), u);
    let k4 = sys.dynamics(&(mu + &k3 * dt), u);
    let mean = mu + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

    let f = sys.jacobian(mu, u);
    let fs = &f * &b.cov;
    let cov_dot = &fs + fs.transpose() + sys.process_noise();
    let cov = symmetrize(&(&b.cov + cov_dot * dt));

    ensure_finite(&mean, &cov)?;
    Ok(Belief { mean, cov })
}

/// Shared gain step. `scale` multiplies `H` in the gain and the covariance
/// correction (`1` for the EKF, `1 + mu_p` for the GEKF).
fn kalman_step(
    prior: &Belief,
    h: &Matrix,
    s: Matrix,
    scale: f64,
    z_hat: Vector,
    z: &Vector,
) -> Result<(Belief, MeasurementUpdateReport)> {
    if z.len() != z_hat.len() {
        return Err(Error::Dimension(format!(
            "measurement has length {}, model predicts {}",
            z.len(),
            z_hat.len()
        )));
    }
    let sigma = &prior.cov;
    // K = scale Sigma H^T S^-1 = (S^-1 (scale H Sigma))^T since S and Sigma are symmetric
    let h_sigma = h * sigma;
    let k_t = solve_spd(&s, &(&h_sigma * scale)).map_err(|_| Error::MeasurementRejected)?;
    let k = k_t.transpose();
    let innovation = z - &z_hat;
    let mean = &prior.mean + &k * &innovation;
    let gain_jacobian = &k * h * scale;
    let cov = symmetrize(&(sigma - &gain_jacobian * sigma));
    let lambda = symmetrize(&(&k * &s * k.transpose()));
    ensure_finite(&mean, &cov)?;

    if cov.trace() > sigma.trace() * (1.0 + 1e-12) + 1e-15 || !psd_check(&cov) {
        log::warn!(
            "measurement update produced a covariance that is not a contraction (trace {} -> {})",
            sigma.trace(),
            cov.trace()
        );
    }

    let posterior = Belief { mean, cov };
    let report = MeasurementUpdateReport {
        kalman_gain: k,
        innovation_covariance: s,
        predicted_measurement: z_hat,
        innovation,
        innovation_term_covariance: lambda,
        gain_jacobian,
    };
    Ok((posterior, report))
}

fn check_dims(obs: &dyn ObservationModel, noise: &NoiseModel, prior: &Belief) -> Result<()> {
    if obs.state_dim() != prior.dim() || obs.obs_dim() != noise.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation model is {}->{}, belief has dimension {}, noise model has dimension {}",
            obs.state_dim(),
            obs.obs_dim(),
            prior.dim(),
            noise.obs_dim()
        )));
    }
    Ok(())
}

/// Standard EKF update assuming `z = l(x) + v` with zero-mean `v`.
pub fn ekf_update(
    obs: &dyn ObservationModel,
    noise: &NoiseModel,
    prior: &Belief,
    z: &Vector,
) -> Result<(Belief, MeasurementUpdateReport)> {
    check_dims(obs, noise, prior)?;
    let h = obs.jacobian(&prior.mean);
    let s = &h * &prior.cov * h.transpose() + &noise.r;
    let z_hat = obs.observe(&prior.mean);
    kalman_step(prior, &h, s, 1.0, z_hat, z)
}

/// Generalized EKF update for `z = (1 + p) l(x) + v`.
pub fn gekf_update(
    obs: &dyn ObservationModel,
    noise: &NoiseModel,
    prior: &Belief,
    z: &Vector,
) -> Result<(Belief, MeasurementUpdateReport)> {
    check_dims(obs, noise, prior)?;
    let h = obs.jacobian(&prior.mean);
    let ell = obs.observe(&prior.mean);
    let scale = 1.0 + noise.mu_p;
    let hsh = &h * &prior.cov * h.transpose();
    let m = Matrix::from_diagonal(&(&hsh + &ell * ell.transpose()).diagonal());
    let s = &hsh * (scale * scale) + m * (noise.sigma_p * noise.sigma_p) + &noise.r;
    let z_hat = &ell * scale + &noise.mu_v;
    kalman_step(prior, &h, s, scale, z_hat, z)
}

pub fn measurement_update(
    kind: EstimatorKind,
    obs: &dyn ObservationModel,
    noise: &NoiseModel,
    prior: &Belief,
    z: &Vector,
) -> Result<(Belief, MeasurementUpdateReport)> {
    match kind {
        EstimatorKind::Ekf => ekf_update(obs, noise, prior, z),
        EstimatorKind::Gekf => gekf_update(obs, noise, prior, z),
    }
}

/// Empirical mean and (unbiased) covariance of the innovation terms
/// `theta = K (z - z_hat)` over a stream of updates.
pub fn innovation_statistics<'a, I>(reports: I) -> Result<(Vector, Matrix)>
where
    I: IntoIterator<Item = &'a MeasurementUpdateReport>,
{
    let thetas: Vec<Vector> = reports.into_iter().map(|r| r.innovation_term()).collect();
    if thetas.len() < 2 {
        return Err(Error::Domain(format!(
            "innovation statistics need at least 2 reports, got {}",
            thetas.len()
        )));
    }
    let n = thetas[0].len();
    let count = thetas.len() as f64;
    let mean = thetas.iter().fold(Vector::zeros(n), |acc, t| acc + t) / count;
    let mut cov = Matrix::zeros(n, n);
    for t in &thetas {
        let d = t - &mean;
        cov += &d * d.transpose();
    }
    Ok((mean, cov / (count - 1.0)))
}
