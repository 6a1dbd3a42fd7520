//! CVaR belief barriers over half-space constraints and the BCBF rows they
//! induce on the control.
//!
//! For a constraint `alpha' x - beta >= 0` at risk level `delta` and a
//! Gaussian belief `(mu, Sigma)`, the barrier is
//!
//! ```text
//! h_b(b) = alpha' mu - beta - kappa * sqrt(alpha' Sigma alpha),   kappa = phi(q_delta) / delta
//! ```
//!
//! All Lie derivatives are taken along the belief dynamics, so they carry a
//! covariance-flow term `<dh_b/dSigma, F Sigma + Sigma F' + Q>` next to the
//! usual mean term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Belief, MeasurementUpdateReport};
use crate::models::ControlAffineSystem;
use crate::specfun::{erf_inv, erfc, std_normal_pdf, std_normal_quantile, Matrix, Vector};

/// `alpha' x - beta >= 0`, to hold with probability `1 - delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpaceConstraint {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
}

impl HalfSpaceConstraint {
    pub fn new(alpha: Vec<f64>, beta: f64, delta: f64) -> Result<Self> {
        let c = Self { alpha, beta, delta };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.iter().all(|&a| a == 0.0) {
            return Err(Error::Config("constraint normal alpha must be non-zero".into()));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) || !self.beta.is_finite() {
            return Err(Error::Config("constraint coefficients must be finite".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "risk level delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn alpha_vector(&self) -> Vector {
        Vector::from_column_slice(&self.alpha)
    }

    /// `alpha' x - beta`
    pub fn margin(&self, x: &Vector) -> f64 {
        self.alpha.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>() - self.beta
    }

    /// `phi(q_delta) / delta`, the CVaR standard-deviation multiplier.
    pub fn risk_factor(&self) -> Result<f64> {
        if self.delta >= 1.0 {
            // q_1 = +inf, phi(q_1) = 0
            return Ok(0.0);
        }
        Ok(std_normal_pdf(std_normal_quantile(self.delta)?)? / self.delta)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.alpha.len() != n {
            return Err(Error::Dimension(format!(
                "constraint has {} coefficients, state has dimension {n}",
                self.alpha.len()
            )));
        }
        Ok(())
    }
}

/// `coeff_u . u >= rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct BcbfRow {
    pub coeff_u: Vector,
    pub rhs: f64,
}

impl BcbfRow {
    pub fn is_satisfied(&self, u: &Vector, tol: f64) -> bool {
        self.coeff_u.dot(u) >= self.rhs - tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyDiagnostics {
    pub h_b_value: f64,
    pub leave_probability_bound: f64,
    pub gamma_min: f64,
    pub xi: f64,
}

/// Gains of the relative-degree-2 constraint
/// `h'' + k zeta1 h' + k zeta2 h >= 0` along the belief dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rd2Gains {
    pub zeta1: f64,
    pub zeta2: f64,
    pub gain_k: f64,
    /// Include the covariance-flow terms in the Lie derivatives.
    #[serde(default = "default_true")]
    pub covariance_flow: bool,
}

fn default_true() -> bool {
    true
}

fn direction_variance(c: &HalfSpaceConstraint, b: &Belief) -> Result<(Vector, f64)> {
    c.check_dim(b.dim())?;
    let a = c.alpha_vector();
    let var = a.dot(&(&b.cov * &a));
    if !(var > 0.0) {
        return Err(Error::DegenerateCovariance(var));
    }
    Ok((a, var))
}

/// `Pr[alpha' x - beta >= 0]` under the belief.
pub fn halfspace_probability(c: &HalfSpaceConstraint, b: &Belief) -> Result<f64> {
    let (_, var) = direction_variance(c, b)?;
    let t = c.margin(&b.mean) / (2.0 * var).sqrt();
    // 1/2 (1 + erf(t)) written through erfc to keep the lower tail
    Ok(0.5 * erfc(-t)?)
}

/// `CVaR_delta(alpha' x - beta)`, which is the belief barrier `h_b(b)`.
pub fn cvar_halfspace(c: &HalfSpaceConstraint, b: &Belief) -> Result<f64> {
    let (_, var) = direction_variance(c, b)?;
    Ok(c.margin(&b.mean) - var.sqrt() * c.risk_factor()?)
}

/// Whether `h_b >= 0` and `Pr >= 1 - delta` agree for this belief.
pub fn cvar_probability_equivalence_check(c: &HalfSpaceConstraint, b: &Belief) -> bool {
    match (cvar_halfspace(c, b), halfspace_probability(c, b)) {
        (Ok(h), Ok(p)) => (h >= 0.0) == (p >= 1.0 - c.delta),
        _ => false,
    }
}

/// `(dh_b/dmu, dh_b/dSigma)`.
pub fn barrier_gradients(c: &HalfSpaceConstraint, b: &Belief) -> Result<(Vector, Matrix)> {
    let (a, var) = direction_variance(c, b)?;
    let s = var.sqrt();
    let d_sigma = &a * a.transpose() * (-c.risk_factor()? / (2.0 * s));
    Ok((a, d_sigma))
}

/// `F Sigma + Sigma F' + Q`
fn covariance_flow(f: &Matrix, sigma: &Matrix, q: &Matrix) -> Matrix {
    let fs = f * sigma;
    &fs + fs.transpose() + q
}

fn unit(m: usize, j: usize) -> Vector {
    let mut e = Vector::zeros(m);
    e[j] = 1.0;
    e
}

/// `d h_b/dt` along the belief flow `mu' = f + g u`, `Sigma' = F Sigma + Sigma F' + Q`.
pub fn barrier_rate(
    c: &HalfSpaceConstraint,
    b: &Belief,
    sys: &dyn ControlAffineSystem,
    u: &Vector,
) -> Result<f64> {
    let (grad_mu, grad_sigma) = barrier_gradients(c, b)?;
    let mu_dot = sys.dynamics(&b.mean, u);
    let sigma_dot = covariance_flow(&sys.jacobian(&b.mean, u), &b.cov, sys.process_noise());
    Ok(grad_mu.dot(&mu_dot) + grad_sigma.dot(&sigma_dot))
}

/// Relative-degree-1 BCBF row: `dh_b/db (f_b + g_b u) >= -h_b`.
pub fn bcbf_row_rd1(
    c: &HalfSpaceConstraint,
    b: &Belief,
    sys: &dyn ControlAffineSystem,
) -> Result<BcbfRow> {
    let h = cvar_halfspace(c, b)?;
    let (grad_mu, grad_sigma) = barrier_gradients(c, b)?;
    let mu = &b.mean;
    let m = sys.control_dim();

    let sigma_dot0 = covariance_flow(&sys.drift_jacobian(mu), &b.cov, sys.process_noise());
    let drift_rate = grad_mu.dot(&sys.drift(mu)) + grad_sigma.dot(&sigma_dot0);

    let g = sys.control_matrix(mu);
    let zero_q = Matrix::zeros(b.dim(), b.dim());
    let coeff_u = Vector::from_iterator(
        m,
        (0..m).map(|j| {
            let fj = sys.control_jacobian_term(mu, &unit(m, j));
            grad_mu.dot(&g.column(j)) + grad_sigma.dot(&covariance_flow(&fj, &b.cov, &zero_q))
        }),
    );
    Ok(BcbfRow {
        coeff_u,
        rhs: -h - drift_rate,
    })
}

/// `d(df/dx)/dx_k` from the system, or central differences with step 1e-6.
fn drift_jacobian_derivatives(sys: &dyn ControlAffineSystem, x: &Vector) -> Vec<Matrix> {
    if let Some(d) = sys.drift_jacobian_derivatives(x) {
        return d;
    }
    const STEP: f64 = 1e-6;
    (0..x.len())
        .map(|k| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += STEP;
            xm[k] -= STEP;
            (sys.drift_jacobian(&xp) - sys.drift_jacobian(&xm)) / (2.0 * STEP)
        })
        .collect()
}

/// Lie derivatives of `h_b` needed by the relative-degree-2 row.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierLieDerivatives {
    pub h: f64,
    pub lg_h: Vector,
    pub lf_h: f64,
    pub lf2_h: f64,
    pub lglf_h: Vector,
}

pub fn barrier_lie_derivatives(
    c: &HalfSpaceConstraint,
    b: &Belief,
    sys: &dyn ControlAffineSystem,
    covariance_terms: bool,
) -> Result<BarrierLieDerivatives> {
    let (a, var) = direction_variance(c, b)?;
    let h = cvar_halfspace(c, b)?;
    let kappa = c.risk_factor()?;
    let s = var.sqrt();
    let mu = &b.mean;
    let sigma = &b.cov;
    let n = b.dim();
    let m = sys.control_dim();
    let cov_w = if covariance_terms { 1.0 } else { 0.0 };

    let f = sys.drift(mu);
    let g = sys.control_matrix(mu);
    let f0 = sys.drift_jacobian(mu);
    let q = sys.process_noise();
    let zero_q = Matrix::zeros(n, n);
    let sigma_dot0 = covariance_flow(&f0, sigma, q);
    let sigma_dot_u: Vec<Matrix> = (0..m)
        .map(|j| covariance_flow(&sys.control_jacobian_term(mu, &unit(m, j)), sigma, &zero_q))
        .collect();

    // <dh/dSigma, M> = -kappa a'Ma / (2 s)
    let dsig = |mat: &Matrix| -kappa * a.dot(&(mat * &a)) / (2.0 * s) * cov_w;

    let lg_h = Vector::from_iterator(
        m,
        (0..m).map(|j| a.dot(&g.column(j)) + dsig(&sigma_dot_u[j])),
    );

    // L_f h = a'f + c(mu, Sigma),  c = -kappa (2 a'F Sigma a + a'Q a) / (2 s)
    let sigma_a = sigma * &a;
    let fsa = a.dot(&(&f0 * &sigma_a));
    let qa = a.dot(&(q * &a));
    let lf_h = a.dot(&f) - cov_w * kappa * (2.0 * fsa + qa) / (2.0 * s);

    // gradient of L_f h with respect to the mean
    let dfs = drift_jacobian_derivatives(sys, mu);
    let mut grad_mu = f0.transpose() * &a;
    if covariance_terms {
        for (k, dfk) in dfs.iter().enumerate() {
            grad_mu[k] -= kappa * a.dot(&(dfk * &sigma_a)) / s;
        }
    }

    // directional derivative of L_f h with respect to Sigma
    let dlf_dsigma = |sd: &Matrix| {
        if !covariance_terms {
            return 0.0;
        }
        let asda = a.dot(&(sd * &a));
        let afsda = a.dot(&(&f0 * (sd * &a)));
        -kappa * (afsda / s - (2.0 * fsa + qa) * asda / (4.0 * s * s * s))
    };

    let lf2_h = grad_mu.dot(&f) + dlf_dsigma(&sigma_dot0);
    let lglf_h = Vector::from_iterator(
        m,
        (0..m).map(|j| grad_mu.dot(&g.column(j)) + dlf_dsigma(&sigma_dot_u[j])),
    );

    Ok(BarrierLieDerivatives {
        h,
        lg_h,
        lf_h,
        lf2_h,
        lglf_h,
    })
}

/// Relative-degree-2 BCBF row
/// `L_g L_f h_b u >= -k (zeta1 L_f h_b + zeta2 h_b) - L_f^2 h_b`.
pub fn bcbf_row_rd2(
    c: &HalfSpaceConstraint,
    b: &Belief,
    sys: &dyn ControlAffineSystem,
    gains: &Rd2Gains,
) -> Result<BcbfRow> {
    let lie = barrier_lie_derivatives(c, b, sys, gains.covariance_flow)?;
    let lg = lie.lg_h.amax();
    if lg > 1e-12 {
        return Err(Error::WrongRelativeDegree(lg));
    }
    let rhs = -gains.gain_k * (gains.zeta1 * lie.lf_h + gains.zeta2 * lie.h) - lie.lf2_h;
    Ok(BcbfRow {
        coeff_u: lie.lglf_h,
        rhs,
    })
}

/// Jump diagnostics for a discrete update from `b_prior`: the bound on
/// `Pr[h_b(b+) < 0]` and the offset `gamma` that keeps `b+` safe with
/// probability `1 - epsilon`.
pub fn jump_diagnostics(
    c: &HalfSpaceConstraint,
    b_prior: &Belief,
    report: &MeasurementUpdateReport,
    epsilon: f64,
) -> Result<SafetyDiagnostics> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1/2], got {epsilon}")));
    }
    let (a, var_prior) = direction_variance(c, b_prior)?;
    let h = cvar_halfspace(c, b_prior)?;
    let kappa = c.risk_factor()?;
    let n = b_prior.dim();
    let post_cov = (Matrix::identity(n, n) - &report.gain_jacobian) * &b_prior.cov;
    let var_post = a.dot(&(post_cov * &a)).max(0.0);
    let xi = kappa * ((2.0 * var_prior).sqrt() - (2.0 * var_post).sqrt());
    let lambda = a.dot(&(&report.innovation_term_covariance * &a));

    if !(lambda > 0.0) {
        return Ok(SafetyDiagnostics {
            h_b_value: h,
            leave_probability_bound: if xi >= 0.0 { 0.0 } else { 1.0 },
            gamma_min: -xi,
            xi,
        });
    }
    let root = (2.0 * lambda).sqrt();
    let bound = (0.5 * erfc(xi / root)?).clamp(0.0, 1.0);
    let gamma_min = root * erf_inv(1.0 - 2.0 * epsilon)? - xi;
    Ok(SafetyDiagnostics {
        h_b_value: h,
        leave_probability_bound: bound,
        gamma_min,
        xi,
    })
}
