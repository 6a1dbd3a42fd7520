//! Dynamics, observation functions and the multiplicative measurement noise
//! generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::specfun::{psd_check, psd_sqrt, Matrix, Vector};

/// `x' = f(x) + g(x) u + w`, `w ~ N(0, Q)`.
pub trait ControlAffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, x: &Vector) -> Vector;
    fn control_matrix(&self, x: &Vector) -> Matrix;
    /// `df/dx`
    fn drift_jacobian(&self, x: &Vector) -> Matrix;
    /// `d(g(x) u)/dx`, linear in `u`.
    fn control_jacobian_term(&self, x: &Vector, u: &Vector) -> Matrix;
    fn process_noise(&self) -> &Matrix;

    /// `d(df/dx)/dx_k` for every state index `k`, when known in closed form.
    fn drift_jacobian_derivatives(&self, _x: &Vector) -> Option<Vec<Matrix>> {
        None
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        self.drift(x) + self.control_matrix(x) * u
    }

    /// `F(x, u) = d(f(x) + g(x) u)/dx`
    fn jacobian(&self, x: &Vector, u: &Vector) -> Matrix {
        self.drift_jacobian(x) + self.control_jacobian_term(x, u)
    }
}

fn validate_process_noise(q: &Matrix, n: usize) -> Result<()> {
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "process noise must be {n}x{n}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if !psd_check(q) {
        return Err(Error::Config("process noise must be symmetric PSD".into()));
    }
    Ok(())
}

/// `x' = 0.1 cos(x) + u`
#[derive(Debug, Clone)]
pub struct Integrator1d {
    q: Matrix,
}

impl Integrator1d {
    pub fn with_process_noise(q: Matrix) -> Result<Self> {
        validate_process_noise(&q, 1)?;
        Ok(Self { q })
    }
}

pub fn integrator1d_system() -> Integrator1d {
    Integrator1d {
        q: Matrix::zeros(1, 1),
    }
}

impl ControlAffineSystem for Integrator1d {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &Vector) -> Vector {
        Vector::from_element(1, 0.1 * x[0].cos())
    }
    fn control_matrix(&self, _x: &Vector) -> Matrix {
        Matrix::from_element(1, 1, 1.0)
    }
    fn drift_jacobian(&self, x: &Vector) -> Matrix {
        Matrix::from_element(1, 1, -0.1 * x[0].sin())
    }
    fn control_jacobian_term(&self, _x: &Vector, _u: &Vector) -> Matrix {
        Matrix::zeros(1, 1)
    }
    fn process_noise(&self) -> &Matrix {
        &self.q
    }
    fn drift_jacobian_derivatives(&self, x: &Vector) -> Option<Vec<Matrix>> {
        Some(vec![Matrix::from_element(1, 1, -0.1 * x[0].cos())])
    }
}

/// Unicycle with state `[x, y, v, theta]` and input `[a, omega]`.
#[derive(Debug, Clone)]
pub struct Unicycle {
    q: Matrix,
}

impl Unicycle {
    pub fn with_process_noise(q: Matrix) -> Result<Self> {
        validate_process_noise(&q, 4)?;
        Ok(Self { q })
    }
}

pub fn unicycle_system() -> Unicycle {
    Unicycle {
        q: Matrix::identity(4, 4) * 0.0001,
    }
}

impl ControlAffineSystem for Unicycle {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &Vector) -> Vector {
        let (v, th) = (x[2], x[3]);
        Vector::from_column_slice(&[v * th.cos(), v * th.sin(), 0.0, 0.0])
    }
    fn control_matrix(&self, _x: &Vector) -> Matrix {
        let mut g = Matrix::zeros(4, 2);
        g[(2, 0)] = 1.0;
        g[(3, 1)] = 1.0;
        g
    }
    fn drift_jacobian(&self, x: &Vector) -> Matrix {
        let (v, th) = (x[2], x[3]);
        let (s, c) = th.sin_cos();
        let mut f = Matrix::zeros(4, 4);
        f[(0, 2)] = c;
        f[(0, 3)] = -v * s;
        f[(1, 2)] = s;
        f[(1, 3)] = v * c;
        f
    }
    fn control_jacobian_term(&self, _x: &Vector, _u: &Vector) -> Matrix {
        Matrix::zeros(4, 4)
    }
    fn process_noise(&self) -> &Matrix {
        &self.q
    }
    fn drift_jacobian_derivatives(&self, x: &Vector) -> Option<Vec<Matrix>> {
        let (v, th) = (x[2], x[3]);
        let (s, c) = th.sin_cos();
        let zero = Matrix::zeros(4, 4);
        let mut dv = Matrix::zeros(4, 4);
        dv[(0, 3)] = -s;
        dv[(1, 3)] = c;
        let mut dth = Matrix::zeros(4, 4);
        dth[(0, 2)] = -s;
        dth[(0, 3)] = -v * c;
        dth[(1, 2)] = c;
        dth[(1, 3)] = -v * s;
        Some(vec![zero.clone(), zero, dv, dth])
    }
}

/// Observation function `l(x)` and its Jacobian `H(x)`.
pub trait ObservationModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn observe(&self, x: &Vector) -> Vector;
    fn jacobian(&self, x: &Vector) -> Matrix;
}

/// Observes a subset of state coordinates directly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateObservation {
    n: usize,
    indices: Vec<usize>,
}

impl CoordinateObservation {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(Error::Config(format!(
                "observed indices {indices:?} invalid for state dimension {n}"
            )));
        }
        Ok(Self { n, indices })
    }

    /// `l(x) = x`
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            indices: (0..n).collect(),
        }
    }
}

impl ObservationModel for CoordinateObservation {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn obs_dim(&self) -> usize {
        self.indices.len()
    }
    fn observe(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]))
    }
    fn jacobian(&self, _x: &Vector) -> Matrix {
        let mut h = Matrix::zeros(self.indices.len(), self.n);
        for (r, &i) in self.indices.iter().enumerate() {
            h[(r, i)] = 1.0;
        }
        h
    }
}

/// `z = (1 + p) l(x) + v` with `p ~ N(mu_p 1, sigma_p^2 I)`, `v ~ N(mu_v, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub mu_v: Vector,
    pub r: Matrix,
}

impl NoiseModel {
    pub fn new(mu_p: f64, sigma_p: f64, mu_v: Vector, r: Matrix) -> Result<Self> {
        let model = Self {
            mu_p,
            sigma_p,
            mu_v,
            r,
        };
        model.validate()?;
        Ok(model)
    }

    /// Scalar parameters broadcast to an `o`-dimensional observation.
    pub fn broadcast(mu_p: f64, sigma_p: f64, mu_v: f64, r: f64, o: usize) -> Result<Self> {
        Self::new(
            mu_p,
            sigma_p,
            Vector::from_element(o, mu_v),
            Matrix::identity(o, o) * r,
        )
    }

    pub fn obs_dim(&self) -> usize {
        self.mu_v.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p >= 0.0) || !self.mu_p.is_finite() || !self.sigma_p.is_finite() {
            return Err(Error::Config(format!(
                "multiplicative noise needs finite mu_p and sigma_p >= 0 (got {}, {})",
                self.mu_p, self.sigma_p
            )));
        }
        let o = self.mu_v.len();
        if o == 0 || self.r.shape() != (o, o) {
            return Err(Error::Dimension(format!(
                "additive noise: mu_v has length {o}, R is {}x{}",
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        if !psd_check(&self.r) {
            return Err(Error::Config("additive noise covariance R must be symmetric PSD".into()));
        }
        Ok(())
    }
}

/// Seeded pseudorandom stream (ChaCha8, portable across platforms).
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn standard_normal_vector(&mut self, n: usize) -> Vector {
        Vector::from_iterator(n, (0..n).map(|_| self.standard_normal()))
    }

    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random(&mut self.inner)
    }
}

/// Draws `p` and then `v`, and returns `(1 + p) .* l(x) + v`.
pub fn sample_measurement(
    obs: &dyn ObservationModel,
    noise: &NoiseModel,
    x_true: &Vector,
    rng: &mut SimRng,
) -> Vector {
    let o = obs.obs_dim();
    let ell = obs.observe(x_true);
    let p = rng.standard_normal_vector(o) * noise.sigma_p
        + Vector::from_element(o, noise.mu_p);
    let v = psd_sqrt(&noise.r) * rng.standard_normal_vector(o) + &noise.mu_v;
    ell.zip_map(&p, |l, pi| (1.0 + pi) * l) + v
}
