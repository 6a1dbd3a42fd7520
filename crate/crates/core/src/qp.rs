//! Small dense convex QP solver
//!
//! ```text
//! minimize   1/2 u' H u + c' u
//! subject to lo <= A u <= hi,   lower <= u <= upper
//! ```
//!
//! Operator splitting (ADMM) on the stacked constraint matrix `[A; I]` with
//! over-relaxation and adaptive step size. Candidate active sets taken from
//! the iterates are polished by an exact reduced KKT solve, which is accepted
//! only when it satisfies the optimality conditions to the requested
//! tolerances. A previous solution seeds both the iterates and the first
//! active-set guess.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{psd_check, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: Matrix,
    pub linear: Vector,
    pub ineq_lhs: Matrix,
    pub ineq_lo: Vector,
    pub ineq_hi: Vector,
    pub box_lower: Vector,
    pub box_upper: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIters,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIters => "max_iters",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: Vector,
    /// Multipliers of the stacked rows `[A; I]`; positive at an active upper
    /// bound, negative at an active lower bound.
    pub dual: Vector,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            max_iters: 4000,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) || self.max_iters == 0 {
            return Err(Error::Config(format!(
                "QP settings need positive tolerances and max_iters (got {:?})",
                self
            )));
        }
        Ok(())
    }
}

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const CHECK_EVERY: usize = 25;
const ADAPT_EVERY: usize = 50;
// bounded so the step size cannot cycle
const MAX_RHO_UPDATES: usize = 10;
const EPS_INFEASIBLE: f64 = 1e-6;

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.ineq_lhs.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let r = self.num_rows();
        if self.hessian.shape() != (d, d)
            || self.ineq_lhs.ncols() != d
            || self.ineq_lo.len() != r
            || self.ineq_hi.len() != r
            || self.box_lower.len() != d
            || self.box_upper.len() != d
        {
            return Err(Error::Dimension(format!(
                "inconsistent QP shapes: H {:?}, c {}, A {:?}, lo {}, hi {}, box {} / {}",
                self.hessian.shape(),
                d,
                self.ineq_lhs.shape(),
                self.ineq_lo.len(),
                self.ineq_hi.len(),
                self.box_lower.len(),
                self.box_upper.len()
            )));
        }
        if !psd_check(&self.hessian) {
            return Err(Error::Domain("QP Hessian must be symmetric PSD".into()));
        }
        if self.linear.iter().chain(self.ineq_lhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("QP data must be finite".into()));
        }
        let (lo, hi) = self.stacked_bounds();
        for i in 0..lo.len() {
            if lo[i].is_nan() || hi[i].is_nan() || lo[i] > hi[i] || lo[i] == f64::INFINITY || hi[i] == f64::NEG_INFINITY {
                return Err(Error::Domain(format!(
                    "QP bound {i} is not an interval: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(())
    }

    /// `[A; I]`
    fn stacked_matrix(&self) -> Matrix {
        let d = self.dim();
        let r = self.num_rows();
        let mut c = Matrix::zeros(r + d, d);
        if r > 0 {
            c.rows_mut(0, r).copy_from(&self.ineq_lhs);
        }
        c.rows_mut(r, d).fill_with_identity();
        c
    }

    fn stacked_bounds(&self) -> (Vector, Vector) {
        let lo = Vector::from_iterator(
            self.num_rows() + self.dim(),
            self.ineq_lo.iter().chain(self.box_lower.iter()).copied(),
        );
        let hi = Vector::from_iterator(
            self.num_rows() + self.dim(),
            self.ineq_hi.iter().chain(self.box_upper.iter()).copied(),
        );
        (lo, hi)
    }

    pub fn objective(&self, u: &Vector) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.linear.dot(u)
    }

    /// Writes the instance as JSON; unbounded sides are stored as `null`.
    pub fn dump_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&QpProblemJson::from(self))
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let raw: QpProblemJson =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let p = raw.into_problem()?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QpProblemJson {
    hessian: Vec<Vec<f64>>,
    linear: Vec<f64>,
    ineq_lhs: Vec<Vec<f64>>,
    ineq_lo: Vec<Option<f64>>,
    ineq_hi: Vec<Option<f64>>,
    box_lower: Vec<Option<f64>>,
    box_upper: Vec<Option<f64>>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn finite_or_none(v: &Vector) -> Vec<Option<f64>> {
    v.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<Matrix> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix in QP dump".into()));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn bounds_from(v: &[Option<f64>], default: f64) -> Vector {
    Vector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(default)))
}

impl From<&QpProblem> for QpProblemJson {
    fn from(p: &QpProblem) -> Self {
        Self {
            hessian: rows_of(&p.hessian),
            linear: p.linear.iter().copied().collect(),
            ineq_lhs: rows_of(&p.ineq_lhs),
            ineq_lo: finite_or_none(&p.ineq_lo),
            ineq_hi: finite_or_none(&p.ineq_hi),
            box_lower: finite_or_none(&p.box_lower),
            box_upper: finite_or_none(&p.box_upper),
        }
    }
}

impl QpProblemJson {
    fn into_problem(self) -> Result<QpProblem> {
        let d = self.linear.len();
        Ok(QpProblem {
            hessian: from_rows(&self.hessian, d)?,
            linear: Vector::from_vec(self.linear),
            ineq_lhs: from_rows(&self.ineq_lhs, d)?,
            ineq_lo: bounds_from(&self.ineq_lo, f64::NEG_INFINITY),
            ineq_hi: bounds_from(&self.ineq_hi, f64::INFINITY),
            box_lower: bounds_from(&self.box_lower, f64::NEG_INFINITY),
            box_upper: bounds_from(&self.box_upper, f64::INFINITY),
        })
    }
}

/// Which side of each stacked row is held active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    Lower,
    Upper,
}

/// Works on the cost-scaled objective `cost * (H, c)`; duals of the scaled
/// problem are `cost` times the true ones.
struct Workspace {
    h: Matrix,
    q: Vector,
    cost: f64,
    c: Matrix,
    lo: Vector,
    hi: Vector,
    settings: QpSettings,
}

fn clamp_into(v: &Vector, lo: &Vector, hi: &Vector) -> Vector {
    Vector::from_iterator(
        v.len(),
        v.iter().zip(lo.iter().zip(hi.iter())).map(|(x, (l, h))| x.max(*l).min(*h)),
    )
}

impl Workspace {
    fn residuals(&self, x: &Vector, y: &Vector) -> (f64, f64) {
        let cx = &self.c * x;
        let primal = (clamp_into(&cx, &self.lo, &self.hi) - cx).amax();
        let dual = (&self.h * x + &self.q + self.c.transpose() * y).amax() / self.cost;
        (primal, dual)
    }

    /// Exact solve with the given rows held at their bounds. Returns the
    /// candidate only if it passes every optimality check.
    fn polish(&self, sides: &[Side]) -> Option<(Vector, Vector)> {
        let d = self.q.len();
        let active: Vec<usize> = (0..sides.len()).filter(|&i| sides[i] != Side::Free).collect();
        let k = active.len();
        if k > d {
            return None;
        }
        let mut kkt = Matrix::zeros(d + k, d + k);
        let mut rhs = Vector::zeros(d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&self.h);
        rhs.rows_mut(0, d).copy_from(&(-&self.q));
        for (j, &i) in active.iter().enumerate() {
            let row = self.c.row(i);
            kkt.view_mut((d + j, 0), (1, d)).copy_from(&row);
            kkt.view_mut((0, d + j), (d, 1)).copy_from(&row.transpose());
            let b = if sides[i] == Side::Lower { self.lo[i] } else { self.hi[i] };
            if !b.is_finite() {
                return None;
            }
            rhs[d + j] = b;
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol.rows(0, d).into_owned();
        let mut y = Vector::zeros(sides.len());
        for (j, &i) in active.iter().enumerate() {
            y[i] = sol[d + j];
        }
        let tol_d = self.settings.tol_dual * self.cost;
        for &i in &active {
            let equality = self.lo[i] == self.hi[i];
            match sides[i] {
                Side::Upper if !equality && y[i] < -tol_d => return None,
                Side::Lower if !equality && y[i] > tol_d => return None,
                _ => {}
            }
        }
        let (rp, rd) = self.residuals(&x, &y);
        (rp <= self.settings.tol_primal && rd <= self.settings.tol_dual).then_some((x, y))
    }

    fn guess_from_iterates(&self, z: &Vector, y: &Vector, rho: &Vector) -> Vec<Side> {
        (0..z.len())
            .map(|i| {
                if z[i] - self.lo[i] < -y[i] / rho[i] {
                    Side::Lower
                } else if self.hi[i] - z[i] < y[i] / rho[i] {
                    Side::Upper
                } else {
                    Side::Free
                }
            })
            .collect()
    }

    /// Rows that `x` violates, held at the violated bound.
    fn guess_from_violations(&self, x: &Vector) -> Vec<Side> {
        let cx = &self.c * x;
        (0..cx.len())
            .map(|i| {
                if cx[i] < self.lo[i] {
                    Side::Lower
                } else if cx[i] > self.hi[i] {
                    Side::Upper
                } else {
                    Side::Free
                }
            })
            .collect()
    }

    fn row_rho(&self, rho: f64) -> Vector {
        Vector::from_iterator(
            self.lo.len(),
            (0..self.lo.len()).map(|i| {
                if self.lo[i] == self.hi[i] {
                    rho * 1e3
                } else if self.lo[i].is_infinite() && self.hi[i].is_infinite() {
                    RHO_MIN
                } else {
                    rho
                }
            }),
        )
    }

    fn factor(&self, rho: &Vector) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let d = self.q.len();
        let k = &self.h
            + Matrix::identity(d, d) * SIGMA
            + self.c.transpose() * Matrix::from_diagonal(rho) * &self.c;
        k.cholesky()
    }

    fn primal_infeasible(&self, dy: &Vector) -> bool {
        let norm = dy.amax();
        if norm <= 1e-14 {
            return false;
        }
        let eps = EPS_INFEASIBLE * norm;
        if (self.c.transpose() * dy).amax() > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            if dy[i] > eps {
                if self.hi[i].is_infinite() {
                    return false;
                }
                support += self.hi[i] * dy[i];
            } else if dy[i] < -eps {
                if self.lo[i].is_infinite() {
                    return false;
                }
                support += self.lo[i] * dy[i];
            }
        }
        support < -eps
    }

    fn solution(&self, x: Vector, y: Vector, status: QpStatus, iterations: usize) -> QpSolution {
        let (primal_residual, dual_residual) = self.residuals(&x, &y);
        QpSolution {
            primal: x,
            dual: y / self.cost,
            status,
            iterations,
            primal_residual,
            dual_residual,
        }
    }
}

/// Cold-start solve.
pub fn solve(p: &QpProblem, tol_primal: f64, tol_dual: f64, max_iters: usize) -> Result<QpSolution> {
    solve_warm(
        p,
        &QpSettings {
            tol_primal,
            tol_dual,
            max_iters,
        },
        None,
    )
}

/// Solve seeded from a previous solution of a problem with the same shape.
pub fn solve_warm(p: &QpProblem, settings: &QpSettings, warm: Option<&QpSolution>) -> Result<QpSolution> {
    p.validate()?;
    settings.validate()?;
    let (lo, hi) = p.stacked_bounds();
    let cost = 1.0 / p.hessian.amax().max(p.linear.amax()).max(1e-12);
    let ws = Workspace {
        h: &p.hessian * cost,
        q: &p.linear * cost,
        cost,
        c: p.stacked_matrix(),
        lo,
        hi,
        settings: *settings,
    };
    let d = p.dim();
    let nc = ws.lo.len();

    let warm = warm.filter(|w| w.primal.len() == d && w.dual.len() == nc);
    let (mut x, mut y) = match warm {
        Some(w) => (w.primal.clone(), &w.dual * cost),
        None => (Vector::zeros(d), Vector::zeros(nc)),
    };

    // first guess: the previous active set, or nothing active
    let first_guess: Vec<Side> = (0..nc)
        .map(|i| {
            if y[i] > 0.0 {
                Side::Upper
            } else if y[i] < 0.0 {
                Side::Lower
            } else {
                Side::Free
            }
        })
        .collect();
    if let Some((xp, yp)) = ws.polish(&first_guess) {
        return Ok(ws.solution(xp, yp, QpStatus::Solved, 0));
    }

    let mut z = clamp_into(&(&ws.c * &x), &ws.lo, &ws.hi);
    let mut rho_scalar = RHO_INIT;
    let mut rho = ws.row_rho(rho_scalar);
    let mut chol = ws
        .factor(&rho)
        .ok_or_else(|| Error::Domain("QP reduced system is not positive definite".into()))?;
    let mut last_guess = first_guess;
    let mut rho_updates = 0;

    for it in 1..=settings.max_iters {
        let rhs = &x * SIGMA - &ws.q + ws.c.transpose() * (rho.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &ws.c * &x_tilde;
        let x_next = &x_tilde * ALPHA + &x * (1.0 - ALPHA);
        let z_relaxed = &z_tilde * ALPHA + &z * (1.0 - ALPHA);
        let z_next = clamp_into(&(&z_relaxed + y.component_div(&rho)), &ws.lo, &ws.hi);
        let y_next = &y + rho.component_mul(&(&z_relaxed - &z_next));
        let dy = &y_next - &y;
        x = x_next;
        z = z_next;
        y = y_next;

        if ws.primal_infeasible(&dy) {
            return Ok(ws.solution(x, y, QpStatus::Infeasible, it));
        }

        let r_prim = (&ws.c * &x - &z).amax();
        let r_dual = (&ws.h * &x + &ws.q + ws.c.transpose() * &y).amax() / cost;
        let converged = r_prim <= settings.tol_primal && r_dual <= settings.tol_dual;

        if converged || it % CHECK_EVERY == 0 {
            let guess = ws.guess_from_iterates(&z, &y, &rho);
            if guess != last_guess || converged {
                if let Some((xp, yp)) = ws.polish(&guess) {
                    return Ok(ws.solution(xp, yp, QpStatus::Solved, it));
                }
                last_guess = guess;
            }
            if let Some((xp, yp)) = ws.polish(&ws.guess_from_violations(&x)) {
                return Ok(ws.solution(xp, yp, QpStatus::Solved, it));
            }
        }
        if converged {
            return Ok(ws.solution(x, y, QpStatus::Solved, it));
        }

        if it % ADAPT_EVERY == 0 && rho_updates < MAX_RHO_UPDATES && r_prim > 0.0 && r_dual > 0.0 {
            let cx = &ws.c * &x;
            let prim_scale = cx.amax().max(z.amax()).max(1e-12);
            let dual_scale = (&ws.h * &x)
                .amax()
                .max((ws.c.transpose() * &y).amax())
                .max(ws.q.amax())
                .max(1e-12);
            let ratio = ((r_prim / prim_scale) / (r_dual * cost / dual_scale)).sqrt();
            let candidate = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
            if candidate > 5.0 * rho_scalar || candidate < 0.2 * rho_scalar {
                rho_scalar = candidate;
                rho_updates += 1;
                rho = ws.row_rho(rho_scalar);
                if let Some(f) = ws.factor(&rho) {
                    chol = f;
                }
            }
        }
    }
    Ok(ws.solution(x, y, QpStatus::MaxIters, settings.max_iters))
}
