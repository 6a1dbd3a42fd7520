//! Special functions and small dense linear algebra.
//!
//! The error function follows the FreeBSD `s_erf.c` rational approximations
//! (accurate to below one ulp on the whole real line). The standard normal
//! quantile uses Acklam's rational approximation followed by one Halley
//! polish step against the erfc-based CDF.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance on the smallest eigenvalue for a matrix to count as PSD.
pub const EPS_PSD: f64 = 1e-10;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

const ERX: f64 = 8.45062911510467529297e-01;

// erf on [0, 0.84375]
const EFX: f64 = 1.28379167095512586316e-01;
const EFX8: f64 = 1.02703333676410069053e+00;
const PP: [f64; 5] = [
    1.28379167095512558561e-01,
    -3.25042107247001499370e-01,
    -2.84817495755985104766e-02,
    -5.77027029648944159157e-03,
    -2.37630166566501626084e-05,
];
const QQ: [f64; 5] = [
    3.97917223959155352819e-01,
    6.50222499887672944485e-02,
    5.08130628187576562776e-03,
    1.32494738004321644526e-04,
    -3.96022827877536812320e-06,
];

// erf on [0.84375, 1.25]
const PA: [f64; 7] = [
    -2.36211856075265944077e-03,
    4.14856118683748331666e-01,
    -3.72207876035701323847e-01,
    3.18346619901161753674e-01,
    -1.10894694282396677476e-01,
    3.54783043256182359371e-02,
    -2.16637559486879084300e-03,
];
const QA: [f64; 6] = [
    1.06420880400844228286e-01,
    5.40397917702171048937e-01,
    7.18286544141962662868e-02,
    1.26171219808761642112e-01,
    1.36370839120290507362e-02,
    1.19844998467991074170e-02,
];

// erfc on [1.25, 1/0.35]
const RA: [f64; 8] = [
    -9.86494403484714822705e-03,
    -6.93858572707181764372e-01,
    -1.05586262253232909814e+01,
    -6.23753324503260060396e+01,
    -1.62396669462573470355e+02,
    -1.84605092906711035994e+02,
    -8.12874355063065934246e+01,
    -9.81432934416914548592e+00,
];
const SA: [f64; 8] = [
    1.96512716674392571292e+01,
    1.37657754143519042600e+02,
    4.34565877475229228821e+02,
    6.45387271733267880336e+02,
    4.29008140027567833386e+02,
    1.08635005541779435134e+02,
    6.57024977031928170135e+00,
    -6.04244152148580987438e-02,
];

// erfc on [1/0.35, 28]
const RB: [f64; 7] = [
    -9.86494292470009928597e-03,
    -7.99283237680523006574e-01,
    -1.77579549177547519889e+01,
    -1.60636384855821916062e+02,
    -6.37566443368389627722e+02,
    -1.02509513161107724954e+03,
    -4.83519191608651397019e+02,
];
const SB: [f64; 7] = [
    3.03380607434824582924e+01,
    3.25792512996573918826e+02,
    1.53672958608443695994e+03,
    3.19985821950859553908e+03,
    2.55305040643316442583e+03,
    4.74528541206955367215e+02,
    -2.24409524465858183362e+01,
];

#[inline]
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// `1 + x*(c0 + x*(c1 + ...))`
#[inline]
fn poly1(c: &[f64], x: f64) -> f64 {
    1.0 + x * poly(c, x)
}

/// erfc(x) for x >= 1.25 (x < 28), without the leading 1/x scaling removed.
fn erfc_tail(x: f64) -> f64 {
    let s = 1.0 / (x * x);
    let (r, q) = if x < 1.0 / 0.35 {
        (poly(&RA, s), poly1(&SA, s))
    } else {
        (poly(&RB, s), poly1(&SB, s))
    };
    // split x so that exp(-x^2) keeps full precision
    let z = f64::from_bits(x.to_bits() & 0xffff_ffff_0000_0000);
    (-z * z - 0.5625).exp() * ((z - x) * (z + x) + r / q).exp() / x
}

fn erf_small(x: f64) -> f64 {
    // |x| < 0.84375
    if x.abs() < 3.725_290_298_461_914e-9 {
        if x.abs() < 2.848_094_538_889_218e-306 {
            return 0.125 * (8.0 * x + EFX8 * x);
        }
        return x + EFX * x;
    }
    let z = x * x;
    x + x * (poly(&PP, z) / poly1(&QQ, z))
}

fn erf_abs(ax: f64) -> f64 {
    if ax < 0.84375 {
        erf_small(ax)
    } else if ax < 1.25 {
        let s = ax - 1.0;
        ERX + poly(&PA, s) / poly1(&QA, s)
    } else if ax >= 6.0 {
        1.0
    } else {
        1.0 - erfc_tail(ax)
    }
}

fn check_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what}: non-finite argument {x}")))
    }
}

/// The error function. Odd symmetry holds exactly.
pub fn erf(x: f64) -> Result<f64> {
    check_finite(x, "erf")?;
    let v = erf_abs(x.abs());
    Ok(if x < 0.0 { -v } else { v })
}

/// The complementary error function, accurate in both tails.
pub fn erfc(x: f64) -> Result<f64> {
    check_finite(x, "erfc")?;
    let ax = x.abs();
    let upper = if ax < 0.84375 {
        1.0 - erf_small(ax)
    } else if ax < 1.25 {
        let s = ax - 1.0;
        1.0 - ERX - poly(&PA, s) / poly1(&QA, s)
    } else if ax < 28.0 {
        erfc_tail(ax)
    } else {
        0.0
    };
    Ok(if x < 0.0 { 2.0 - upper } else { upper })
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> Result<f64> {
    check_finite(x, "std_normal_pdf")?;
    Ok(FRAC_1_SQRT_2PI * (-0.5 * x * x).exp())
}

/// Standard normal CDF, built from erfc so that the lower tail keeps
/// relative precision.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    check_finite(x, "std_normal_cdf")?;
    Ok(0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)?)
}

// Acklam's coefficients.
const ACK_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACK_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACK_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACK_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn horner_desc(c: &[f64], x: f64) -> f64 {
    c.iter().fold(0.0, |acc, &k| acc * x + k)
}

fn acklam(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        horner_desc(&ACK_C, q) / (horner_desc(&ACK_D, q) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        horner_desc(&ACK_A, r) * q / (horner_desc(&ACK_B, r) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -horner_desc(&ACK_C, q) / (horner_desc(&ACK_D, q) * q + 1.0)
    }
}

/// The `delta`-quantile of the standard normal distribution.
pub fn std_normal_quantile(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "std_normal_quantile: delta = {delta} outside (0, 1)"
        )));
    }
    if delta == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail and reflect, so the refinement residual is
    // computed where the CDF has full relative precision.
    let (p, sign) = if delta > 0.5 {
        (1.0 - delta, -1.0)
    } else {
        (delta, 1.0)
    };
    let mut x = acklam(p);
    let e = std_normal_cdf(x)? - p;
    let u = e / std_normal_pdf(x)?;
    x -= u / (1.0 + 0.5 * x * u);
    Ok(sign * x)
}

/// Inverse error function on (-1, 1).
pub fn erf_inv(y: f64) -> Result<f64> {
    if !(y > -1.0 && y < 1.0) {
        return Err(Error::Domain(format!("erf_inv: argument {y} outside (-1, 1)")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    Ok(std_normal_quantile(0.5 * (1.0 + y))? * std::f64::consts::FRAC_1_SQRT_2)
}

/// `(m + m^T) / 2`
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Whether `m` is square, symmetric and PSD to [`EPS_PSD`].
pub fn psd_check(m: &Matrix) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    asym <= 1e-9 * scale && min_eigenvalue(m) >= -EPS_PSD
}

/// Lower Cholesky factor. Fails with the 1-based index of the first
/// leading minor that is not positive.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "cholesky of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular { minor: j + 1 });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "solve_spd: a is {}x{}, b has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let l = cholesky(a)?;
    let n = a.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Symmetric PSD square root via eigendecomposition (negative eigenvalues
/// from roundoff are clipped to zero).
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}
