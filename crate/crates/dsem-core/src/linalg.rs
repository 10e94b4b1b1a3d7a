//! Small dense linear-algebra helpers shared across the engine: symmetry and
//! positive-semidefiniteness checks, discrete Lyapunov solves, clipped
//! symmetric pseudo-inverses, multivariate normal draws, and stable normal
//! distribution functions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DsemError, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Relative asymmetry tolerance for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative lower bound on eigenvalues of a PSD matrix (scaled by trace).
pub const PSD_EIG_TOL: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Maximum absolute asymmetry relative to the largest entry magnitude.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Check symmetry (within `SYMMETRY_TOL`) and positive semidefiniteness
/// (smallest eigenvalue at least `-PSD_EIG_TOL * trace`, floored for zero
/// matrices).
pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(DsemError::config(format!("{what} is not square")));
    }
    if asymmetry(m) > SYMMETRY_TOL {
        return Err(DsemError::config(format!(
            "{what} is not symmetric within {SYMMETRY_TOL:e}"
        )));
    }
    let min_eig = symmetrized(m).symmetric_eigenvalues().min();
    let floor = -PSD_EIG_TOL * m.trace().abs().max(1.0);
    if min_eig < floor {
        return Err(DsemError::config(format!(
            "{what} is not positive semidefinite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Spectral radius (largest absolute eigenvalue) of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Solve the discrete Lyapunov equation `P = T P T' + W` by the doubling
/// iteration, which converges quadratically for spectral radius below one.
pub fn solve_discrete_lyapunov(t: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    if t.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(DsemError::config("Lyapunov solve: dimension mismatch"));
    }
    let mut p = symmetrized(w);
    let mut a = t.clone();
    let scale = p.amax().max(1.0);
    for _ in 0..200 {
        let incr = &a * &p * a.transpose();
        let delta = incr.amax();
        p += incr;
        symmetrize(&mut p);
        a = &a * &a;
        if delta <= 1e-13 * scale.max(p.amax()) {
            return Ok(p);
        }
    }
    Err(DsemError::numerical(
        "Lyapunov solve did not converge; transition is likely non-stationary",
    ))
}

/// Solve `m = T m + c` for the stationary mean.
pub fn solve_stationary_mean(t: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    let n = t.nrows();
    let lhs = DMatrix::identity(n, n) - t;
    lhs.lu()
        .solve(c)
        .ok_or_else(|| DsemError::numerical("stationary mean solve: I - T is singular"))
}

/// Symmetric pseudo-inverse with eigenvalue clipping. Eigenvalues below
/// `rel_tol * max_eig` are treated as exact zeros. Fails when a clipped
/// eigenvalue is materially negative (below `-neg_tol * max_eig`).
pub struct SymPinv {
    pub inv: DMatrix<f64>,
    pub rank: usize,
    pub clipped: bool,
}

pub fn sym_pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64, neg_tol: f64) -> Result<SymPinv> {
    let eig = symmetrized(m).symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mut inv_vals = eig.eigenvalues.clone();
    let mut rank = 0;
    let mut clipped = false;
    for v in inv_vals.iter_mut() {
        if *v < -neg_tol * max_eig {
            return Err(DsemError::numerical(format!(
                "matrix has a negative eigenvalue {:e} beyond tolerance",
                *v
            )));
        }
        if *v > rel_tol * max_eig {
            rank += 1;
            *v = 1.0 / *v;
        } else {
            clipped = true;
            *v = 0.0;
        }
    }
    let q = &eig.eigenvectors;
    let inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    Ok(SymPinv { inv: symmetrized(&inv), rank, clipped })
}

/// Draw from `N(mean, cov)`. Uses a Cholesky factor when available and falls
/// back to an eigendecomposition with clipped negative eigenvalues for
/// degenerate covariances.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if let Some(chol) = symmetrized(cov).cholesky() {
        return Ok(mean + chol.l() * z);
    }
    let eig = symmetrized(cov).symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mut scale = eig.eigenvalues.clone();
    for v in scale.iter_mut() {
        if *v < -PSD_EIG_TOL * max_eig {
            return Err(DsemError::numerical(
                "covariance has a materially negative eigenvalue; cannot sample",
            ));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(mean + &eig.eigenvectors * DMatrix::from_diagonal(&scale) * z)
}

/// Adjoint of the discrete Lyapunov solve `P(T, W)` with `P = T P T' + W`.
/// Given the output cotangent `p_bar`, accumulates cotangents of `T` and `W`.
///
/// Derivation: dP = T dP T' + (dT P T' + T P dT' + dW), so with S solving the
/// transposed equation S = T' S T + p_bar one gets W_bar = S and
/// T_bar = (S + S') T P.
pub fn lyapunov_adjoint(
    t: &DMatrix<f64>,
    p: &DMatrix<f64>,
    p_bar: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = solve_discrete_lyapunov_general(&t.transpose(), p_bar)?;
    let w_bar = s.clone();
    let t_bar = (&s + s.transpose()) * t * p;
    Ok((t_bar, w_bar))
}

/// Doubling iteration for `X = A X A' + Q` without requiring `Q` symmetric.
fn solve_discrete_lyapunov_general(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    let mut ak = a.clone();
    let scale = x.amax().max(1.0);
    for _ in 0..200 {
        let incr = &ak * &x * ak.transpose();
        let delta = incr.amax();
        x += incr;
        ak = &ak * &ak;
        if delta <= 1e-13 * scale.max(x.amax()) {
            return Ok(x);
        }
    }
    Err(DsemError::numerical("adjoint Lyapunov solve did not converge"))
}

/// Reverse-mode rule for a lower Cholesky factorization `Sigma = L L'`.
/// Given `l_bar`, returns the symmetric cotangent of `Sigma`.
pub fn cholesky_adjoint(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    // P = tril(L' Lbar) with halved diagonal.
    let mut p = l.transpose() * l_bar;
    for i in 0..n {
        p[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            p[(i, j)] = 0.0;
        }
    }
    // Sigma_bar = L^{-T} P L^{-1}, then symmetrize.
    let linv = l
        .clone()
        .try_inverse()
        .expect("Cholesky factor is triangular with positive diagonal");
    let x = linv.transpose() * p * linv;
    let mut out = 0.5 * (&x + x.transpose());
    symmetrize(&mut out);
    out
}

// --- stable scalar normal functions ---

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * (x * x + LN_2PI)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// log Phi(x), accurate deep into the lower tail.
pub fn norm_log_cdf(x: f64) -> f64 {
    if x > -1.0 {
        // erfc is accurate here and Phi is not close to zero.
        norm_cdf(x).ln()
    } else if x > -30.0 {
        let s = -x * std::f64::consts::FRAC_1_SQRT_2;
        (0.5 * statrs::function::erf::erfc(s)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let z = -x;
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - 0.5 * LN_2PI - z.ln() + series.ln()
    }
}

/// Standard normal quantile function (Acklam's rational approximation with a
/// single Newton polish step), accurate to near machine precision.
pub fn norm_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile argument must lie in [0, 1]");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // One Halley polish step.
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Log density of `N(mean, var)` at `x`.
pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}
