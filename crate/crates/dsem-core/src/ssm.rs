//! Linear Gaussian state-space primitives: Kalman filtering with exact
//! marginal log-likelihood, missing-data handling by row subsetting,
//! forward-filtering backward-sampling, and a dense joint-Gaussian oracle
//! used to validate the recursive algorithms.
//!
//! Conventions: the state recursion is `x_{t+1} = T_t x_t + c_t + w_t` with
//! `w_t ~ N(0, W_t)`, and the measurement is `y_t = Z_t x_t + e_t` with
//! `e_t ~ N(0, Sigma_t)`. Initial moments describe `x_1`.
//!
//! Degenerate innovation covariances (condition beyond 1e12) are resolved by
//! a clipped symmetric eigendecomposition: directions with negligible
//! variance must carry a matching zero innovation, otherwise filtering fails
//! naming the timepoint. The log-likelihood of an exactly degenerate update
//! is taken over the non-degenerate subspace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{DsemError, Result};
use crate::linalg::{
    self, check_psd, sample_mvn, solve_discrete_lyapunov, solve_stationary_mean, spectral_radius,
    symmetrize, LN_2PI,
};

/// Condition-number ceiling for innovation covariance solves.
pub const MAX_CONDITION: f64 = 1e12;
/// Diffuse prior scale used when the stationary initialization is not
/// applicable (non-stationary dynamics).
pub const DIFFUSE_SCALE: f64 = 10.0;

/// A quantity that is either shared across timepoints or given per step.
#[derive(Debug, Clone)]
pub enum TimeVarying<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T> TimeVarying<T> {
    pub fn at(&self, t: usize) -> &T {
        match self {
            TimeVarying::Constant(v) => v,
            TimeVarying::PerStep(vs) => &vs[t],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeVarying::Constant(_))
    }

    fn len(&self) -> Option<usize> {
        match self {
            TimeVarying::Constant(_) => None,
            TimeVarying::PerStep(vs) => Some(vs.len()),
        }
    }
}

/// One transition step `x_{t+1} = T x_t + c + w`, `w ~ N(0, W)`.
#[derive(Debug, Clone)]
pub struct TransitionStep {
    pub t_mat: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub noise: DMatrix<f64>,
}

/// Per-participant linear Gaussian state-space system over a fixed horizon.
#[derive(Debug, Clone)]
pub struct LgssmSystem {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub horizon: usize,
    /// Transition used to advance from timepoint `t` to `t + 1`
    /// (0-based; `PerStep` needs `horizon - 1` entries).
    pub transition: TimeVarying<TransitionStep>,
    /// Measurement matrix per timepoint (obs_dim x state_dim).
    pub z: TimeVarying<DMatrix<f64>>,
    /// Measurement noise covariance per timepoint (obs_dim x obs_dim, PSD).
    pub sigma: TimeVarying<DMatrix<f64>>,
    /// Moments of the state at the first timepoint.
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl LgssmSystem {
    /// Check dimensional consistency and covariance invariants.
    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim;
        let u = self.obs_dim;
        if self.horizon == 0 {
            return Err(DsemError::config("system horizon must be positive"));
        }
        if self.init_mean.len() != d || self.init_cov.nrows() != d || self.init_cov.ncols() != d {
            return Err(DsemError::config("initial moments do not match the state dimension"));
        }
        check_psd(&self.init_cov, "initial covariance")?;
        if let Some(len) = self.transition.len() {
            if len + 1 < self.horizon {
                return Err(DsemError::config(format!(
                    "per-step transitions need at least {} entries, got {len}",
                    self.horizon - 1
                )));
            }
        }
        if let Some(len) = self.z.len() {
            if len < self.horizon {
                return Err(DsemError::config("per-step Z needs one entry per timepoint"));
            }
        }
        if let Some(len) = self.sigma.len() {
            if len < self.horizon {
                return Err(DsemError::config("per-step Sigma needs one entry per timepoint"));
            }
        }
        for t in 0..self.horizon {
            let z = self.z.at(t);
            if z.nrows() != u || z.ncols() != d {
                return Err(DsemError::config(format!(
                    "Z at timepoint {t} has shape {}x{}, expected {u}x{d}",
                    z.nrows(),
                    z.ncols()
                )));
            }
            let s = self.sigma.at(t);
            if s.nrows() != u || s.ncols() != u {
                return Err(DsemError::config(format!("Sigma at timepoint {t} is not {u}x{u}")));
            }
            check_psd(s, &format!("measurement noise at timepoint {t}"))?;
            if t + 1 < self.horizon {
                let step = self.transition.at(t);
                if step.t_mat.nrows() != d
                    || step.t_mat.ncols() != d
                    || step.intercept.len() != d
                    || step.noise.nrows() != d
                    || step.noise.ncols() != d
                {
                    return Err(DsemError::config(format!(
                        "transition at timepoint {t} has inconsistent dimensions"
                    )));
                }
                check_psd(&step.noise, &format!("process noise at timepoint {t}"))?;
            }
        }
        Ok(())
    }
}

/// Observation sequence with a per-entry missingness mask
/// (`true` marks an observed entry). Fully masked timepoints are legal.
#[derive(Debug, Clone)]
pub struct ObservationSequence {
    values: Vec<DVector<f64>>,
    mask: Vec<Vec<bool>>,
}

impl ObservationSequence {
    pub fn new(values: Vec<DVector<f64>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(DsemError::config("observation values and mask differ in horizon"));
        }
        for (t, (v, m)) in values.iter().zip(mask.iter()).enumerate() {
            if v.len() != m.len() {
                return Err(DsemError::config(format!(
                    "mask length {} does not match observation dimension {} at timepoint {t}",
                    m.len(),
                    v.len()
                )));
            }
        }
        Ok(Self { values, mask })
    }

    /// Fully observed sequence.
    pub fn complete(values: Vec<DVector<f64>>) -> Self {
        let mask = values.iter().map(|v| vec![true; v.len()]).collect();
        Self { values, mask }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, t: usize) -> &DVector<f64> {
        &self.values[t]
    }

    pub fn mask(&self, t: usize) -> &[bool] {
        &self.mask[t]
    }

    pub fn observed_indices(&self, t: usize) -> Vec<usize> {
        self.mask[t]
            .iter()
            .enumerate()
            .filter_map(|(j, &obs)| obs.then_some(j))
            .collect()
    }
}

/// Per-timepoint filter output.
#[derive(Debug, Clone)]
pub struct FilterStep {
    pub predicted_mean: DVector<f64>,
    pub predicted_cov: DMatrix<f64>,
    pub filtered_mean: DVector<f64>,
    pub filtered_cov: DMatrix<f64>,
    /// Innovation over the observed rows at this timepoint.
    pub innovation: DVector<f64>,
    /// Innovation covariance over the observed rows.
    pub innovation_cov: DMatrix<f64>,
    /// Indices of the observed rows.
    pub observed: Vec<usize>,
    /// Log-likelihood increment of this timepoint.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub steps: Vec<FilterStep>,
    pub log_likelihood: f64,
    /// Number of measurement updates that required clipping degenerate
    /// innovation directions.
    pub degenerate_updates: usize,
}

/// Sampled augmented state trajectory from the smoothing distribution.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<DVector<f64>>,
    /// Number of backward steps that fell back to a pseudo-inverse of a
    /// singular predicted covariance.
    pub pseudo_inverse_steps: usize,
}

fn subset_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

fn subset_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

fn subset_square(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Gaussian log density term and solve `F^{-1} v`, `F^{-1} (Z P)'` via a
/// symmetric factorization. Uses Cholesky when the matrix is well
/// conditioned; otherwise clips degenerate eigendirections and requires the
/// innovation to vanish on them.
struct InnovationSolve {
    log_likelihood: f64,
    gain: DMatrix<f64>,
    clipped: bool,
}

fn solve_innovation(
    f: &DMatrix<f64>,
    v: &DVector<f64>,
    cross: &DMatrix<f64>, // P Z' over observed rows (state_dim x k)
    t: usize,
) -> Result<InnovationSolve> {
    let k = f.nrows();
    if let Some(chol) = f.clone().cholesky() {
        let l = chol.l_dirty();
        let mut logdet = 0.0;
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0_f64;
        for i in 0..k {
            let d = l[(i, i)];
            dmin = dmin.min(d);
            dmax = dmax.max(d);
            logdet += 2.0 * d.ln();
        }
        // (dmax/dmin)^2 bounds the condition number estimate from below;
        // only matrices passing this cheap screen skip the eigen path.
        if dmin > 0.0 && (dmax / dmin).powi(2) < MAX_CONDITION {
            let quad = v.dot(&chol.solve(v));
            let log_likelihood = -0.5 * ((k as f64) * LN_2PI + logdet + quad);
            let gain = chol.solve(&cross.transpose()).transpose();
            return Ok(InnovationSolve { log_likelihood, gain, clipped: false });
        }
    }
    // Eigen path: clip directions with variance below max_eig / MAX_CONDITION.
    let eig = linalg::symmetrized(f).symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
    let cut = max_eig / MAX_CONDITION;
    let mut logdet = 0.0;
    let mut kept = 0usize;
    let mut inv_vals = eig.eigenvalues.clone();
    let rot_v = eig.eigenvectors.transpose() * v;
    let scale = 1.0 + v.amax();
    for i in 0..k {
        let e = inv_vals[i];
        if e > cut {
            logdet += e.ln();
            inv_vals[i] = 1.0 / e;
            kept += 1;
        } else {
            if rot_v[i].abs() > 1e-8 * scale {
                return Err(DsemError::numerical(format!(
                    "innovation covariance numerically singular at timepoint {} \
                     (condition above {MAX_CONDITION:e} with inconsistent innovation)",
                    t + 1
                )));
            }
            inv_vals[i] = 0.0;
        }
    }
    let quad = (0..k).map(|i| rot_v[i] * rot_v[i] * inv_vals[i]).sum::<f64>();
    let log_likelihood = -0.5 * ((kept as f64) * LN_2PI + logdet + quad);
    let f_pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let gain = cross * f_pinv;
    Ok(InnovationSolve { log_likelihood, gain, clipped: true })
}

/// Run the Kalman filter, returning all moments and the exact marginal
/// log-likelihood of the observed entries. Masked entries contribute nothing
/// and trigger row-subsetted (or skipped) measurement updates.
pub fn kalman_filter(system: &LgssmSystem, obs: &ObservationSequence) -> Result<FilterResult> {
    system.validate()?;
    if obs.horizon() != system.horizon {
        return Err(DsemError::config(format!(
            "observation horizon {} does not match system horizon {}",
            obs.horizon(),
            system.horizon
        )));
    }
    for t in 0..system.horizon {
        if obs.value(t).len() != system.obs_dim {
            return Err(DsemError::config(format!(
                "observation at timepoint {t} has dimension {}, expected {}",
                obs.value(t).len(),
                system.obs_dim
            )));
        }
    }

    let d = system.state_dim;
    let mut steps = Vec::with_capacity(system.horizon);
    let mut total = 0.0;
    let mut degenerate_updates = 0;

    let mut m_pred = system.init_mean.clone();
    let mut p_pred = linalg::symmetrized(&system.init_cov);

    for t in 0..system.horizon {
        let observed = obs.observed_indices(t);
        let (m_filt, p_filt, innovation, innovation_cov, ll) = if observed.is_empty() {
            (m_pred.clone(), p_pred.clone(), DVector::zeros(0), DMatrix::zeros(0, 0), 0.0)
        } else {
            let z_full = system.z.at(t);
            let z = subset_rows(z_full, &observed);
            let sig = subset_square(system.sigma.at(t), &observed);
            let y = subset_vector(obs.value(t), &observed);

            let v = &y - &z * &m_pred;
            let cross = &p_pred * z.transpose();
            let mut f = &z * &cross + &sig;
            symmetrize(&mut f);

            let solve = solve_innovation(&f, &v, &cross, t)?;
            if solve.clipped {
                degenerate_updates += 1;
            }
            let k_gain = solve.gain;
            let m_filt = &m_pred + &k_gain * &v;
            // Joseph form keeps the covariance PSD under roundoff.
            let a = DMatrix::identity(d, d) - &k_gain * &z;
            let mut p_filt = &a * &p_pred * a.transpose() + &k_gain * &sig * k_gain.transpose();
            symmetrize(&mut p_filt);
            (m_filt, p_filt, v, f, solve.log_likelihood)
        };

        total += ll;
        steps.push(FilterStep {
            predicted_mean: m_pred.clone(),
            predicted_cov: p_pred.clone(),
            filtered_mean: m_filt.clone(),
            filtered_cov: p_filt.clone(),
            innovation,
            innovation_cov,
            observed,
            log_likelihood: ll,
        });

        if t + 1 < system.horizon {
            let step = system.transition.at(t);
            m_pred = &step.t_mat * &m_filt + &step.intercept;
            p_pred = &step.t_mat * &p_filt * step.t_mat.transpose() + &step.noise;
            symmetrize(&mut p_pred);
        }
    }

    Ok(FilterResult { steps, log_likelihood: total, degenerate_updates })
}

/// Draw one joint state trajectory from the smoothing distribution
/// `p(x_{1:T} | y, parameters)` by backward sampling from the filter output.
pub fn ffbs_sample<R: Rng + ?Sized>(
    system: &LgssmSystem,
    obs: &ObservationSequence,
    rng: &mut R,
) -> Result<StateTrajectory> {
    let filter = kalman_filter(system, obs)?;
    ffbs_from_filter(system, &filter, rng)
}

/// Backward sampling given a precomputed filter pass.
pub fn ffbs_from_filter<R: Rng + ?Sized>(
    system: &LgssmSystem,
    filter: &FilterResult,
    rng: &mut R,
) -> Result<StateTrajectory> {
    let horizon = filter.steps.len();
    let mut states = vec![DVector::zeros(system.state_dim); horizon];
    let mut pseudo_inverse_steps = 0usize;

    let last = &filter.steps[horizon - 1];
    states[horizon - 1] = sample_mvn(&last.filtered_mean, &last.filtered_cov, rng)?;

    for t in (0..horizon - 1).rev() {
        let step = system.transition.at(t);
        let here = &filter.steps[t];
        let next = &filter.steps[t + 1];
        let cross = &here.filtered_cov * step.t_mat.transpose();

        // J = P_{t|t} T' P_{t+1|t}^{-1}
        let j = if let Some(chol) = next.predicted_cov.clone().cholesky() {
            chol.solve(&cross.transpose()).transpose()
        } else {
            let pinv = linalg::sym_pseudo_inverse(&next.predicted_cov, 1e-12, 1e-10).map_err(
                |_| {
                    DsemError::numerical(format!(
                        "predicted covariance at timepoint {} is indefinite; cannot smooth",
                        t + 2
                    ))
                },
            )?;
            pseudo_inverse_steps += 1;
            &cross * &pinv.inv
        };

        let resid = &states[t + 1] - &next.predicted_mean;
        let h_mean = &here.filtered_mean + &j * resid;
        let mut h_cov = &here.filtered_cov - &j * &next.predicted_cov * j.transpose();
        symmetrize(&mut h_cov);
        states[t] = sample_mvn(&h_mean, &h_cov, rng)?;
    }

    Ok(StateTrajectory { states, pseudo_inverse_steps })
}

/// Stationary initial moments for a time-invariant system: `m = T m + c` and
/// the discrete Lyapunov solution `P = T P T' + W`.
///
/// Fails when the transition is time-varying or its spectral radius is at or
/// above `1 - 1e-6`; callers fall back to the diffuse prior in that case.
pub fn stationary_init(system: &LgssmSystem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let TimeVarying::Constant(step) = &system.transition else {
        return Err(DsemError::config(
            "stationary initialization requires a time-invariant transition",
        ));
    };
    stationary_moments(&step.t_mat, &step.intercept, &step.noise)
}

/// Stationary moments of `x_{t+1} = T x_t + c + w`, `w ~ N(0, W)`.
pub fn stationary_moments(
    t_mat: &DMatrix<f64>,
    intercept: &DVector<f64>,
    noise: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let rho = spectral_radius(t_mat);
    if rho >= 1.0 - 1e-6 {
        return Err(DsemError::numerical(format!(
            "spectral radius {rho} is too close to one for a stationary initialization"
        )));
    }
    let mean = solve_stationary_mean(t_mat, intercept)?;
    let cov = solve_discrete_lyapunov(t_mat, noise)?;
    Ok((mean, cov))
}

/// Diffuse initial moments: zero mean and `DIFFUSE_SCALE * I`.
pub fn diffuse_init(state_dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    (DVector::zeros(state_dim), DMatrix::identity(state_dim, state_dim) * DIFFUSE_SCALE)
}

/// Exact joint Gaussian over all states and observations, obtained by
/// unrolling the recursion. Used as a test oracle for the filter, the
/// smoother, and FFBS.
#[derive(Debug, Clone)]
pub struct DenseJoint {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub horizon: usize,
    /// Mean of `[x_1, ..., x_T, y_1, ..., y_T]`.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Total joint dimension allowed for the dense oracle.
pub const DENSE_ORACLE_MAX_DIM: usize = 2000;

pub fn dense_joint_oracle(system: &LgssmSystem) -> Result<DenseJoint> {
    system.validate()?;
    let d = system.state_dim;
    let u = system.obs_dim;
    let t_len = system.horizon;
    let total = (d + u) * t_len;
    if total > DENSE_ORACLE_MAX_DIM {
        return Err(DsemError::config(format!(
            "dense oracle dimension {total} exceeds the guard {DENSE_ORACLE_MAX_DIM}"
        )));
    }

    // State means and pairwise covariances.
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(t_len);
    means.push(system.init_mean.clone());
    let mut cov_blocks = vec![vec![DMatrix::zeros(d, d); t_len]; t_len];
    cov_blocks[0][0] = linalg::symmetrized(&system.init_cov);
    for t in 0..t_len - 1 {
        let step = system.transition.at(t);
        means.push(&step.t_mat * &means[t] + &step.intercept);
        for s in 0..=t {
            let block = &step.t_mat * &cov_blocks[t][s];
            cov_blocks[s][t + 1] = block.transpose();
            cov_blocks[t + 1][s] = block;
        }
        let mut own = &step.t_mat * &cov_blocks[t][t] * step.t_mat.transpose() + &step.noise;
        symmetrize(&mut own);
        cov_blocks[t + 1][t + 1] = own;
    }

    let mut mean = DVector::zeros(total);
    let mut cov = DMatrix::zeros(total, total);
    let state_off = |t: usize| t * d;
    let obs_off = |t: usize| t_len * d + t * u;

    for t in 0..t_len {
        mean.rows_mut(state_off(t), d).copy_from(&means[t]);
        let z = system.z.at(t);
        mean.rows_mut(obs_off(t), u).copy_from(&(z * &means[t]));
    }
    for a in 0..t_len {
        let z_a = system.z.at(a);
        for b in 0..t_len {
            let z_b = system.z.at(b);
            let c_ab = &cov_blocks[a][b];
            cov.view_mut((state_off(a), state_off(b)), (d, d)).copy_from(c_ab);
            // Cov(y_a, x_b) = Z_a Cov(x_a, x_b)
            cov.view_mut((obs_off(a), state_off(b)), (u, d)).copy_from(&(z_a * c_ab));
            cov.view_mut((state_off(b), obs_off(a)), (d, u))
                .copy_from(&(z_a * c_ab).transpose());
            let mut y_ab = z_a * c_ab * z_b.transpose();
            if a == b {
                y_ab += system.sigma.at(a);
            }
            cov.view_mut((obs_off(a), obs_off(b)), (u, u)).copy_from(&y_ab);
        }
    }
    symmetrize(&mut cov);

    Ok(DenseJoint { state_dim: d, obs_dim: u, horizon: t_len, mean, cov })
}

impl DenseJoint {
    fn obs_flat_indices(&self, obs: &ObservationSequence) -> Vec<usize> {
        let mut idx = Vec::new();
        for t in 0..self.horizon {
            for j in obs.observed_indices(t) {
                idx.push(self.horizon * self.state_dim + t * self.obs_dim + j);
            }
        }
        idx
    }

    fn obs_flat_values(&self, obs: &ObservationSequence) -> Vec<f64> {
        let mut vals = Vec::new();
        for t in 0..self.horizon {
            for j in obs.observed_indices(t) {
                vals.push(obs.value(t)[j]);
            }
        }
        vals
    }

    /// Exact log density of the observed entries under the joint Gaussian.
    pub fn observation_log_density(&self, obs: &ObservationSequence) -> Result<f64> {
        let idx = self.obs_flat_indices(obs);
        if idx.is_empty() {
            return Ok(0.0);
        }
        let k = idx.len();
        let mu = DVector::from_fn(k, |r, _| self.mean[idx[r]]);
        let sig = DMatrix::from_fn(k, k, |r, c| self.cov[(idx[r], idx[c])]);
        let y = DVector::from_vec(self.obs_flat_values(obs));
        let chol = linalg::symmetrized(&sig)
            .cholesky()
            .ok_or_else(|| DsemError::numerical("oracle observation covariance is singular"))?;
        let resid = &y - &mu;
        let quad = resid.dot(&chol.solve(&resid));
        let mut logdet = 0.0;
        for i in 0..k {
            logdet += 2.0 * chol.l_dirty()[(i, i)].ln();
        }
        Ok(-0.5 * ((k as f64) * LN_2PI + logdet + quad))
    }

    /// Condition the stacked state vector on the observed entries.
    /// Returns the smoothing mean and covariance of `[x_1, ..., x_T]`.
    pub fn conditional_state_moments(
        &self,
        obs: &ObservationSequence,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let ns = self.horizon * self.state_dim;
        let idx = self.obs_flat_indices(obs);
        let state_mean = self.mean.rows(0, ns).into_owned();
        let state_cov = self.cov.view((0, 0), (ns, ns)).into_owned();
        if idx.is_empty() {
            return Ok((state_mean, state_cov));
        }
        let k = idx.len();
        let mu_o = DVector::from_fn(k, |r, _| self.mean[idx[r]]);
        let sig_oo = DMatrix::from_fn(k, k, |r, c| self.cov[(idx[r], idx[c])]);
        let sig_so = DMatrix::from_fn(ns, k, |r, c| self.cov[(r, idx[c])]);
        let y = DVector::from_vec(self.obs_flat_values(obs));
        let chol = linalg::symmetrized(&sig_oo)
            .cholesky()
            .ok_or_else(|| DsemError::numerical("oracle observation covariance is singular"))?;
        let w = chol.solve(&sig_so.transpose()); // k x ns
        let mean = &state_mean + w.transpose() * (&y - &mu_o);
        let mut cov = &state_cov - sig_so * w;
        symmetrize(&mut cov);
        Ok((mean, cov))
    }
}
