//! Translation of a within-level DSEM (lag polynomials over latent variables
//! and linear predictors) into linear Gaussian state-space form, plus a
//! direct-recursion simulator used as an equivalence oracle.
//!
//! The augmented state stacks `[eta_t, ..., eta_{t-L+1}, y*_t, ..., y*_{t-L+1}]`.
//! When the model has no predictor feedback (no R or Q terms and loadings
//! only at lag zero) an equivalent compact system over the latent block alone
//! is available via [`build_marginal_system`]; the samplers use it because it
//! is much cheaper while producing the identical observation law.

use nalgebra::{DMatrix, DVector};

use crate::error::{DsemError, Result};
use crate::linalg::check_psd;
use crate::ssm::{
    diffuse_init, stationary_moments, LgssmSystem, TimeVarying, TransitionStep,
};

/// Measurement family of one indicator.
#[derive(Debug, Clone, PartialEq)]
pub enum IndicatorFamily {
    /// Conditionally normal indicator with residual standard deviation.
    Gaussian,
    /// Binary indicator through the standard normal CDF.
    BernoulliProbit,
    /// Binomial indicator (Bernoulli when all trial counts are one) through
    /// the logistic CDF, with trial counts taken from the data.
    BinomialLogit,
    /// Ordered categorical indicator through the standard normal CDF with
    /// `categories` levels.
    OrdinalProbit { categories: usize },
}

impl IndicatorFamily {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, IndicatorFamily::Gaussian)
    }

    pub fn validate(&self) -> Result<()> {
        if let IndicatorFamily::OrdinalProbit { categories } = self {
            if *categories < 2 {
                return Err(DsemError::spec("ordinal indicators need at least two categories"));
            }
        }
        Ok(())
    }
}

/// Fully materialized within-level model for one participant. Lag-indexed
/// matrices run from lag 0 to `lag`; lag-0 entries of the autoregression
/// matrices `r` and `b` are the strictly lower triangular contemporaneous
/// regression blocks.
#[derive(Debug, Clone)]
pub struct WithinModelSpec {
    pub n_indicators: usize,
    pub n_latent: usize,
    pub lag: usize,
    /// Intercept of the linear-predictor equation (length `n_indicators`).
    pub nu: DVector<f64>,
    /// Intercept of the latent equation (length `n_latent`).
    pub alpha: DVector<f64>,
    /// Loadings per lag (`n_indicators x n_latent` each, lags 0..=L).
    pub lambda: Vec<DMatrix<f64>>,
    /// Predictor autoregression per lag (`n_indicators x n_indicators`).
    pub r: Vec<DMatrix<f64>>,
    /// Latent autoregression per lag (`n_latent x n_latent`).
    pub b: Vec<DMatrix<f64>>,
    /// Predictor-to-latent feedback per lag (`n_latent x n_indicators`).
    pub q: Vec<DMatrix<f64>>,
    /// Process noise covariance (`n_latent x n_latent`, PSD).
    pub psi: DMatrix<f64>,
    /// Optional covariate maps; `x` holds one covariate vector per timepoint
    /// and must be complete when present.
    pub k1: Option<DMatrix<f64>>,
    pub gamma1: Option<DMatrix<f64>>,
    pub x: Vec<DVector<f64>>,
}

impl WithinModelSpec {
    /// A spec with all matrices zero, handy as a starting point in builders
    /// and tests.
    pub fn zeroed(n_indicators: usize, n_latent: usize, lag: usize) -> Self {
        WithinModelSpec {
            n_indicators,
            n_latent,
            lag,
            nu: DVector::zeros(n_indicators),
            alpha: DVector::zeros(n_latent),
            lambda: vec![DMatrix::zeros(n_indicators, n_latent); lag + 1],
            r: vec![DMatrix::zeros(n_indicators, n_indicators); lag + 1],
            b: vec![DMatrix::zeros(n_latent, n_latent); lag + 1],
            q: vec![DMatrix::zeros(n_latent, n_indicators); lag + 1],
            psi: DMatrix::zeros(n_latent, n_latent),
            k1: None,
            gamma1: None,
            x: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.n_indicators;
        let v = self.n_latent;
        if self.lag == 0 {
            return Err(DsemError::spec("maximum lag must be at least one"));
        }
        if u == 0 || v == 0 {
            return Err(DsemError::spec("indicator and latent dimensions must be positive"));
        }
        if self.nu.len() != u || self.alpha.len() != v {
            return Err(DsemError::spec("intercept dimensions are inconsistent"));
        }
        for (name, mats, rows, cols) in [
            ("lambda", &self.lambda, u, v),
            ("r", &self.r, u, u),
            ("b", &self.b, v, v),
            ("q", &self.q, v, u),
        ] {
            if mats.len() != self.lag + 1 {
                return Err(DsemError::spec(format!(
                    "{name} must supply one matrix per lag 0..={}",
                    self.lag
                )));
            }
            for (l, m) in mats.iter().enumerate() {
                if m.nrows() != rows || m.ncols() != cols {
                    return Err(DsemError::spec(format!(
                        "{name} at lag {l} has shape {}x{}, expected {rows}x{cols}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
        }
        check_strictly_lower(&self.r[0], "R_0")?;
        check_strictly_lower(&self.b[0], "B_0")?;
        check_psd(&self.psi, "process noise covariance")
            .map_err(|e| DsemError::spec(e.to_string()))?;
        match (&self.k1, &self.gamma1) {
            (None, None) => {
                if !self.x.is_empty() {
                    return Err(DsemError::spec(
                        "covariate series supplied without covariate maps",
                    ));
                }
            }
            (k1, gamma1) => {
                let nx = k1
                    .as_ref()
                    .map(|m| m.ncols())
                    .or_else(|| gamma1.as_ref().map(|m| m.ncols()))
                    .unwrap();
                if let Some(k1) = k1 {
                    if k1.nrows() != u || k1.ncols() != nx {
                        return Err(DsemError::spec("K_1 has inconsistent dimensions"));
                    }
                }
                if let Some(g1) = gamma1 {
                    if g1.nrows() != v || g1.ncols() != nx {
                        return Err(DsemError::spec("Gamma_1 has inconsistent dimensions"));
                    }
                }
                if self.x.is_empty() {
                    return Err(DsemError::spec(
                        "covariate maps supplied without a complete covariate series",
                    ));
                }
                for (t, xt) in self.x.iter().enumerate() {
                    if xt.len() != nx {
                        return Err(DsemError::spec(format!(
                            "covariate vector at timepoint {t} has length {}, expected {nx}",
                            xt.len()
                        )));
                    }
                    if xt.iter().any(|v| !v.is_finite()) {
                        return Err(DsemError::spec(format!(
                            "covariates must be complete and finite (timepoint {t})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Covariate effect on the predictor equation at `t` (0-based).
    fn k1_x(&self, t: usize) -> DVector<f64> {
        match (&self.k1, self.x.get(t)) {
            (Some(k1), Some(x)) => k1 * x,
            _ => DVector::zeros(self.n_indicators),
        }
    }

    /// Covariate effect on the latent equation at `t` (0-based).
    fn gamma1_x(&self, t: usize) -> DVector<f64> {
        match (&self.gamma1, self.x.get(t)) {
            (Some(g1), Some(x)) => g1 * x,
            _ => DVector::zeros(self.n_latent),
        }
    }

    fn has_covariates(&self) -> bool {
        self.k1.is_some() || self.gamma1.is_some()
    }

    /// True when the model has no predictor feedback: all R and Q terms zero
    /// and loadings only at lag zero. Such models admit the compact
    /// latent-block state representation.
    pub fn is_reducible(&self) -> bool {
        self.r.iter().all(|m| m.amax() == 0.0)
            && self.q.iter().all(|m| m.amax() == 0.0)
            && self.lambda.iter().skip(1).all(|m| m.amax() == 0.0)
            && self.b[0].amax() == 0.0
            && self.nu.amax() == 0.0
            && !self.has_covariates()
    }
}

fn check_strictly_lower(m: &DMatrix<f64>, name: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            if m[(i, j)] != 0.0 {
                return Err(DsemError::spec(format!(
                    "{name} must be strictly lower triangular (nonzero at ({i},{j}))"
                )));
            }
        }
    }
    Ok(())
}

/// Layout of the augmented state vector
/// `[eta_t, ..., eta_{t-L+1}, y*_t, ..., y*_{t-L+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedStateLayout {
    pub n_latent: usize,
    pub n_indicators: usize,
    pub lag: usize,
}

impl AugmentedStateLayout {
    pub fn new(spec: &WithinModelSpec) -> Self {
        AugmentedStateLayout {
            n_latent: spec.n_latent,
            n_indicators: spec.n_indicators,
            lag: spec.lag,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.lag * (self.n_latent + self.n_indicators)
    }

    /// Offset of the lag-`k` latent block.
    pub fn eta_offset(&self, k: usize) -> usize {
        debug_assert!(k < self.lag);
        k * self.n_latent
    }

    /// Offset of the lag-`k` linear-predictor block.
    pub fn ystar_offset(&self, k: usize) -> usize {
        debug_assert!(k < self.lag);
        self.lag * self.n_latent + k * self.n_indicators
    }

    /// Measurement matrix selecting the contemporaneous predictor block:
    /// `[0_{U x L V1}  I_U  0_{U x (L-1) U}]`.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_indicators, self.state_dim());
        let off = self.ystar_offset(0);
        for j in 0..self.n_indicators {
            z[(j, off + j)] = 1.0;
        }
        z
    }

    pub fn extract_eta(&self, state: &DVector<f64>, k: usize) -> DVector<f64> {
        state.rows(self.eta_offset(k), self.n_latent).into_owned()
    }

    pub fn extract_ystar(&self, state: &DVector<f64>, k: usize) -> DVector<f64> {
        state.rows(self.ystar_offset(k), self.n_indicators).into_owned()
    }
}

/// Inverses of the contemporaneous coupling, via block inversion with the
/// Schur complement of the joint `[eta; y*]` system.
#[derive(Debug, Clone)]
pub struct ContempInverses {
    /// `(I - R_0)^{-1}`
    pub a0: DMatrix<f64>,
    /// `(I - B_0)^{-1}`
    pub xi0: DMatrix<f64>,
    /// `{I - Xi_0 Q_0 A_0 Lambda_0}^{-1} Xi_0`
    pub m1: DMatrix<f64>,
    /// `{I - A_0 Lambda_0 Xi_0 Q_0}^{-1} A_0`
    pub n1: DMatrix<f64>,
}

pub fn contemporaneous_inverses(spec: &WithinModelSpec) -> Result<ContempInverses> {
    check_strictly_lower(&spec.r[0], "R_0")?;
    check_strictly_lower(&spec.b[0], "B_0")?;
    let u = spec.n_indicators;
    let v = spec.n_latent;
    let a0 = (DMatrix::identity(u, u) - &spec.r[0])
        .try_inverse()
        .ok_or_else(|| DsemError::numerical("I - R_0 is numerically singular"))?;
    let xi0 = (DMatrix::identity(v, v) - &spec.b[0])
        .try_inverse()
        .ok_or_else(|| DsemError::numerical("I - B_0 is numerically singular"))?;
    let lambda0 = &spec.lambda[0];
    let q0 = &spec.q[0];
    let m1 = (DMatrix::identity(v, v) - &xi0 * q0 * &a0 * lambda0)
        .try_inverse()
        .ok_or_else(|| DsemError::numerical("contemporaneous latent system is singular"))?
        * &xi0;
    let n1 = (DMatrix::identity(u, u) - &a0 * lambda0 * &xi0 * q0)
        .try_inverse()
        .ok_or_else(|| DsemError::numerical("contemporaneous predictor system is singular"))?
        * &a0;
    Ok(ContempInverses { a0, xi0, m1, n1 })
}

/// Assembled transition for one step of the augmented system: the matrix,
/// the noise loading `G` with `W = G Psi G'`, and the pieces needed to form
/// intercepts (which may vary with covariates).
#[derive(Debug, Clone)]
pub struct AugmentedTransition {
    pub layout: AugmentedStateLayout,
    pub t_mat: DMatrix<f64>,
    pub noise_loading: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    inv: ContempInverses,
}

/// Build the augmented transition matrix and process noise per the composite
/// lag polynomials; the intercept is produced separately because it may vary
/// with covariates.
pub fn build_transition(spec: &WithinModelSpec) -> Result<AugmentedTransition> {
    spec.validate()?;
    let inv = contemporaneous_inverses(spec)?;
    let layout = AugmentedStateLayout::new(spec);
    let (u, v, lag) = (spec.n_indicators, spec.n_latent, spec.lag);
    let dim = layout.state_dim();
    let mut t_mat = DMatrix::zeros(dim, dim);

    let q0a0 = &spec.q[0] * &inv.a0;
    let l0xi0 = &spec.lambda[0] * &inv.xi0;

    for k in 1..=lag {
        // Composite polynomial coefficients at lag k.
        let p_eta = &spec.b[k] + &q0a0 * &spec.lambda[k];
        let p_ystar = &spec.q[k] + &q0a0 * &spec.r[k];
        let q_eta = &spec.lambda[k] + &l0xi0 * &spec.b[k];
        let q_ystar = &spec.r[k] + &l0xi0 * &spec.q[k];

        let col_eta = layout.eta_offset(k - 1);
        let col_ystar = layout.ystar_offset(k - 1);
        t_mat.view_mut((0, col_eta), (v, v)).copy_from(&(&inv.m1 * p_eta));
        t_mat.view_mut((0, col_ystar), (v, u)).copy_from(&(&inv.m1 * p_ystar));
        t_mat
            .view_mut((layout.ystar_offset(0), col_eta), (u, v))
            .copy_from(&(&inv.n1 * q_eta));
        t_mat
            .view_mut((layout.ystar_offset(0), col_ystar), (u, u))
            .copy_from(&(&inv.n1 * q_ystar));
    }
    // Shift-register rows carry lagged values forward with no noise.
    for k in 1..lag {
        for i in 0..v {
            t_mat[(layout.eta_offset(k) + i, layout.eta_offset(k - 1) + i)] = 1.0;
        }
        for i in 0..u {
            t_mat[(layout.ystar_offset(k) + i, layout.ystar_offset(k - 1) + i)] = 1.0;
        }
    }

    let mut noise_loading = DMatrix::zeros(dim, v);
    noise_loading.view_mut((0, 0), (v, v)).copy_from(&inv.m1);
    noise_loading
        .view_mut((layout.ystar_offset(0), 0), (u, v))
        .copy_from(&(&inv.n1 * &l0xi0));
    let mut noise = &noise_loading * &spec.psi * noise_loading.transpose();
    crate::linalg::symmetrize(&mut noise);

    Ok(AugmentedTransition { layout, t_mat, noise_loading, noise, inv })
}

impl AugmentedTransition {
    /// Intercept of the step arriving at timepoint `t_next` (0-based index of
    /// the destination timepoint, which supplies the covariates).
    pub fn intercept_at(&self, spec: &WithinModelSpec, t_next: usize) -> DVector<f64> {
        let rhs_eta = &spec.alpha + spec.gamma1_x(t_next);
        let rhs_ystar = &spec.nu + spec.k1_x(t_next);
        let c_eta = &self.inv.m1 * (&rhs_eta + &spec.q[0] * &self.inv.a0 * &rhs_ystar);
        let c_ystar =
            &self.inv.n1 * (&rhs_ystar + &spec.lambda[0] * &self.inv.xi0 * &rhs_eta);
        let mut c = DVector::zeros(self.layout.state_dim());
        c.rows_mut(0, spec.n_latent).copy_from(&c_eta);
        c.rows_mut(self.layout.ystar_offset(0), spec.n_indicators).copy_from(&c_ystar);
        c
    }

    /// Solve the contemporaneous system at timepoint `t` (0-based) given
    /// lagged values (lag-1 first) and a disturbance draw; returns
    /// `(eta_t, y*_t)`.
    pub fn solve_contemporaneous(
        &self,
        spec: &WithinModelSpec,
        t: usize,
        lagged_eta: &[DVector<f64>],
        lagged_ystar: &[DVector<f64>],
        xi: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let mut rhs_eta = &spec.alpha + spec.gamma1_x(t) + xi;
        let mut rhs_ystar = &spec.nu + spec.k1_x(t);
        for l in 1..=spec.lag {
            rhs_eta += &spec.b[l] * &lagged_eta[l - 1] + &spec.q[l] * &lagged_ystar[l - 1];
            rhs_ystar += &spec.lambda[l] * &lagged_eta[l - 1] + &spec.r[l] * &lagged_ystar[l - 1];
        }
        let eta = &self.inv.m1 * (&rhs_eta + &spec.q[0] * &self.inv.a0 * &rhs_ystar);
        let ystar = &self.inv.n1 * (&rhs_ystar + &spec.lambda[0] * &self.inv.xi0 * &rhs_eta);
        (eta, ystar)
    }
}

/// Assemble the augmented-state system over a horizon. `sigma` supplies the
/// measurement noise per timepoint (identity rows for probit indicators,
/// `1/omega` rows for logit, residual variances for Gaussian rows).
pub fn build_system(
    spec: &WithinModelSpec,
    horizon: usize,
    sigma: TimeVarying<DMatrix<f64>>,
) -> Result<LgssmSystem> {
    let tr = build_transition(spec)?;
    let layout = tr.layout;

    let transition = if spec.has_covariates() {
        if spec.x.len() < horizon {
            return Err(DsemError::spec(format!(
                "covariate series has {} timepoints, horizon needs {horizon}",
                spec.x.len()
            )));
        }
        let steps = (0..horizon.saturating_sub(1))
            .map(|t| TransitionStep {
                t_mat: tr.t_mat.clone(),
                intercept: tr.intercept_at(spec, t + 1),
                noise: tr.noise.clone(),
            })
            .collect();
        TimeVarying::PerStep(steps)
    } else {
        TimeVarying::Constant(TransitionStep {
            t_mat: tr.t_mat.clone(),
            intercept: tr.intercept_at(spec, 0),
            noise: tr.noise.clone(),
        })
    };

    let (init_mean, init_cov) = match &transition {
        TimeVarying::Constant(step) => {
            match stationary_moments(&step.t_mat, &step.intercept, &step.noise) {
                Ok(moments) => moments,
                Err(_) => diffuse_init(layout.state_dim()),
            }
        }
        TimeVarying::PerStep(steps) => {
            let step = &steps[0];
            match stationary_moments(&step.t_mat, &step.intercept, &step.noise) {
                Ok(moments) => moments,
                Err(_) => diffuse_init(layout.state_dim()),
            }
        }
    };

    let system = LgssmSystem {
        state_dim: layout.state_dim(),
        obs_dim: spec.n_indicators,
        horizon,
        transition,
        z: TimeVarying::Constant(layout.z_matrix()),
        sigma,
        init_mean,
        init_cov,
    };
    system.validate()?;
    Ok(system)
}

/// Compact equivalent system over the latent block alone, available when the
/// model has no predictor feedback (see [`WithinModelSpec::is_reducible`]).
/// The state stacks `[eta_t, ..., eta_{t-L+1}]` and the measurement matrix
/// applies the lag-0 loadings to the contemporaneous block.
pub fn build_marginal_system(
    spec: &WithinModelSpec,
    horizon: usize,
    sigma: TimeVarying<DMatrix<f64>>,
) -> Result<LgssmSystem> {
    spec.validate()?;
    if !spec.is_reducible() {
        return Err(DsemError::unsupported(
            "the compact latent-block system requires a model with no predictor feedback \
             (zero R and Q polynomials, loadings at lag zero only, zero within-level \
             predictor intercept, no covariates)",
        ));
    }
    let v = spec.n_latent;
    let lag = spec.lag;
    let dim = lag * v;
    let mut t_mat = DMatrix::zeros(dim, dim);
    for k in 1..=lag {
        t_mat.view_mut((0, (k - 1) * v), (v, v)).copy_from(&spec.b[k]);
    }
    for k in 1..lag {
        for i in 0..v {
            t_mat[(k * v + i, (k - 1) * v + i)] = 1.0;
        }
    }
    let mut noise = DMatrix::zeros(dim, dim);
    noise.view_mut((0, 0), (v, v)).copy_from(&spec.psi);
    let mut intercept = DVector::zeros(dim);
    intercept.rows_mut(0, v).copy_from(&spec.alpha);

    let mut z = DMatrix::zeros(spec.n_indicators, dim);
    z.view_mut((0, 0), (spec.n_indicators, v)).copy_from(&spec.lambda[0]);

    let (init_mean, init_cov) = match stationary_moments(&t_mat, &intercept, &noise) {
        Ok(moments) => moments,
        Err(_) => diffuse_init(dim),
    };

    let system = LgssmSystem {
        state_dim: dim,
        obs_dim: spec.n_indicators,
        horizon,
        transition: TimeVarying::Constant(TransitionStep { t_mat, intercept, noise }),
        z: TimeVarying::Constant(z),
        sigma,
        init_mean,
        init_cov,
    };
    system.validate()?;
    Ok(system)
}

/// Simulated within-level trajectories.
#[derive(Debug, Clone)]
pub struct WithinTrajectories {
    pub eta: Vec<DVector<f64>>,
    pub ystar: Vec<DVector<f64>>,
}

/// Simulate the within-level model by direct recursion: solve the
/// contemporaneous system at each timepoint given the lagged values and the
/// supplied disturbance draws. The first timepoint is taken from
/// `initial_state` (an augmented state vector), so both simulation routes can
/// share their starting point and disturbances exactly.
pub fn simulate_within_direct(
    spec: &WithinModelSpec,
    horizon: usize,
    initial_state: &DVector<f64>,
    noise: &[DVector<f64>],
) -> Result<WithinTrajectories> {
    spec.validate()?;
    let tr = build_transition(spec)?;
    let layout = tr.layout;
    if initial_state.len() != layout.state_dim() {
        return Err(DsemError::config(format!(
            "initial state has length {}, expected {}",
            initial_state.len(),
            layout.state_dim()
        )));
    }
    if noise.len() + 1 < horizon {
        return Err(DsemError::config(format!(
            "need {} disturbance draws for horizon {horizon}",
            horizon - 1
        )));
    }

    let mut eta: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut ystar: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    eta.push(layout.extract_eta(initial_state, 0));
    ystar.push(layout.extract_ystar(initial_state, 0));

    // Pre-period lags live in the deeper blocks of the initial state.
    let pre_eta: Vec<DVector<f64>> =
        (1..spec.lag).map(|k| layout.extract_eta(initial_state, k)).collect();
    let pre_ystar: Vec<DVector<f64>> =
        (1..spec.lag).map(|k| layout.extract_ystar(initial_state, k)).collect();

    for t in 1..horizon {
        // Lagged values ordered lag-1 first.
        let mut lagged_eta = Vec::with_capacity(spec.lag);
        let mut lagged_ystar = Vec::with_capacity(spec.lag);
        for l in 1..=spec.lag {
            if t >= l {
                lagged_eta.push(eta[t - l].clone());
                lagged_ystar.push(ystar[t - l].clone());
            } else {
                let k = l - t; // how deep into the pre-period
                lagged_eta.push(pre_eta[k - 1].clone());
                lagged_ystar.push(pre_ystar[k - 1].clone());
            }
        }
        let (e, y) = tr.solve_contemporaneous(spec, t, &lagged_eta, &lagged_ystar, &noise[t - 1]);
        eta.push(e);
        ystar.push(y);
    }

    Ok(WithinTrajectories { eta, ystar })
}

/// Simulate the compiled LG-SSM with shared disturbances:
/// `x_{t+1} = T x_t + c_t + G xi_{t+1}`.
pub fn simulate_lgssm_shared_noise(
    spec: &WithinModelSpec,
    horizon: usize,
    initial_state: &DVector<f64>,
    noise: &[DVector<f64>],
) -> Result<WithinTrajectories> {
    let tr = build_transition(spec)?;
    let layout = tr.layout;
    if initial_state.len() != layout.state_dim() {
        return Err(DsemError::config("initial state dimension mismatch"));
    }
    let mut state = initial_state.clone();
    let mut eta = vec![layout.extract_eta(&state, 0)];
    let mut ystar = vec![layout.extract_ystar(&state, 0)];
    for t in 1..horizon {
        state = &tr.t_mat * &state + tr.intercept_at(spec, t) + &tr.noise_loading * &noise[t - 1];
        eta.push(layout.extract_eta(&state, 0));
        ystar.push(layout.extract_ystar(&state, 0));
    }
    Ok(WithinTrajectories { eta, ystar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn identity_case_inverses() {
        let spec = WithinModelSpec::zeroed(2, 2, 1);
        let inv = contemporaneous_inverses(&spec).unwrap();
        assert!((inv.a0 - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((inv.xi0 - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((inv.m1 - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((inv.n1 - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn scalar_feedback_inverses() {
        let mut spec = WithinModelSpec::zeroed(1, 1, 1);
        let lambda = 0.7;
        let q = 0.4;
        spec.lambda[0] = dmatrix![lambda];
        spec.q[0] = dmatrix![q];
        let inv = contemporaneous_inverses(&spec).unwrap();
        assert!((inv.m1[(0, 0)] - 1.0 / (1.0 - q * lambda)).abs() < 1e-14);
        assert!((inv.n1[(0, 0)] - 1.0 / (1.0 - lambda * q)).abs() < 1e-14);
    }

    #[test]
    fn nilpotent_r0_gives_neumann_inverse() {
        let mut spec = WithinModelSpec::zeroed(2, 1, 1);
        spec.r[0] = dmatrix![0.0, 0.0; 0.5, 0.0];
        let inv = contemporaneous_inverses(&spec).unwrap();
        let expected = DMatrix::identity(2, 2) + &spec.r[0];
        assert!((inv.a0 - expected).amax() < 1e-14);
    }

    #[test]
    fn non_strictly_triangular_is_a_spec_error() {
        let mut spec = WithinModelSpec::zeroed(2, 1, 1);
        spec.r[0] = dmatrix![0.0, 0.3; 0.0, 0.0];
        assert!(matches!(
            contemporaneous_inverses(&spec).unwrap_err(),
            DsemError::Spec(_)
        ));
        let mut spec2 = WithinModelSpec::zeroed(1, 2, 1);
        spec2.b[0] = dmatrix![0.1, 0.0; 0.0, 0.0];
        assert!(matches!(build_transition(&spec2).unwrap_err(), DsemError::Spec(_)));
    }

    /// Five-indicator AR(1) factor model: hand expansion of the theorem.
    #[test]
    fn ar1_factor_model_blocks() {
        let phi = 0.4;
        let psi_sq = 0.84;
        let lambda = dvector![1.0, 0.9, 1.1, 0.7, 0.8];
        let mut spec = WithinModelSpec::zeroed(5, 1, 1);
        spec.b[1] = dmatrix![phi];
        spec.lambda[0] = DMatrix::from_column_slice(5, 1, lambda.as_slice());
        spec.psi = dmatrix![psi_sq];

        let tr = build_transition(&spec).unwrap();
        assert_eq!(tr.layout.state_dim(), 6);
        assert!((tr.t_mat[(0, 0)] - phi).abs() < 1e-14);
        for j in 0..5 {
            assert!((tr.t_mat[(1 + j, 0)] - lambda[j] * phi).abs() < 1e-14);
            // Columns for the lagged predictor block are zero.
            assert_eq!(tr.t_mat[(0, 1 + j)], 0.0);
        }
        assert!((tr.noise[(0, 0)] - psi_sq).abs() < 1e-14);
        for j in 0..5 {
            assert!((tr.noise[(0, 1 + j)] - psi_sq * lambda[j]).abs() < 1e-14);
            for k in 0..5 {
                assert!((tr.noise[(1 + j, 1 + k)] - psi_sq * lambda[j] * lambda[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_lag_matrices_leave_shift_register_only() {
        let mut spec = WithinModelSpec::zeroed(2, 1, 2);
        spec.nu = dvector![0.3, -0.2];
        spec.alpha = dvector![0.5];
        let tr = build_transition(&spec).unwrap();
        // Top row blocks are all zero.
        for c in 0..tr.layout.state_dim() {
            assert_eq!(tr.t_mat[(0, c)], 0.0);
        }
        // Shift register rows present for both blocks.
        assert_eq!(tr.t_mat[(1, 0)], 1.0);
        assert_eq!(tr.t_mat[(4, 2)], 1.0);
        assert_eq!(tr.t_mat[(5, 3)], 1.0);
        let c = tr.intercept_at(&spec, 1);
        assert!((c[0] - 0.5).abs() < 1e-14);
        assert!((c[2] - 0.3).abs() < 1e-14);
        assert!((c[3] + 0.2).abs() < 1e-14);
        // Shift rows carry no intercept.
        assert_eq!(c[1], 0.0);
        assert_eq!(c[4], 0.0);
        assert_eq!(c[5], 0.0);
    }

    #[test]
    fn var1_blocks() {
        let phi = dmatrix![0.3, 0.1, 0.1; 0.1, 0.3, 0.1; 0.1, 0.1, 0.3];
        let mut lambda = DMatrix::zeros(9, 3);
        let free = [1.1, 0.8, 0.9, 1.2, 0.7, 1.0];
        for f in 0..3 {
            lambda[(3 * f, f)] = 1.0;
            lambda[(3 * f + 1, f)] = free[2 * f];
            lambda[(3 * f + 2, f)] = free[2 * f + 1];
        }
        let mut spec = WithinModelSpec::zeroed(9, 3, 1);
        spec.b[1] = phi.clone();
        spec.lambda[0] = lambda.clone();
        spec.psi = DMatrix::identity(3, 3) * 0.5;
        let tr = build_transition(&spec).unwrap();
        assert!((tr.t_mat.view((0, 0), (3, 3)) - &phi).amax() < 1e-14);
        assert!((tr.t_mat.view((3, 0), (9, 3)) - &lambda * &phi).amax() < 1e-14);
    }

    #[test]
    fn marginal_system_matches_augmented_likelihood() {
        use crate::ssm::{kalman_filter, ObservationSequence};
        let mut spec = WithinModelSpec::zeroed(3, 2, 2);
        spec.b[1] = dmatrix![0.5, 0.1; -0.2, 0.3];
        spec.b[2] = dmatrix![0.1, 0.0; 0.05, -0.1];
        spec.lambda[0] = dmatrix![1.0, 0.0; 0.7, 0.4; 0.0, 1.0];
        spec.psi = dmatrix![0.8, 0.2; 0.2, 0.6];
        let sigma = DMatrix::from_diagonal(&dvector![0.5, 1.0, 0.7]);
        let horizon = 7;

        let augmented =
            build_system(&spec, horizon, TimeVarying::Constant(sigma.clone())).unwrap();
        let marginal =
            build_marginal_system(&spec, horizon, TimeVarying::Constant(sigma)).unwrap();
        assert_eq!(marginal.state_dim, 4);
        assert_eq!(augmented.state_dim, 10);

        let mut rng = crate::rng::substream(11, &[3]);
        let values: Vec<DVector<f64>> = (0..horizon)
            .map(|_| DVector::from_fn(3, |_, _| rand::Rng::gen_range(&mut rng, -1.5..1.5)))
            .collect();
        let mut mask = vec![vec![true; 3]; horizon];
        mask[2] = vec![false, true, false];
        mask[5] = vec![false, false, false];
        let obs = ObservationSequence::new(values, mask).unwrap();

        let ll_aug = kalman_filter(&augmented, &obs).unwrap().log_likelihood;
        let ll_marg = kalman_filter(&marginal, &obs).unwrap().log_likelihood;
        assert!(
            (ll_aug - ll_marg).abs() < 1e-9 * ll_aug.abs().max(1.0),
            "augmented {ll_aug} vs marginal {ll_marg}"
        );
    }

    #[test]
    fn deterministic_ar1_recursion() {
        let mut spec = WithinModelSpec::zeroed(1, 1, 1);
        spec.b[1] = dmatrix![0.4];
        spec.lambda[0] = dmatrix![1.0];
        let mut init = DVector::zeros(2);
        init[0] = 1.0; // eta_1 = 1
        init[1] = 1.0; // y*_1 = lambda * eta_1
        let noise = vec![dvector![0.0]; 9];
        let traj = simulate_within_direct(&spec, 10, &init, &noise).unwrap();
        for (t, e) in traj.eta.iter().enumerate() {
            assert!((e[0] - 0.4_f64.powi(t as i32)).abs() < 1e-12, "t={t}");
            assert!((traj.ystar[t][0] - 0.4_f64.powi(t as i32)).abs() < 1e-12);
        }
    }
}
