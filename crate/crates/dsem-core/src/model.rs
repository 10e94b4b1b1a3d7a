//! Estimable model description and its unconstrained parameterization.
//!
//! A [`FitModel`] describes the family of models the samplers estimate: a
//! latent vector autoregression of order `lag` measured through lag-0
//! loadings (no predictor feedback), a between-participant level with
//! loadings and random-effect covariance, per-indicator measurement
//! families, and optional participant variation in dynamics, process noise,
//! and loadings (non-centered). [`Layout`] maps every sampled quantity to a
//! position in one flat unconstrained vector and knows each block's
//! transform and prior.

use nalgebra::{DMatrix, DVector};

use crate::augment::ThresholdSet;
use crate::compile::{IndicatorFamily, WithinModelSpec};
use crate::error::{DsemError, Result};

/// Entry of a structural pattern matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatternEntry {
    Fixed(f64),
    Free,
}

/// Dense pattern matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<PatternEntry>,
}

impl PatternMatrix {
    pub fn fixed(nrows: usize, ncols: usize, value: f64) -> Self {
        PatternMatrix { nrows, ncols, entries: vec![PatternEntry::Fixed(value); nrows * ncols] }
    }

    pub fn free(nrows: usize, ncols: usize) -> Self {
        PatternMatrix { nrows, ncols, entries: vec![PatternEntry::Free; nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut p = PatternMatrix::fixed(n, n, 0.0);
        for i in 0..n {
            p.set(i, i, PatternEntry::Fixed(1.0));
        }
        p
    }

    pub fn get(&self, r: usize, c: usize) -> PatternEntry {
        self.entries[r * self.ncols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, e: PatternEntry) {
        self.entries[r * self.ncols + c] = e;
    }

    pub fn n_free(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, PatternEntry::Free)).count()
    }

    /// Row-major positions of the free entries.
    pub fn free_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.nrows {
            for c in 0..self.ncols {
                if matches!(self.get(r, c), PatternEntry::Free) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Materialize with free entries taken from `values` in row-major order.
    pub fn materialize(&self, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        let mut k = 0;
        for r in 0..self.nrows {
            for c in 0..self.ncols {
                m[(r, c)] = match self.get(r, c) {
                    PatternEntry::Fixed(v) => v,
                    PatternEntry::Free => {
                        let v = values[k];
                        k += 1;
                        v
                    }
                };
            }
        }
        m
    }
}

/// Structure of a covariance block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceForm {
    /// One log-variance parameter (dimension must be one).
    ScalarVariance,
    /// One log-variance parameter per coordinate.
    Diagonal,
    /// Full covariance via a lower Cholesky factor with log-diagonal and
    /// free off-diagonal parameters.
    Cholesky,
}

impl CovarianceForm {
    /// Number of free parameters for a `dim`-dimensional block.
    pub fn n_params(&self, dim: usize) -> usize {
        match self {
            CovarianceForm::ScalarVariance => 1,
            CovarianceForm::Diagonal => dim,
            CovarianceForm::Cholesky => dim * (dim + 1) / 2,
        }
    }
}

/// How ordinal thresholds are treated.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdMode {
    /// User-supplied constants (required by the hybrid sampler).
    Fixed(ThresholdSet),
    /// Estimated freely through an ordered transform (pure NUTS, or the
    /// hybrid sampler's diagnostic mode).
    Free { categories: usize },
}

/// Normal prior on a single (possibly transformed) parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPrior {
    pub mean: f64,
    pub sd: f64,
}

impl GaussPrior {
    pub fn new(mean: f64, sd: f64) -> Self {
        GaussPrior { mean, sd }
    }
}

/// Prior on a positive scale parameter represented as `exp(raw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalePrior {
    /// Standard-normal-type prior truncated to the positive line on the
    /// standard deviation itself.
    HalfNormalOnSd { scale: f64 },
    /// Truncated normal on the variance.
    HalfNormalOnVariance { scale: f64 },
}

/// Prior settings per block. Gaussian priors apply to the unconstrained
/// representation of each block (identity for loadings and intercepts,
/// inverse-tanh scale for the scalar autoregression, logs for variances and
/// Cholesky diagonals); thresholds get normal priors on the constrained
/// values with the ordered-transform Jacobian included.
#[derive(Debug, Clone)]
pub struct Priors {
    pub nu: GaussPrior,
    pub lambda2: GaussPrior,
    pub dynamics: GaussPrior,
    pub dynamics_scale: ScalePrior,
    pub noise_diag: GaussPrior,
    pub noise_offdiag: GaussPrior,
    pub noise_scale: ScalePrior,
    pub loadings: GaussPrior,
    pub loading_scale: ScalePrior,
    pub between_diag: GaussPrior,
    pub between_offdiag: GaussPrior,
    pub sigma: GaussPrior,
    pub thresholds: GaussPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            nu: GaussPrior::new(0.0, 2.0),
            lambda2: GaussPrior::new(1.0, 0.5),
            dynamics: GaussPrior::new(0.0, 1.0),
            dynamics_scale: ScalePrior::HalfNormalOnVariance { scale: 1.0 },
            noise_diag: GaussPrior::new(0.0, 1.0),
            noise_offdiag: GaussPrior::new(0.0, 0.5),
            noise_scale: ScalePrior::HalfNormalOnVariance { scale: 1.0 },
            loadings: GaussPrior::new(1.0, 0.5),
            loading_scale: ScalePrior::HalfNormalOnVariance { scale: 1.0 },
            between_diag: GaussPrior::new(0.0, 1.0),
            between_offdiag: GaussPrior::new(0.0, 0.5),
            sigma: GaussPrior::new(0.0, 1.0),
            thresholds: GaussPrior::new(0.0, 2.0),
        }
    }
}

/// Estimable DSEM: the primary model family covered by both samplers.
#[derive(Debug, Clone)]
pub struct FitModel {
    pub n_indicators: usize,
    pub n_latent: usize,
    pub lag: usize,
    pub n_between: usize,
    pub families: Vec<IndicatorFamily>,
    /// Within-level lag-0 loadings (rows: indicators, cols: latent factors).
    pub loadings: PatternMatrix,
    pub loadings_varying: bool,
    /// Latent autoregression patterns for lags 1..=lag.
    pub dynamics: Vec<PatternMatrix>,
    pub dynamics_varying: bool,
    pub process_noise: CovarianceForm,
    pub process_noise_varying: bool,
    /// Between-level loadings (rows: indicators, cols: between factors).
    pub between_loadings: PatternMatrix,
    pub between_cov: CovarianceForm,
    /// Threshold treatment per indicator (must be set for ordinal families).
    pub thresholds: Vec<Option<ThresholdMode>>,
    pub priors: Priors,
}

impl FitModel {
    /// Whether the scalar AR coefficient uses the stationarity-enforcing
    /// inverse-tanh scale. Matrix dynamics use plain coefficients with the
    /// diffuse filter initialization covering non-stationary draws.
    pub fn scalar_tanh_dynamics(&self) -> bool {
        self.n_latent == 1 && self.lag == 1
    }

    pub fn gaussian_indicators(&self) -> Vec<usize> {
        (0..self.n_indicators).filter(|&j| self.families[j].is_gaussian()).collect()
    }

    pub fn has_free_thresholds(&self) -> bool {
        self.thresholds
            .iter()
            .any(|t| matches!(t, Some(ThresholdMode::Free { .. })))
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.n_indicators;
        let v1 = self.n_latent;
        let v2 = self.n_between;
        if u == 0 || v1 == 0 || v2 == 0 || self.lag == 0 {
            return Err(DsemError::spec("model dimensions must be positive"));
        }
        if self.families.len() != u {
            return Err(DsemError::spec("one measurement family per indicator is required"));
        }
        for f in &self.families {
            f.validate()?;
        }
        if self.loadings.nrows != u || self.loadings.ncols != v1 {
            return Err(DsemError::spec("within-level loading pattern has wrong shape"));
        }
        if self.between_loadings.nrows != u || self.between_loadings.ncols != v2 {
            return Err(DsemError::spec("between-level loading pattern has wrong shape"));
        }
        // Identification: each factor needs a fixed unit anchor.
        for (pattern, what) in
            [(&self.loadings, "within-level"), (&self.between_loadings, "between-level")]
        {
            for c in 0..pattern.ncols {
                let anchored = (0..pattern.nrows)
                    .any(|r| matches!(pattern.get(r, c), PatternEntry::Fixed(x) if x == 1.0));
                if !anchored {
                    return Err(DsemError::spec(format!(
                        "{what} factor {} has no loading fixed to one for identification",
                        c + 1
                    )));
                }
            }
        }
        if self.dynamics.len() != self.lag {
            return Err(DsemError::spec("one dynamics pattern per lag 1..=lag is required"));
        }
        for (l, d) in self.dynamics.iter().enumerate() {
            if d.nrows != v1 || d.ncols != v1 {
                return Err(DsemError::spec(format!(
                    "dynamics pattern at lag {} has wrong shape",
                    l + 1
                )));
            }
        }
        if self.process_noise == CovarianceForm::ScalarVariance && v1 != 1 {
            return Err(DsemError::spec("scalar process noise requires one latent variable"));
        }
        if self.between_cov == CovarianceForm::ScalarVariance && v2 != 1 {
            return Err(DsemError::spec("scalar between covariance requires one between factor"));
        }
        if self.thresholds.len() != u {
            return Err(DsemError::spec("threshold settings must cover every indicator"));
        }
        for (j, (fam, thr)) in self.families.iter().zip(&self.thresholds).enumerate() {
            match (fam, thr) {
                (IndicatorFamily::OrdinalProbit { categories }, Some(mode)) => match mode {
                    ThresholdMode::Fixed(set) => {
                        if set.categories() != *categories {
                            return Err(DsemError::spec(format!(
                                "indicator {} has {} categories but {} thresholds",
                                j + 1,
                                categories,
                                set.interior().len()
                            )));
                        }
                    }
                    ThresholdMode::Free { categories: c } => {
                        if c != categories {
                            return Err(DsemError::spec(format!(
                                "indicator {} threshold mode disagrees on the category count",
                                j + 1
                            )));
                        }
                    }
                },
                (IndicatorFamily::OrdinalProbit { .. }, None) => {
                    return Err(DsemError::spec(format!(
                        "ordinal indicator {} needs a threshold setting",
                        j + 1
                    )));
                }
                (_, Some(_)) => {
                    return Err(DsemError::spec(format!(
                        "indicator {} is not ordinal but has thresholds",
                        j + 1
                    )));
                }
                (_, None) => {}
            }
        }
        Ok(())
    }

    /// Within-level spec template with participant values plugged in.
    pub fn within_spec(&self, p: &ParticipantParams) -> WithinModelSpec {
        let mut spec = WithinModelSpec::zeroed(self.n_indicators, self.n_latent, self.lag);
        spec.lambda[0] = p.lambda.clone();
        for l in 1..=self.lag {
            spec.b[l] = p.dynamics[l - 1].clone();
        }
        spec.psi = p.psi.clone();
        spec
    }
}

/// Long-format panel observations, one participant per entry.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub n_participants: usize,
    pub horizon: usize,
    pub n_indicators: usize,
    /// `values[i][t][j]`; content at unobserved sites is ignored.
    pub values: Vec<Vec<DVector<f64>>>,
    /// `observed[i][t][j]`.
    pub observed: Vec<Vec<Vec<bool>>>,
    /// Binomial trial counts; 1 everywhere unless supplied.
    pub trials: Vec<Vec<Vec<u32>>>,
}

impl PanelData {
    pub fn complete(values: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(DsemError::data("panel has no participants"));
        }
        let horizon = values[0].len();
        if horizon == 0 {
            return Err(DsemError::data("panel has no timepoints"));
        }
        let u = values[0][0].len();
        let observed = vec![vec![vec![true; u]; horizon]; n];
        let trials = vec![vec![vec![1; u]; horizon]; n];
        let data = PanelData { n_participants: n, horizon, n_indicators: u, values, observed, trials };
        data.check_shapes()?;
        Ok(data)
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.values.len() != self.n_participants
            || self.observed.len() != self.n_participants
            || self.trials.len() != self.n_participants
        {
            return Err(DsemError::data("panel arrays disagree on the participant count"));
        }
        for i in 0..self.n_participants {
            if self.values[i].len() != self.horizon
                || self.observed[i].len() != self.horizon
                || self.trials[i].len() != self.horizon
            {
                return Err(DsemError::data(format!(
                    "participant {} does not cover the common horizon",
                    i + 1
                )));
            }
            for t in 0..self.horizon {
                if self.values[i][t].len() != self.n_indicators
                    || self.observed[i][t].len() != self.n_indicators
                    || self.trials[i][t].len() != self.n_indicators
                {
                    return Err(DsemError::data(format!(
                        "participant {} timepoint {} has the wrong indicator count",
                        i + 1,
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Validate every observed value against its indicator family.
    pub fn validate_against(&self, model: &FitModel) -> Result<()> {
        self.check_shapes()?;
        if self.n_indicators != model.n_indicators {
            return Err(DsemError::data(format!(
                "data have {} indicators, model expects {}",
                self.n_indicators, model.n_indicators
            )));
        }
        for i in 0..self.n_participants {
            for t in 0..self.horizon {
                for j in 0..self.n_indicators {
                    if !self.observed[i][t][j] {
                        continue;
                    }
                    let y = self.values[i][t][j];
                    if !y.is_finite() {
                        return Err(DsemError::data(format!(
                            "non-finite value at participant {}, timepoint {}, indicator {}",
                            i + 1,
                            t + 1,
                            j + 1
                        )));
                    }
                    let site = || format!("(participant {}, timepoint {}, indicator {})", i + 1, t + 1, j + 1);
                    match &model.families[j] {
                        IndicatorFamily::Gaussian => {}
                        IndicatorFamily::BernoulliProbit => {
                            if y != 0.0 && y != 1.0 {
                                return Err(DsemError::data(format!(
                                    "Bernoulli value {y} outside {{0,1}} at {}",
                                    site()
                                )));
                            }
                        }
                        IndicatorFamily::BinomialLogit => {
                            let n = self.trials[i][t][j];
                            if n == 0 {
                                return Err(DsemError::data(format!(
                                    "binomial trial count must be positive at {}",
                                    site()
                                )));
                            }
                            if y < 0.0 || y.fract() != 0.0 || y > n as f64 {
                                return Err(DsemError::data(format!(
                                    "binomial value {y} outside 0..={n} at {}",
                                    site()
                                )));
                            }
                        }
                        IndicatorFamily::OrdinalProbit { categories } => {
                            if y < 1.0 || y.fract() != 0.0 || y > *categories as f64 {
                                return Err(DsemError::data(format!(
                                    "ordinal value {y} outside 1..={categories} at {}",
                                    site()
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Kind of a population block, fixing its reporting transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Raw,
    Tanh,
    /// Stored as exp(raw) (scales, Cholesky diagonals).
    Exp,
    /// Stored as exp(raw) (variances).
    ExpVariance,
    /// Stored as exp(raw / 2): standard deviation of a log-variance block.
    ExpHalf,
}

/// One scalar population parameter.
#[derive(Debug, Clone)]
pub struct ParamDef {
    pub name: String,
    kind: BlockKind,
    pub prior_mean: f64,
    pub prior_sd: f64,
    scale_prior: Option<ScalePrior>,
}

/// Flat unconstrained parameterization: population blocks followed by one
/// standardized-effect block per participant.
#[derive(Debug, Clone)]
pub struct Layout {
    pub defs: Vec<ParamDef>,
    pub n_pop: usize,
    pub n_participants: usize,
    pub z_per_participant: usize,

    // Population block offsets (ranges into the unconstrained vector).
    pub nu: std::ops::Range<usize>,
    pub lambda2: std::ops::Range<usize>,
    pub dynamics: std::ops::Range<usize>,
    pub dynamics_scale: std::ops::Range<usize>,
    pub noise: std::ops::Range<usize>,
    pub noise_scale: std::ops::Range<usize>,
    pub loadings: std::ops::Range<usize>,
    pub loading_scale: std::ops::Range<usize>,
    pub between_cov: std::ops::Range<usize>,
    pub sigma: std::ops::Range<usize>,
    /// Per indicator: threshold parameter range (empty when fixed).
    pub thresholds: Vec<std::ops::Range<usize>>,

    // Offsets inside one participant block.
    pub z_dynamics: std::ops::Range<usize>,
    pub z_noise: std::ops::Range<usize>,
    pub z_loadings: std::ops::Range<usize>,
    pub z_between: std::ops::Range<usize>,

    // Cached structure.
    pub dyn_free: Vec<(usize, usize, usize)>, // (lag index, row, col)
    pub load_free: Vec<(usize, usize)>,
    pub lambda2_free: Vec<(usize, usize)>,
    pub gaussian_indicators: Vec<usize>,
}

/// Materialized parameters of one participant.
#[derive(Debug, Clone)]
pub struct ParticipantParams {
    /// Autoregression matrices for lags 1..=lag.
    pub dynamics: Vec<DMatrix<f64>>,
    /// Lower Cholesky factor of the process noise.
    pub psi_chol: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    /// Lag-0 loadings.
    pub lambda: DMatrix<f64>,
    /// Between-level effects (already scaled by the between covariance
    /// factor).
    pub eta2: DVector<f64>,
}

/// Parameters shared across participants.
#[derive(Debug, Clone)]
pub struct SharedParams {
    pub nu: DVector<f64>,
    pub lambda2: DMatrix<f64>,
    /// Lower Cholesky factor of the between covariance.
    pub between_chol: DMatrix<f64>,
    /// Residual variances per Gaussian indicator (indexed by indicator).
    pub sigma_sq: Vec<f64>,
    /// Materialized thresholds per ordinal indicator.
    pub thresholds: Vec<Option<ThresholdSet>>,
}

impl Layout {
    pub fn new(model: &FitModel, n_participants: usize) -> Result<Layout> {
        model.validate()?;
        if n_participants == 0 {
            return Err(DsemError::data("at least one participant is required"));
        }
        let u = model.n_indicators;
        let v1 = model.n_latent;
        let v2 = model.n_between;
        let pr = &model.priors;
        let mut defs: Vec<ParamDef> = Vec::new();

        let push = |defs: &mut Vec<ParamDef>,
                        name: String,
                        kind: BlockKind,
                        prior: GaussPrior,
                        scale_prior: Option<ScalePrior>| {
            defs.push(ParamDef {
                name,
                kind,
                prior_mean: prior.mean,
                prior_sd: prior.sd,
                scale_prior,
            });
        };

        // Intercepts.
        let nu_start = defs.len();
        for j in 0..u {
            push(&mut defs, format!("nu[{}]", j + 1), BlockKind::Raw, pr.nu, None);
        }
        let nu = nu_start..defs.len();

        // Between-level loadings.
        let lambda2_free = model.between_loadings.free_positions();
        let l2_start = defs.len();
        for &(r, c) in &lambda2_free {
            let name = if v2 == 1 {
                format!("lambda2[{}]", r + 1)
            } else {
                format!("lambda2[{},{}]", r + 1, c + 1)
            };
            push(&mut defs, name, BlockKind::Raw, pr.lambda2, None);
        }
        let lambda2 = l2_start..defs.len();

        // Dynamics.
        let mut dyn_free = Vec::new();
        for (l, d) in model.dynamics.iter().enumerate() {
            for (r, c) in d.free_positions() {
                dyn_free.push((l, r, c));
            }
        }
        let scalar_tanh = model.scalar_tanh_dynamics();
        let dyn_start = defs.len();
        for &(l, r, c) in &dyn_free {
            let name = if v1 == 1 && model.lag == 1 {
                if model.dynamics_varying { "mu_phi".to_string() } else { "phi".to_string() }
            } else {
                let base = if model.dynamics_varying { "mu_phi" } else { "phi" };
                if model.lag == 1 {
                    format!("{base}[{},{}]", r + 1, c + 1)
                } else {
                    format!("{base}{}[{},{}]", l + 1, r + 1, c + 1)
                }
            };
            let kind = if scalar_tanh && !model.dynamics_varying {
                BlockKind::Tanh
            } else {
                BlockKind::Raw
            };
            push(&mut defs, name, kind, pr.dynamics, None);
        }
        let dynamics = dyn_start..defs.len();

        let ds_start = defs.len();
        if model.dynamics_varying {
            for &(l, r, c) in &dyn_free {
                let name = if v1 == 1 && model.lag == 1 {
                    "omega_phi".to_string()
                } else if model.lag == 1 {
                    format!("omega_phi[{},{}]", r + 1, c + 1)
                } else {
                    format!("omega_phi{}[{},{}]", l + 1, r + 1, c + 1)
                };
                push(
                    &mut defs,
                    name,
                    BlockKind::Exp,
                    GaussPrior::new(0.0, 1.0),
                    Some(pr.dynamics_scale),
                );
            }
        }
        let dynamics_scale = ds_start..defs.len();

        // Process noise.
        let n_noise = model.process_noise.n_params(v1);
        let noise_start = defs.len();
        match model.process_noise {
            CovarianceForm::ScalarVariance => {
                let (name, kind) = if model.process_noise_varying {
                    ("mu_psi".to_string(), BlockKind::Raw)
                } else {
                    ("psi1_sq".to_string(), BlockKind::ExpVariance)
                };
                push(&mut defs, name, kind, pr.noise_diag, None);
            }
            CovarianceForm::Diagonal => {
                for v in 0..v1 {
                    let (name, kind) = if model.process_noise_varying {
                        (format!("mu_log_psi1[{}]", v + 1), BlockKind::Raw)
                    } else {
                        (format!("psi1_sq[{}]", v + 1), BlockKind::ExpVariance)
                    };
                    push(&mut defs, name, kind, pr.noise_diag, None);
                }
            }
            CovarianceForm::Cholesky => {
                for r in 0..v1 {
                    for c in 0..=r {
                        let (name, kind, prior) = if r == c {
                            let n = if model.process_noise_varying {
                                format!("mu_log_l1[{}]", r + 1)
                            } else {
                                format!("l1[{},{}]", r + 1, c + 1)
                            };
                            let k = if model.process_noise_varying {
                                BlockKind::Raw
                            } else {
                                BlockKind::Exp
                            };
                            (n, k, pr.noise_diag)
                        } else {
                            let n = if model.process_noise_varying {
                                format!("mu_l1[{},{}]", r + 1, c + 1)
                            } else {
                                format!("l1[{},{}]", r + 1, c + 1)
                            };
                            (n, BlockKind::Raw, pr.noise_offdiag)
                        };
                        push(&mut defs, name, kind, prior, None);
                    }
                }
            }
        }
        let noise = noise_start..defs.len();

        let ns_start = defs.len();
        if model.process_noise_varying {
            for k in 0..n_noise {
                let name = match model.process_noise {
                    CovarianceForm::ScalarVariance => "omega_psi".to_string(),
                    CovarianceForm::Diagonal => format!("omega_psi[{}]", k + 1),
                    CovarianceForm::Cholesky => format!("omega_l1[{}]", k + 1),
                };
                push(
                    &mut defs,
                    name,
                    BlockKind::Exp,
                    GaussPrior::new(0.0, 1.0),
                    Some(pr.noise_scale),
                );
            }
        }
        let noise_scale = ns_start..defs.len();

        // Within-level loadings.
        let load_free = model.loadings.free_positions();
        let load_start = defs.len();
        for &(r, c) in &load_free {
            let base = if model.loadings_varying { "mu_lambda1" } else { "lambda1" };
            let name = if v1 == 1 {
                format!("{base}[{}]", r + 1)
            } else {
                format!("{base}[{},{}]", r + 1, c + 1)
            };
            push(&mut defs, name, BlockKind::Raw, pr.loadings, None);
        }
        let loadings = load_start..defs.len();

        let ls_start = defs.len();
        if model.loadings_varying && !load_free.is_empty() {
            push(
                &mut defs,
                "omega_lambda".to_string(),
                BlockKind::Exp,
                GaussPrior::new(0.0, 1.0),
                Some(pr.loading_scale),
            );
        }
        let loading_scale = ls_start..defs.len();

        // Between covariance.
        let bc_start = defs.len();
        match model.between_cov {
            CovarianceForm::ScalarVariance => {
                push(&mut defs, "psi2_sq".to_string(), BlockKind::ExpVariance, pr.between_diag, None);
            }
            CovarianceForm::Diagonal => {
                for v in 0..v2 {
                    push(
                        &mut defs,
                        format!("psi2_sq[{}]", v + 1),
                        BlockKind::ExpVariance,
                        pr.between_diag,
                        None,
                    );
                }
            }
            CovarianceForm::Cholesky => {
                for r in 0..v2 {
                    for c in 0..=r {
                        let (kind, prior) = if r == c {
                            (BlockKind::Exp, pr.between_diag)
                        } else {
                            (BlockKind::Raw, pr.between_offdiag)
                        };
                        push(&mut defs, format!("l2[{},{}]", r + 1, c + 1), kind, prior, None);
                    }
                }
            }
        }
        let between_cov = bc_start..defs.len();

        // Gaussian residual variances.
        let gaussian_indicators = model.gaussian_indicators();
        let sig_start = defs.len();
        for &j in &gaussian_indicators {
            push(&mut defs, format!("sigma[{}]", j + 1), BlockKind::ExpHalf, pr.sigma, None);
        }
        let sigma = sig_start..defs.len();

        // Free thresholds (ordered transform: tau_1 raw, then log-gaps).
        let mut thresholds = Vec::with_capacity(u);
        for j in 0..u {
            match &model.thresholds[j] {
                Some(ThresholdMode::Free { categories }) => {
                    let start = defs.len();
                    for c in 1..*categories {
                        push(
                            &mut defs,
                            format!("tau[{},{}]", j + 1, c),
                            BlockKind::Raw,
                            pr.thresholds,
                            None,
                        );
                    }
                    thresholds.push(start..defs.len());
                }
                _ => thresholds.push(0..0),
            }
        }

        let n_pop = defs.len();
        let n_dyn_z = if model.dynamics_varying { dyn_free.len() } else { 0 };
        let n_noise_z = if model.process_noise_varying { n_noise } else { 0 };
        let n_load_z = if model.loadings_varying { load_free.len() } else { 0 };
        let z_dynamics = 0..n_dyn_z;
        let z_noise = n_dyn_z..n_dyn_z + n_noise_z;
        let z_loadings = z_noise.end..z_noise.end + n_load_z;
        let z_between = z_loadings.end..z_loadings.end + v2;
        let z_per_participant = z_between.end;

        Ok(Layout {
            defs,
            n_pop,
            n_participants,
            z_per_participant,
            nu,
            lambda2,
            dynamics,
            dynamics_scale,
            noise,
            noise_scale,
            loadings,
            loading_scale,
            between_cov,
            sigma,
            thresholds,
            z_dynamics,
            z_noise,
            z_loadings,
            z_between,
            dyn_free,
            load_free,
            lambda2_free,
            gaussian_indicators,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_pop + self.n_participants * self.z_per_participant
    }

    pub fn participant_block(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.n_pop + i * self.z_per_participant;
        start..start + self.z_per_participant
    }

    /// Names of the population parameters (reporting order).
    pub fn population_names(&self) -> Vec<String> {
        self.defs.iter().map(|d| d.name.clone()).collect()
    }

    /// Constrained (reporting-scale) values of the population block. Free
    /// thresholds are mapped through the ordered transform.
    pub fn population_constrained(&self, theta: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.defs[..self.n_pop]
            .iter()
            .zip(&theta[..self.n_pop])
            .map(|(def, &x)| match def.kind {
                BlockKind::Raw => x,
                BlockKind::Tanh => x.tanh(),
                BlockKind::Exp => x.exp(),
                BlockKind::ExpVariance => x.exp(),
                BlockKind::ExpHalf => (0.5 * x).exp(),
            })
            .collect();
        for range in &self.thresholds {
            if range.is_empty() {
                continue;
            }
            let mut tau = theta[range.start];
            out[range.start] = tau;
            for k in range.start + 1..range.end {
                tau += theta[k].exp();
                out[k] = tau;
            }
        }
        out
    }

    /// Materialize thresholds for an indicator from the unconstrained vector.
    pub fn free_thresholds(&self, theta: &[f64], j: usize) -> Result<ThresholdSet> {
        let range = self.thresholds[j].clone();
        if range.is_empty() {
            return Err(DsemError::config(format!(
                "indicator {} has no free threshold block",
                j + 1
            )));
        }
        let mut interior = Vec::with_capacity(range.len());
        let mut tau = theta[range.start];
        interior.push(tau);
        for k in range.start + 1..range.end {
            tau += theta[k].exp();
            interior.push(tau);
        }
        ThresholdSet::new(interior)
    }

    /// Log prior over the full unconstrained vector (population blocks with
    /// their transforms and Jacobians, standard normal on every participant
    /// effect), plus its gradient added into `grad`.
    pub fn log_prior_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (k, def) in self.defs.iter().enumerate().take(self.n_pop) {
            // Threshold blocks are handled jointly below.
            if self.thresholds.iter().any(|r| r.contains(&k)) {
                continue;
            }
            let x = theta[k];
            if let Some(scale_prior) = def.scale_prior {
                // Half-normal prior on the constrained scale exp(x) with the
                // log Jacobian of the transform.
                match scale_prior {
                    ScalePrior::HalfNormalOnSd { scale } => {
                        let w = x.exp();
                        lp += half_normal_log_density(w, scale) + x;
                        grad[k] += 1.0 - w * w / (scale * scale);
                    }
                    ScalePrior::HalfNormalOnVariance { scale } => {
                        let v = (2.0 * x).exp();
                        lp += half_normal_log_density(v, scale) + std::f64::consts::LN_2 + 2.0 * x;
                        grad[k] += 2.0 - 2.0 * v * v / (scale * scale);
                    }
                }
            } else {
                let d = (x - def.prior_mean) / def.prior_sd;
                lp += -0.5 * d * d - def.prior_sd.ln() - 0.5 * crate::linalg::LN_2PI;
                grad[k] += -d / def.prior_sd;
            }
        }
        // Free thresholds: normal priors on the constrained values plus the
        // ordered-transform Jacobian.
        for range in &self.thresholds {
            if range.is_empty() {
                continue;
            }
            let def = &self.defs[range.start];
            let (mean, sd) = (def.prior_mean, def.prior_sd);
            let mut tau = theta[range.start];
            let mut dl_dtau = Vec::with_capacity(range.len());
            let d = (tau - mean) / sd;
            lp += -0.5 * d * d - sd.ln() - 0.5 * crate::linalg::LN_2PI;
            dl_dtau.push(-d / sd);
            for k in range.start + 1..range.end {
                tau += theta[k].exp();
                let d = (tau - mean) / sd;
                lp += -0.5 * d * d - sd.ln() - 0.5 * crate::linalg::LN_2PI;
                dl_dtau.push(-d / sd);
                // Jacobian of the log-gap transform.
                lp += theta[k];
                grad[k] += 1.0;
            }
            // tau_c depends on theta_start and on each gap up to c.
            for (c, &g) in dl_dtau.iter().enumerate() {
                grad[range.start] += g;
                for k in 1..=c {
                    grad[range.start + k] += g * theta[range.start + k].exp();
                }
            }
        }
        // Participant effects are standard normal by the non-centered form.
        for k in self.n_pop..theta.len() {
            let x = theta[k];
            lp += -0.5 * x * x - 0.5 * crate::linalg::LN_2PI;
            grad[k] += -x;
        }
        lp
    }

    /// Shared (participant-invariant) constrained parameters.
    pub fn expand_shared(&self, model: &FitModel, theta: &[f64]) -> Result<SharedParams> {
        let u = model.n_indicators;
        let v2 = model.n_between;
        let nu = DVector::from_fn(u, |j, _| theta[self.nu.start + j]);
        let l2_vals: Vec<f64> = theta[self.lambda2.clone()].to_vec();
        let lambda2 = model.between_loadings.materialize(&l2_vals);
        let between_chol = self.between_chol(model, theta);
        let mut sigma_sq = vec![f64::NAN; u];
        for (k, &j) in self.gaussian_indicators.iter().enumerate() {
            sigma_sq[j] = theta[self.sigma.start + k].exp();
        }
        let mut thresholds = vec![None; u];
        for j in 0..u {
            match &model.thresholds[j] {
                Some(ThresholdMode::Fixed(set)) => thresholds[j] = Some(set.clone()),
                Some(ThresholdMode::Free { .. }) => {
                    thresholds[j] = Some(self.free_thresholds(theta, j)?);
                }
                None => {}
            }
        }
        let _ = v2;
        Ok(SharedParams { nu, lambda2, between_chol, sigma_sq, thresholds })
    }

    /// Lower Cholesky factor of the between covariance.
    pub fn between_chol(&self, model: &FitModel, theta: &[f64]) -> DMatrix<f64> {
        let v2 = model.n_between;
        let vals = &theta[self.between_cov.clone()];
        let mut c = DMatrix::zeros(v2, v2);
        match model.between_cov {
            CovarianceForm::ScalarVariance => {
                c[(0, 0)] = (0.5 * vals[0]).exp();
            }
            CovarianceForm::Diagonal => {
                for v in 0..v2 {
                    c[(v, v)] = (0.5 * vals[v]).exp();
                }
            }
            CovarianceForm::Cholesky => {
                let mut k = 0;
                for r in 0..v2 {
                    for cc in 0..=r {
                        c[(r, cc)] = if r == cc { vals[k].exp() } else { vals[k] };
                        k += 1;
                    }
                }
            }
        }
        c
    }

    /// Materialize one participant's parameters from the population blocks
    /// and the participant's standardized effects.
    pub fn expand_participant(
        &self,
        model: &FitModel,
        theta: &[f64],
        shared: &SharedParams,
        i: usize,
    ) -> ParticipantParams {
        let v1 = model.n_latent;
        let z = &theta[self.participant_block(i)];
        let scalar_tanh = model.scalar_tanh_dynamics();

        // Dynamics.
        let mut dyn_vals = Vec::with_capacity(self.dyn_free.len());
        for (k, _) in self.dyn_free.iter().enumerate() {
            let raw = theta[self.dynamics.start + k];
            let val = if model.dynamics_varying {
                let omega = theta[self.dynamics_scale.start + k].exp();
                let x = raw + omega * z[self.z_dynamics.start + k];
                if scalar_tanh {
                    x.tanh()
                } else {
                    x
                }
            } else if scalar_tanh {
                raw.tanh()
            } else {
                raw
            };
            dyn_vals.push(val);
        }
        let mut dynamics = Vec::with_capacity(model.lag);
        {
            let mut offset = 0;
            for l in 0..model.lag {
                let n_l = model.dynamics[l].n_free();
                dynamics.push(model.dynamics[l].materialize(&dyn_vals[offset..offset + n_l]));
                offset += n_l;
            }
        }

        // Process noise Cholesky factor.
        let n_noise = model.process_noise.n_params(v1);
        let mut noise_raw = Vec::with_capacity(n_noise);
        for k in 0..n_noise {
            let mut x = theta[self.noise.start + k];
            if model.process_noise_varying {
                let omega = theta[self.noise_scale.start + k].exp();
                x += omega * z[self.z_noise.start + k];
            }
            noise_raw.push(x);
        }
        let psi_chol = noise_chol_from_raw(model.process_noise, v1, &noise_raw);
        let mut psi = &psi_chol * psi_chol.transpose();
        crate::linalg::symmetrize(&mut psi);

        // Loadings.
        let mut load_vals = Vec::with_capacity(self.load_free.len());
        for k in 0..self.load_free.len() {
            let mut x = theta[self.loadings.start + k];
            if model.loadings_varying {
                let omega = theta[self.loading_scale.start].exp();
                x += omega * z[self.z_loadings.start + k];
            }
            load_vals.push(x);
        }
        let lambda = model.loadings.materialize(&load_vals);

        // Between effects.
        let z_b = DVector::from_fn(model.n_between, |v, _| z[self.z_between.start + v]);
        let eta2 = &shared.between_chol * z_b;

        ParticipantParams { dynamics, psi_chol, psi, lambda, eta2 }
    }
}

/// Lower Cholesky factor from raw noise parameters.
fn noise_chol_from_raw(form: CovarianceForm, dim: usize, raw: &[f64]) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(dim, dim);
    match form {
        CovarianceForm::ScalarVariance => {
            c[(0, 0)] = (0.5 * raw[0]).exp();
        }
        CovarianceForm::Diagonal => {
            for v in 0..dim {
                c[(v, v)] = (0.5 * raw[v]).exp();
            }
        }
        CovarianceForm::Cholesky => {
            let mut k = 0;
            for r in 0..dim {
                for cc in 0..=r {
                    c[(r, cc)] = if r == cc { raw[k].exp() } else { raw[k] };
                    k += 1;
                }
            }
        }
    }
    c
}

fn half_normal_log_density(x: f64, scale: f64) -> f64 {
    // Density of |N(0, scale^2)| on x >= 0.
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - 0.5 * (x / scale) * (x / scale)
}

/// Cotangents of one participant's materialized parameters.
#[derive(Debug, Clone)]
pub struct ParticipantAdjoint {
    pub dynamics: Vec<DMatrix<f64>>,
    /// Symmetric cotangent of the process noise covariance.
    pub psi: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub eta2: DVector<f64>,
}

impl ParticipantAdjoint {
    pub fn zeros(model: &FitModel) -> Self {
        ParticipantAdjoint {
            dynamics: (0..model.lag)
                .map(|_| DMatrix::zeros(model.n_latent, model.n_latent))
                .collect(),
            psi: DMatrix::zeros(model.n_latent, model.n_latent),
            lambda: DMatrix::zeros(model.n_indicators, model.n_latent),
            eta2: DVector::zeros(model.n_between),
        }
    }
}

impl Layout {
    /// Push one participant's cotangents back onto the unconstrained vector.
    /// The between-effect chain through the shared covariance factor is
    /// accumulated into `between_chol_bar` and finalized once by
    /// [`Layout::finish_between_adjoint`].
    pub fn accumulate_participant_adjoint(
        &self,
        model: &FitModel,
        theta: &[f64],
        shared: &SharedParams,
        params: &ParticipantParams,
        adj: &ParticipantAdjoint,
        i: usize,
        grad: &mut [f64],
        between_chol_bar: &mut DMatrix<f64>,
    ) {
        let z_range = self.participant_block(i);
        let scalar_tanh = model.scalar_tanh_dynamics();

        // Dynamics entries.
        for (k, &(l, r, c)) in self.dyn_free.iter().enumerate() {
            let v_bar = adj.dynamics[l][(r, c)];
            if v_bar == 0.0 {
                continue;
            }
            let x_bar = if scalar_tanh {
                let phi = params.dynamics[l][(r, c)];
                v_bar * (1.0 - phi * phi)
            } else {
                v_bar
            };
            grad[self.dynamics.start + k] += x_bar;
            if model.dynamics_varying {
                let omega = theta[self.dynamics_scale.start + k].exp();
                let z = theta[z_range.start + self.z_dynamics.start + k];
                grad[self.dynamics_scale.start + k] += x_bar * z * omega;
                grad[z_range.start + self.z_dynamics.start + k] += x_bar * omega;
            }
        }

        // Process noise: psi_bar -> Cholesky factor -> raw parameters.
        let v1 = model.n_latent;
        let chol_bar = {
            // C_bar = (psi_bar + psi_bar') C, lower triangle.
            let mut cb = (&adj.psi + adj.psi.transpose()) * &params.psi_chol;
            for r in 0..v1 {
                for c in (r + 1)..v1 {
                    cb[(r, c)] = 0.0;
                }
            }
            cb
        };
        let n_noise = model.process_noise.n_params(v1);
        let mut raw_bar = vec![0.0; n_noise];
        match model.process_noise {
            CovarianceForm::ScalarVariance => {
                raw_bar[0] = 0.5 * chol_bar[(0, 0)] * params.psi_chol[(0, 0)];
            }
            CovarianceForm::Diagonal => {
                for v in 0..v1 {
                    raw_bar[v] = 0.5 * chol_bar[(v, v)] * params.psi_chol[(v, v)];
                }
            }
            CovarianceForm::Cholesky => {
                let mut k = 0;
                for r in 0..v1 {
                    for c in 0..=r {
                        raw_bar[k] = if r == c {
                            chol_bar[(r, c)] * params.psi_chol[(r, c)]
                        } else {
                            chol_bar[(r, c)]
                        };
                        k += 1;
                    }
                }
            }
        }
        for (k, &rb) in raw_bar.iter().enumerate() {
            grad[self.noise.start + k] += rb;
            if model.process_noise_varying {
                let omega = theta[self.noise_scale.start + k].exp();
                let z = theta[z_range.start + self.z_noise.start + k];
                grad[self.noise_scale.start + k] += rb * z * omega;
                grad[z_range.start + self.z_noise.start + k] += rb * omega;
            }
        }

        // Loadings.
        for (k, &(r, c)) in self.load_free.iter().enumerate() {
            let v_bar = adj.lambda[(r, c)];
            if v_bar == 0.0 {
                continue;
            }
            grad[self.loadings.start + k] += v_bar;
            if model.loadings_varying {
                let omega = theta[self.loading_scale.start].exp();
                let z = theta[z_range.start + self.z_loadings.start + k];
                grad[self.loading_scale.start] += v_bar * z * omega;
                grad[z_range.start + self.z_loadings.start + k] += v_bar * omega;
            }
        }

        // Between effects: eta2 = C2 z_b.
        let v2 = model.n_between;
        for r in 0..v2 {
            let e_bar = adj.eta2[r];
            if e_bar == 0.0 {
                continue;
            }
            for c in 0..=r {
                let z = theta[z_range.start + self.z_between.start + c];
                between_chol_bar[(r, c)] += e_bar * z;
                grad[z_range.start + self.z_between.start + c] +=
                    e_bar * shared.between_chol[(r, c)];
            }
        }
    }

    /// Convert the accumulated between-covariance factor cotangent into
    /// gradient entries of the raw between parameters.
    pub fn finish_between_adjoint(
        &self,
        model: &FitModel,
        theta: &[f64],
        between_chol_bar: &DMatrix<f64>,
        grad: &mut [f64],
    ) {
        let vals = &theta[self.between_cov.clone()];
        match model.between_cov {
            CovarianceForm::ScalarVariance => {
                let c = (0.5 * vals[0]).exp();
                grad[self.between_cov.start] += 0.5 * between_chol_bar[(0, 0)] * c;
            }
            CovarianceForm::Diagonal => {
                for v in 0..model.n_between {
                    let c = (0.5 * vals[v]).exp();
                    grad[self.between_cov.start + v] += 0.5 * between_chol_bar[(v, v)] * c;
                }
            }
            CovarianceForm::Cholesky => {
                let mut k = 0;
                for r in 0..model.n_between {
                    for c in 0..=r {
                        grad[self.between_cov.start + k] += if r == c {
                            between_chol_bar[(r, c)] * vals[k].exp()
                        } else {
                            between_chol_bar[(r, c)]
                        };
                        k += 1;
                    }
                }
            }
        }
    }

    /// Push cotangents of the materialized thresholds of indicator `j` back
    /// through the ordered transform.
    pub fn accumulate_threshold_adjoint(
        &self,
        theta: &[f64],
        j: usize,
        tau_bar: &[f64],
        grad: &mut [f64],
    ) {
        let range = self.thresholds[j].clone();
        if range.is_empty() {
            return;
        }
        debug_assert_eq!(tau_bar.len(), range.len());
        for (c, &tb) in tau_bar.iter().enumerate() {
            grad[range.start] += tb;
            for k in 1..=c {
                grad[range.start + k] += tb * theta[range.start + k].exp();
            }
        }
    }

    /// Invert the reporting transform: map constrained population values back
    /// to the unconstrained vector (participant effects pass through).
    pub fn unconstrain_population(&self, constrained: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.defs[..self.n_pop]
            .iter()
            .zip(constrained)
            .map(|(def, &v)| match def.kind {
                BlockKind::Raw => v,
                BlockKind::Tanh => v.atanh(),
                BlockKind::Exp => v.ln(),
                BlockKind::ExpVariance => v.ln(),
                BlockKind::ExpHalf => 2.0 * v.ln(),
            })
            .collect();
        for range in &self.thresholds {
            if range.is_empty() {
                continue;
            }
            out[range.start] = constrained[range.start];
            for k in range.start + 1..range.end {
                out[k] = (constrained[k] - constrained[k - 1]).ln();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_varying_model() -> FitModel {
        // One latent AR(1) factor, three indicators, everything varying.
        let mut loadings = PatternMatrix::free(3, 1);
        loadings.set(0, 0, PatternEntry::Fixed(1.0));
        let mut between_loadings = PatternMatrix::free(3, 1);
        between_loadings.set(0, 0, PatternEntry::Fixed(1.0));
        FitModel {
            n_indicators: 3,
            n_latent: 1,
            lag: 1,
            n_between: 1,
            families: vec![IndicatorFamily::BernoulliProbit; 3],
            loadings,
            loadings_varying: true,
            dynamics: vec![PatternMatrix::free(1, 1)],
            dynamics_varying: true,
            process_noise: CovarianceForm::ScalarVariance,
            process_noise_varying: true,
            between_loadings,
            between_cov: CovarianceForm::ScalarVariance,
            thresholds: vec![None; 3],
            priors: Priors::default(),
        }
    }

    #[test]
    fn layout_dimensions_for_varying_model() {
        let model = small_varying_model();
        let layout = Layout::new(&model, 4).unwrap();
        // nu(3) + lambda2(2) + mu_phi(1) + omega_phi(1) + mu_psi(1) +
        // omega_psi(1) + mu_lambda(2) + omega_lambda(1) + psi2_sq(1) = 13
        assert_eq!(layout.n_pop, 13);
        // z: dyn(1) + noise(1) + loadings(2) + between(1) = 5
        assert_eq!(layout.z_per_participant, 5);
        assert_eq!(layout.dim(), 13 + 4 * 5);
        let names = layout.population_names();
        assert!(names.contains(&"mu_phi".to_string()));
        assert!(names.contains(&"omega_lambda".to_string()));
        assert!(names.contains(&"psi2_sq".to_string()));
    }

    #[test]
    fn unconstrain_round_trips() {
        let model = small_varying_model();
        let layout = Layout::new(&model, 2).unwrap();
        let mut rng = crate::rng::substream(31, &[1]);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..layout.n_pop)
                .map(|_| rand::Rng::gen_range(&mut rng, -1.2..1.2))
                .collect();
            let constrained = layout.population_constrained(&theta);
            let back = layout.unconstrain_population(&constrained);
            for (a, b) in theta.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn ordered_thresholds_round_trip() {
        let mut model = small_varying_model();
        model.families[2] = IndicatorFamily::OrdinalProbit { categories: 4 };
        model.thresholds[2] = Some(ThresholdMode::Free { categories: 4 });
        let layout = Layout::new(&model, 2).unwrap();
        let mut theta = vec![0.0; layout.dim()];
        let r = layout.thresholds[2].clone();
        assert_eq!(r.len(), 3);
        theta[r.start] = -0.7;
        theta[r.start + 1] = 0.3; // gap e^{0.3}
        theta[r.start + 2] = -1.0;
        let set = layout.free_thresholds(&theta, 2).unwrap();
        let tau = set.interior();
        assert!((tau[0] + 0.7).abs() < 1e-14);
        assert!((tau[1] - (-0.7 + 0.3_f64.exp())).abs() < 1e-14);
        assert!(tau[2] > tau[1]);
        let constrained = layout.population_constrained(&theta);
        let back = layout.unconstrain_population(&constrained);
        for k in r {
            assert!((theta[k] - back[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let mut model = small_varying_model();
        model.families[2] = IndicatorFamily::OrdinalProbit { categories: 3 };
        model.thresholds[2] = Some(ThresholdMode::Free { categories: 3 });
        model.priors.dynamics_scale = ScalePrior::HalfNormalOnSd { scale: 0.5 };
        let layout = Layout::new(&model, 3).unwrap();
        let mut rng = crate::rng::substream(31, &[2]);
        let theta: Vec<f64> =
            (0..layout.dim()).map(|_| rand::Rng::gen_range(&mut rng, -0.8..0.8)).collect();
        let mut grad = vec![0.0; layout.dim()];
        let lp = layout.log_prior_and_grad(&theta, &mut grad);
        assert!(lp.is_finite());
        let h = 1e-6;
        for k in 0..layout.dim() {
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let mut dummy = vec![0.0; layout.dim()];
            let fp = layout.log_prior_and_grad(&tp, &mut dummy);
            let mut dummy = vec![0.0; layout.dim()];
            let fm = layout.log_prior_and_grad(&tm, &mut dummy);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()),
                "prior gradient mismatch at {k} ({}): fd={fd}, adj={}",
                if k < layout.n_pop { layout.defs[k].name.clone() } else { format!("z{k}") },
                grad[k]
            );
        }
    }

    #[test]
    fn expansion_applies_non_centered_structure() {
        let model = small_varying_model();
        let layout = Layout::new(&model, 2).unwrap();
        let mut theta = vec![0.0; layout.dim()];
        theta[layout.dynamics.start] = 0.3; // mu_phi
        theta[layout.dynamics_scale.start] = (0.5_f64).ln(); // omega_phi = 0.5
        let zb = layout.participant_block(1);
        theta[zb.start + layout.z_dynamics.start] = 2.0; // z
        let shared = layout.expand_shared(&model, &theta).unwrap();
        let p0 = layout.expand_participant(&model, &theta, &shared, 0);
        let p1 = layout.expand_participant(&model, &theta, &shared, 1);
        assert!((p0.dynamics[0][(0, 0)] - 0.3_f64.tanh()).abs() < 1e-14);
        assert!((p1.dynamics[0][(0, 0)] - (0.3 + 0.5 * 2.0_f64).tanh()).abs() < 1e-14);
        // psi: mu_psi = 0, omega_psi = 1, z = 0 -> psi^2 = 1.
        assert!((p0.psi[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn data_validation_catches_support_violations() {
        let model = small_varying_model();
        let mut values = vec![vec![DVector::from_element(3, 0.0); 4]; 2];
        values[1][2][1] = 2.0; // invalid Bernoulli value
        let data = PanelData::complete(values).unwrap();
        let err = data.validate_against(&model).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("participant 2"), "{msg}");
        assert!(msg.contains("timepoint 3"), "{msg}");
        assert!(msg.contains("indicator 2"), "{msg}");
    }

    #[test]
    fn identification_anchor_is_enforced() {
        let mut model = small_varying_model();
        model.loadings = PatternMatrix::free(3, 1);
        assert!(matches!(Layout::new(&model, 2).unwrap_err(), DsemError::Spec(_)));
    }
}
