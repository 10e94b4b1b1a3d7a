//! Latent-response layer: Polya-Gamma sampling for logit links, truncated
//! normal sampling for probit and ordinal links, and the per-observation
//! Gibbs kernels that turn discrete responses into conditionally Gaussian
//! pseudo-observations.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{DsemError, Result};
use crate::linalg::{norm_cdf, norm_log_cdf, norm_quantile};

const PI: f64 = std::f64::consts::PI;
const PI_SQ: f64 = PI * PI;
/// Crossover point of the two series representations of the Jacobi density.
const TRUNC: f64 = 0.64;
/// Largest binomial trial count accepted by the exact summed sampler. All
/// experiment designs here use trial counts of at most nine.
pub const MAX_PG_SHAPE: u32 = 50;
/// Series evaluations per proposal are capped; the counter resets and the
/// proposal is redrawn when the cap is hit.
const SERIES_CAP: usize = 200;

/// One draw from PG(b, c) as the sum of `b` independent PG(1, c) draws, each
/// via the alternating-series rejection sampler.
pub fn sample_pg<R: Rng + ?Sized>(b: u32, c: f64, rng: &mut R) -> Result<f64> {
    Ok(sample_pg_counted(b, c, rng)?.0)
}

/// As [`sample_pg`], also reporting the number of proposals consumed
/// (used to verify the near-unity acceptance rate).
pub fn sample_pg_counted<R: Rng + ?Sized>(b: u32, c: f64, rng: &mut R) -> Result<(f64, u64)> {
    if b == 0 {
        return Err(DsemError::config("Polya-Gamma shape must be a positive integer"));
    }
    if b > MAX_PG_SHAPE {
        return Err(DsemError::unsupported(format!(
            "Polya-Gamma shape {b} exceeds the exact-sampler limit {MAX_PG_SHAPE}"
        )));
    }
    if !c.is_finite() {
        return Err(DsemError::numerical("Polya-Gamma tilt must be finite"));
    }
    let mut total = 0.0;
    let mut proposals = 0;
    for _ in 0..b {
        let (x, n) = sample_pg1(c, rng);
        total += x;
        proposals += n;
    }
    Ok((total, proposals))
}

/// Piecewise coefficients of the alternating series for the Jacobi density.
fn series_coef(n: usize, x: f64) -> f64 {
    let nh = n as f64 + 0.5;
    if x <= TRUNC {
        PI * nh * (2.0 / (PI * x)).powf(1.5) * (-2.0 * nh * nh / x).exp()
    } else {
        PI * nh * (-nh * nh * PI_SQ * x / 2.0).exp()
    }
}

/// CDF of the inverse Gaussian with mean `1/z` and shape one, evaluated at
/// `t`, written so that large `z` cannot overflow. At `z = 0` this is the
/// Levy limit.
fn inverse_gaussian_cdf(t: f64, z: f64) -> f64 {
    let rt = t.sqrt();
    let a = norm_cdf((t * z - 1.0) / rt);
    let b = (2.0 * z + norm_log_cdf(-(t * z + 1.0) / rt)).exp();
    a + b
}

/// One PG(1, c) draw together with the number of proposals consumed.
fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> (f64, u64) {
    let z = c.abs() / 2.0;
    let k = PI_SQ / 8.0 + z * z / 2.0;
    let p = (PI / (2.0 * k)) * (-k * TRUNC).exp();
    let q = (-z).exp() * 2.0 * inverse_gaussian_cdf(TRUNC, z);
    let tail_prob = p / (p + q);

    let mut proposals = 0_u64;
    loop {
        proposals += 1;
        let x = if rng.gen::<f64>() < tail_prob {
            // Exponential tail on (TRUNC, infinity) with rate k.
            TRUNC + rng.sample::<f64, _>(Exp1) / k
        } else {
            sample_truncated_inverse_gaussian(z, TRUNC, rng)
        };
        // Alternating-series squeeze (accept/reject without evaluating the
        // full density).
        let mut s = series_coef(0, x);
        let y = rng.gen::<f64>() * s;
        let mut n = 0usize;
        let accepted = loop {
            n += 1;
            if n > SERIES_CAP {
                // Numerically stuck partial sums: drop the proposal.
                log::warn!("Polya-Gamma series cap {SERIES_CAP} hit; redrawing proposal");
                break false;
            }
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    break true;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break false;
                }
            }
        };
        if accepted {
            return (x / 4.0, proposals);
        }
    }
}

/// Truncated inverse Gaussian with mean `1/z` and shape one on `(0, t]`.
fn sample_truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, t: f64, rng: &mut R) -> f64 {
    if z < 1.0 / t {
        // Mean beyond the truncation point: rejection from the Levy-type
        // proposal tilted by exp(-z^2 x / 2).
        loop {
            let (e1, e2) = loop {
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                if e1 * e1 <= 2.0 * e2 / t {
                    break (e1, e2);
                }
            };
            let _ = e2;
            let x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            if rng.gen::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        // Sample IG(1/z, 1) draws until one lands inside the interval.
        let mu = 1.0 / z;
        loop {
            let nu: f64 = rng.sample(StandardNormal);
            let y = nu * nu;
            let mut x = mu + 0.5 * mu * mu * y
                - 0.5 * mu * (4.0 * mu * y + (mu * y) * (mu * y)).sqrt();
            if rng.gen::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t && x > 0.0 {
                return x;
            }
        }
    }
}

/// Approximate Polya-Gamma draw from the truncated infinite-sum
/// representation with `terms` gamma summands. Bias is O(1/terms); the
/// sampler serves as an independent oracle for [`sample_pg`].
pub fn pg_oracle_truncated_sum<R: Rng + ?Sized>(
    b: u32,
    c: f64,
    terms: usize,
    rng: &mut R,
) -> Result<f64> {
    if terms == 0 {
        return Err(DsemError::config("the truncated-sum oracle needs at least one term"));
    }
    if b == 0 {
        return Err(DsemError::config("Polya-Gamma shape must be a positive integer"));
    }
    let gamma = Gamma::new(b as f64, 1.0)
        .map_err(|e| DsemError::config(format!("gamma parameters invalid: {e}")))?;
    let c_term = c * c / (4.0 * PI_SQ);
    let mut total = 0.0;
    for k in 1..=terms {
        let kh = k as f64 - 0.5;
        total += gamma.sample(rng) / (kh * kh + c_term);
    }
    Ok(total / (2.0 * PI_SQ))
}

/// Exact mean of the truncated-sum oracle (the gamma summands have mean `b`).
pub fn pg_truncated_sum_mean(b: u32, c: f64, terms: usize) -> f64 {
    let c_term = c * c / (4.0 * PI_SQ);
    let sum: f64 = (1..=terms)
        .map(|k| {
            let kh = k as f64 - 0.5;
            1.0 / (kh * kh + c_term)
        })
        .sum();
    b as f64 * sum / (2.0 * PI_SQ)
}

/// Analytic PG(b, c) mean, `b tanh(c/2) / (2c)` with the `c = 0` limit `b/4`.
pub fn pg_mean(b: u32, c: f64) -> f64 {
    if c.abs() < 1e-12 {
        b as f64 / 4.0
    } else {
        b as f64 * (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Exact draw from a normal truncated to `(lower, upper]`. Uses the inverse
/// CDF for moderate truncation and switches to tail-robust rejection
/// (exponential proposal) when the interval lies more than five standard
/// deviations into a tail.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lower < upper) {
        return Err(DsemError::config(format!(
            "truncation interval is empty: ({lower}, {upper}]"
        )));
    }
    if !(sd > 0.0) {
        return Err(DsemError::config("truncated normal needs a positive scale"));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;

    const TAIL: f64 = 5.0;
    let z = if a > TAIL {
        sample_std_tn_right_tail(a, b, rng)
    } else if b < -TAIL {
        -sample_std_tn_right_tail(-b, -a, rng)
    } else {
        sample_std_tn_inverse_cdf(a, b, rng)
    };
    let mut x = mean + sd * z;
    // The interval is open below and closed above; nudge roundoff landings
    // back inside.
    if x <= lower {
        x = next_up(lower);
    }
    if x > upper {
        x = upper;
    }
    Ok(x)
}

fn next_up(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::MIN;
    }
    let bits = x.to_bits();
    f64::from_bits(if x >= 0.0 { bits + 1 } else { bits - 1 })
}

fn sample_std_tn_inverse_cdf<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let pa = if a == f64::NEG_INFINITY { 0.0 } else { norm_cdf(a) };
    let pb = if b == f64::INFINITY { 1.0 } else { norm_cdf(b) };
    // U in [0, 1) maps to u in (pa, pb], matching the half-open interval.
    let u = pb - rng.gen::<f64>() * (pb - pa);
    norm_quantile(u).clamp(a, b)
}

/// Rejection sampler for the standard normal restricted to `(a, b]` with
/// `a > 0` deep in the right tail. Uses an exponential proposal, falling back
/// to uniform rejection when the interval is too narrow for the exponential
/// to land inside often.
fn sample_std_tn_right_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    if b.is_finite() && (b - a) * alpha < 0.5 {
        // Narrow interval: uniform proposal with exact density ratio.
        loop {
            let x = a + rng.gen::<f64>() * (b - a);
            if rng.gen::<f64>() <= (0.5 * (a * a - x * x)).exp() {
                return x;
            }
        }
    }
    loop {
        let x = a + rng.sample::<f64, _>(Exp1) / alpha;
        if x > b {
            continue;
        }
        let d = x - alpha;
        if rng.gen::<f64>() <= (-0.5 * d * d).exp() {
            return x;
        }
    }
}

/// Strictly increasing interior thresholds of an ordinal indicator; the outer
/// thresholds are implicitly minus and plus infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    interior: Vec<f64>,
}

impl ThresholdSet {
    pub fn new(interior: Vec<f64>) -> Result<Self> {
        if interior.is_empty() {
            return Err(DsemError::spec("an ordinal indicator needs at least one threshold"));
        }
        if interior.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DsemError::spec("ordinal thresholds must be strictly increasing"));
        }
        if interior.iter().any(|t| !t.is_finite()) {
            return Err(DsemError::spec("interior thresholds must be finite"));
        }
        Ok(ThresholdSet { interior })
    }

    pub fn categories(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// Lower threshold of category `c` (1-based); `-inf` for the first.
    pub fn lower(&self, c: usize) -> f64 {
        if c <= 1 {
            f64::NEG_INFINITY
        } else {
            self.interior[c - 2]
        }
    }

    /// Upper threshold of category `c` (1-based); `+inf` for the last.
    pub fn upper(&self, c: usize) -> f64 {
        if c > self.interior.len() {
            f64::INFINITY
        } else {
            self.interior[c - 1]
        }
    }
}

/// Probit Bernoulli update: a truncated-normal pseudo-observation on the
/// side of zero selected by the response. The induced measurement variance
/// is one.
pub fn gibbs_update_probit<R: Rng + ?Sized>(y: u32, ystar: f64, rng: &mut R) -> Result<f64> {
    match y {
        1 => sample_truncated_normal(ystar, 1.0, 0.0, f64::INFINITY, rng),
        0 => sample_truncated_normal(ystar, 1.0, f64::NEG_INFINITY, 0.0, rng),
        _ => Err(DsemError::data(format!("probit Bernoulli response must be 0 or 1, got {y}"))),
    }
}

/// Ordinal probit update: a truncated-normal pseudo-observation between the
/// thresholds adjacent to the observed category.
pub fn gibbs_update_ordinal<R: Rng + ?Sized>(
    y: usize,
    ystar: f64,
    thresholds: &ThresholdSet,
    rng: &mut R,
) -> Result<f64> {
    let c_max = thresholds.categories();
    if y < 1 || y > c_max {
        return Err(DsemError::data(format!(
            "ordinal response must lie in 1..={c_max}, got {y}"
        )));
    }
    sample_truncated_normal(ystar, 1.0, thresholds.lower(y), thresholds.upper(y), rng)
}

/// Logit binomial update: the auxiliary variable is PG(n, y*), the
/// pseudo-observation is the shifted response over the auxiliary variable,
/// and the induced measurement variance is its reciprocal.
pub fn gibbs_update_logit<R: Rng + ?Sized>(
    y: u32,
    trials: u32,
    ystar: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(DsemError::data("binomial trial count must be at least one"));
    }
    if y > trials {
        return Err(DsemError::data(format!(
            "binomial response {y} exceeds the trial count {trials}"
        )));
    }
    let omega = sample_pg(trials, ystar, rng)?;
    let kappa = y as f64 - trials as f64 / 2.0;
    Ok((omega, kappa / omega))
}

/// Augmentation variables for one participant: pseudo-observations, the
/// auxiliary Polya-Gamma variables (positive at logit sites, zero at probit
/// and Gaussian sites, which carry none), and the induced measurement
/// variances.
#[derive(Debug, Clone)]
pub struct LatentResponseState {
    pub ytilde: Vec<DVector<f64>>,
    pub omega: Vec<DVector<f64>>,
    pub variance: Vec<DVector<f64>>,
}

impl LatentResponseState {
    pub fn zeros(horizon: usize, n_indicators: usize) -> Self {
        LatentResponseState {
            ytilde: vec![DVector::zeros(n_indicators); horizon],
            omega: vec![DVector::zeros(n_indicators); horizon],
            variance: vec![DVector::from_element(n_indicators, 1.0); horizon],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::testutil::{ks_one_sample_pvalue, ks_two_sample_pvalue};

    #[test]
    fn pg_mean_at_zero_tilt() {
        let mut rng = substream(7, &[1]);
        let n = 100_000;
        let mean =
            (0..n).map(|_| sample_pg(1, 0.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn pg_mean_matches_tanh_formula() {
        let mut rng = substream(7, &[2]);
        let n = 100_000;
        let mean =
            (0..n).map(|_| sample_pg(1, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        let expected = 0.5_f64.tanh() / 2.0;
        assert!((mean - expected).abs() < 0.005, "mean {mean}, expected {expected}");
    }

    #[test]
    fn pg_additivity_in_shape() {
        let mut rng = substream(7, &[3]);
        let n = 20_000;
        let c = 1.3;
        let direct: Vec<f64> = (0..n).map(|_| sample_pg(2, c, &mut rng).unwrap()).collect();
        let summed: Vec<f64> = (0..n)
            .map(|_| {
                sample_pg(1, c, &mut rng).unwrap() + sample_pg(1, c, &mut rng).unwrap()
            })
            .collect();
        let p = ks_two_sample_pvalue(&direct, &summed);
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn pg_rejects_oversized_shape_and_zero_shape() {
        let mut rng = substream(7, &[4]);
        assert!(matches!(
            sample_pg(MAX_PG_SHAPE + 1, 0.0, &mut rng).unwrap_err(),
            DsemError::Unsupported(_)
        ));
        assert!(sample_pg(0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn oracle_single_term_value() {
        // One term, zero tilt, unit gamma draw: 1 / (2 pi^2 * 1/4).
        let expected = 2.0 / PI_SQ;
        assert!((pg_truncated_sum_mean(1, 0.0, 1) - expected).abs() < 1e-14);
    }

    #[test]
    fn oracle_mean_converges_to_quarter() {
        let mut rng = substream(7, &[5]);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| pg_oracle_truncated_sum(1, 0.0, 200, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 0.0025, "mean {mean}");
    }

    #[test]
    fn oracle_mean_b3_c2() {
        let mut rng = substream(7, &[6]);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| pg_oracle_truncated_sum(3, 2.0, 200, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected = 3.0 * 1.0_f64.tanh() / 4.0;
        assert!((mean - expected).abs() < 0.02 * expected, "mean {mean}, expected {expected}");
    }

    #[test]
    fn truncated_normal_half_normal_mean() {
        let mut rng = substream(8, &[1]);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected = (2.0 / PI).sqrt();
        assert!((mean - expected).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn truncated_normal_inactive_truncation_is_normal() {
        let mut rng = substream(8, &[2]);
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                sample_truncated_normal(-10.0, 1.0, f64::NEG_INFINITY, 0.0, &mut rng).unwrap()
            })
            .collect();
        let p = ks_one_sample_pvalue(&draws, |x| norm_cdf(x + 10.0));
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = substream(8, &[3]);
        for _ in 0..20_000 {
            let x = sample_truncated_normal(0.3, 2.0, -1.0, 1.5, &mut rng).unwrap();
            assert!(x > -1.0 && x <= 1.5);
        }
        // Far tail interval.
        for _ in 0..5_000 {
            let x = sample_truncated_normal(0.0, 1.0, 7.0, 7.5, &mut rng).unwrap();
            assert!(x > 7.0 && x <= 7.5);
        }
        for _ in 0..5_000 {
            let x = sample_truncated_normal(0.0, 1.0, 6.0, f64::INFINITY, &mut rng).unwrap();
            assert!(x > 6.0);
        }
    }

    #[test]
    fn truncated_normal_rejects_empty_interval() {
        let mut rng = substream(8, &[4]);
        assert!(sample_truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, 1.0, 2.0, -2.0, &mut rng).is_err());
    }

    #[test]
    fn probit_update_sides() {
        let mut rng = substream(9, &[1]);
        let n = 50_000;
        let mut mean1 = 0.0;
        for _ in 0..n {
            let d = gibbs_update_probit(1, 0.0, &mut rng).unwrap();
            assert!(d > 0.0);
            mean1 += d;
        }
        mean1 /= n as f64;
        assert!((mean1 - (2.0 / PI).sqrt()).abs() < 0.01);
        for _ in 0..10_000 {
            assert!(gibbs_update_probit(0, 0.0, &mut rng).unwrap() <= 0.0);
        }
        assert!(matches!(
            gibbs_update_probit(2, 0.0, &mut rng).unwrap_err(),
            DsemError::Data(_)
        ));
    }

    #[test]
    fn probit_update_mild_truncation_mean() {
        let mut rng = substream(9, &[2]);
        let n = 200_000;
        let mean = (0..n)
            .map(|_| gibbs_update_probit(1, 3.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        // TN mean formula mu + phi(-mu)/(1 - Phi(-mu)): truncation nearly inactive.
        let expected = 3.0 + crate::linalg::norm_pdf(3.0) / norm_cdf(3.0);
        assert!((mean - expected).abs() < 0.01, "mean {mean}, expected {expected}");
        assert!((expected - 3.00444).abs() < 1e-4);
    }

    #[test]
    fn ordinal_two_categories_match_probit_draw_for_draw() {
        let thresholds = ThresholdSet::new(vec![0.0]).unwrap();
        for trial in 0..200 {
            let ystar = (trial as f64 - 100.0) / 25.0;
            let mut rng_a = substream(10, &[trial]);
            let mut rng_b = substream(10, &[trial]);
            let a = gibbs_update_probit(1, ystar, &mut rng_a).unwrap();
            let b = gibbs_update_ordinal(2, ystar, &thresholds, &mut rng_b).unwrap();
            assert_eq!(a, b);
            let mut rng_a = substream(11, &[trial]);
            let mut rng_b = substream(11, &[trial]);
            let a = gibbs_update_probit(0, ystar, &mut rng_a).unwrap();
            let b = gibbs_update_ordinal(1, ystar, &thresholds, &mut rng_b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ordinal_middle_category_symmetric() {
        let thresholds = ThresholdSet::new(vec![-1.0, 1.0]).unwrap();
        let mut rng = substream(10, &[7]);
        let n = 100_000;
        let mut mean = 0.0;
        for _ in 0..n {
            let d = gibbs_update_ordinal(2, 0.0, &thresholds, &mut rng).unwrap();
            assert!(d > -1.0 && d <= 1.0);
            mean += d;
        }
        mean /= n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(matches!(
            gibbs_update_ordinal(4, 0.0, &thresholds, &mut rng).unwrap_err(),
            DsemError::Data(_)
        ));
    }

    #[test]
    fn logit_update_signs_and_errors() {
        let mut rng = substream(12, &[1]);
        for _ in 0..2_000 {
            let (omega, ytilde) = gibbs_update_logit(3, 3, 0.5, &mut rng).unwrap();
            assert!(omega > 0.0 && omega.is_finite());
            assert!(ytilde > 0.0); // kappa = 1.5
        }
        // kappa = 0 when y = n/2.
        let (_, ytilde) = gibbs_update_logit(2, 4, -0.7, &mut rng).unwrap();
        assert_eq!(ytilde, 0.0);
        assert!(matches!(
            gibbs_update_logit(4, 3, 0.0, &mut rng).unwrap_err(),
            DsemError::Data(_)
        ));
    }

    #[test]
    fn kernels_are_reproducible_under_shared_streams() {
        let mut a = substream(13, &[1, 2]);
        let mut b = substream(13, &[1, 2]);
        let (oa, ya) = gibbs_update_logit(2, 5, 0.3, &mut a).unwrap();
        let (ob, yb) = gibbs_update_logit(2, 5, 0.3, &mut b).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(ya, yb);
    }

    #[test]
    fn thresholds_must_increase() {
        assert!(ThresholdSet::new(vec![0.0, 0.0]).is_err());
        assert!(ThresholdSet::new(vec![1.0, -1.0]).is_err());
        let t = ThresholdSet::new(vec![-1.0, 1.0]).unwrap();
        assert_eq!(t.categories(), 3);
        assert_eq!(t.lower(1), f64::NEG_INFINITY);
        assert_eq!(t.upper(3), f64::INFINITY);
        assert_eq!(t.lower(2), -1.0);
        assert_eq!(t.upper(2), 1.0);
    }
}
