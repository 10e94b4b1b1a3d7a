//! Statistical helpers for tests: Kolmogorov-Smirnov p-values and moment
//! summaries. Exposed (hidden) so integration tests can share them.

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        total += sign * term;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// One-sample KS test p-value against a reference CDF.
pub fn ks_one_sample_pvalue<F: Fn(f64) -> f64>(draws: &[f64], cdf: F) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i + 1) as f64 / n).abs());
    }
    let rn = n.sqrt();
    kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)
}

/// Two-sample KS test p-value.
pub fn ks_two_sample_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xb.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xa.len(), xb.len());
    let mut d = 0.0_f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < na && j < nb {
        if xa[i] <= xb[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na as f64 + nb as f64);
    let rn = ne.sqrt();
    kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
