//! Test statistics for the oracle suites: chi-square goodness of fit and a
//! one-sided paired location test.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Chi-square goodness-of-fit statistic and p-value for observed counts
/// against expected probabilities.
///
/// Bins with expected count below 10 are pooled into a single bin before
/// computing the statistic (Cochran's rule), which keeps the chi-square
/// approximation honest for skewed distributions. Returns `(stat, p)`;
/// degenerate inputs (fewer than two effective bins) report `p = 1`.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;

    let mut terms: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    for (&obs, &p) in observed.iter().zip(expected_probs) {
        let exp = nf * p;
        if exp < 10.0 {
            pooled_obs += obs as f64;
            pooled_exp += exp;
        } else {
            terms.push((obs as f64, exp));
        }
    }
    if pooled_exp > 0.0 {
        terms.push((pooled_obs, pooled_exp));
    }
    if terms.len() < 2 {
        return (0.0, 1.0);
    }

    let stat: f64 = terms
        .iter()
        .map(|&(obs, exp)| {
            let d = obs - exp;
            d * d / exp
        })
        .sum();
    let df = (terms.len() - 1) as f64;
    let dist = ChiSquared::new(df).expect("df >= 1");
    (stat, 1.0 - dist.cdf(stat))
}

/// One-sided paired t statistic for `mean(xs - ys) > 0`.
///
/// Returns `f64::INFINITY` when every difference is positive with zero
/// variance (a degenerate but decisive sample).
pub fn paired_t_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
    }
    mean / (var / n).sqrt()
}

/// Upper critical value of Student's t with `df` degrees of freedom at the
/// given one-sided confidence (e.g. 0.99).
pub fn t_critical(df: usize, confidence: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid df");
    dist.inverse_cdf(confidence)
}
