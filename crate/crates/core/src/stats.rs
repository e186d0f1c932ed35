//! Goodness-of-fit and distance statistics used by diagnostics and tests.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::invalid("KS test needs at least one sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("KS test sample contains NaN"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sqrt_n = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d),
    })
}

/// KS test against the unit-rate exponential distribution.
pub fn ks_test_exp1(samples: &[f64]) -> Result<KsResult> {
    ks_test(samples, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` with unbiased within-sample
/// means. Zero in expectation iff the two distributions agree.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::invalid("energy distance needs two points per sample"));
    }
    let cross: f64 = xs.iter().flat_map(|x| ys.iter().map(move |y| dist(x, y))).sum::<f64>()
        / (xs.len() * ys.len()) as f64;
    let within = |s: &[Vec<f64>]| {
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                total += dist(&s[i], &s[j]);
            }
        }
        2.0 * total / (s.len() * (s.len() - 1)) as f64
    };
    Ok(2.0 * cross - within(xs) - within(ys))
}

/// Mean and population variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.len() as f64;
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_reference_points() {
        // Standard table values of the Kolmogorov distribution.
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_survival(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn exact_quantiles_pass() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        let r = ks_test_exp1(&xs).unwrap();
        assert!(r.statistic <= 0.5 / n as f64 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn wrong_scale_fails() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| -2.0 * (1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        assert!(ks_test_exp1(&xs).unwrap().p_value < 1e-6);
    }

    #[test]
    fn energy_distance_of_identical_clouds_is_small() {
        let a: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1, 1.0]).collect();
        let shifted: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 10.0, p[1]]).collect();
        let same = energy_distance(&a, &a).unwrap();
        let far = energy_distance(&a, &shifted).unwrap();
        assert!(same.abs() < 0.2);
        assert!(far > 15.0);
    }
}
