//! Small statistical helpers for dwell-time checks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, Q(λ) = P(K > λ).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test of `samples` against Exp(mean), with
/// the Stephens small-sample correction to the asymptotic p-value.
pub fn ks_exponential(samples: &[f64], mean: f64) -> Result<KsResult> {
    if samples.is_empty() || !(mean > 0.0) {
        return Err(Error::invalid("KS test needs samples and a positive mean"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = 1.0 - (-x / mean).exp();
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    let sn = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, Exp, Uniform};

    #[test]
    fn kolmogorov_reference_values() {
        // tabulated: Q(1.36) ≈ 0.049, Q(1.63) ≈ 0.010
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 5e-4);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn accepts_exponential_rejects_uniform() {
        let mut rng = seed::from_seed(4);
        let e = Exp::new(0.5).unwrap();
        let xs: Vec<f64> = (0..2000).map(|_| e.sample(&mut rng)).collect();
        assert!(ks_exponential(&xs, 2.0).unwrap().p_value > 0.01);
        let u = Uniform::new(0.0, 4.0).unwrap();
        let ys: Vec<f64> = (0..2000).map(|_| u.sample(&mut rng)).collect();
        assert!(ks_exponential(&ys, 2.0).unwrap().p_value < 1e-6);
    }
}
