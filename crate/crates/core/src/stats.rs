//! Small statistical tests used by the cross-model checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
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

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction). Ties are handled by stepping both
/// empirical distribution functions past equal values together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n1,
        n2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::derive_stream;

    #[test]
    fn kolmogorov_reference_values() {
        // Classical critical values: Q(1.3581) = 0.05, Q(1.6276) = 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn same_law_accepts_different_law_rejects() {
        let mut r = derive_stream(1, 0);
        let a: Vec<f64> = (0..5000).map(|_| r.uniform()).collect();
        let b: Vec<f64> = (0..5000).map(|_| r.uniform()).collect();
        let c: Vec<f64> = (0..5000).map(|_| r.uniform() * 1.1).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
    }

    #[test]
    fn identical_samples_have_zero_statistic() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(ks_two_sample(&[], &a).is_err());
    }
}
