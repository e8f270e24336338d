//! Moment estimators with confidence intervals and Kolmogorov–Smirnov tests.

use libm::erfc;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{RapError, Result};

/// Smallest sample size for which a p-value is reported.
pub const MIN_KS_SAMPLES: usize = 100;

/// Φ(x/σ) for a centred normal with variance `var`.
pub fn normal_cdf(x: f64, var: f64) -> f64 {
    0.5 * erfc(-x / (2.0 * var).sqrt())
}

/// z with P(|Z| > z) = alpha.
pub fn two_sided_z(alpha: f64) -> f64 {
    // erfc(z/√2) is decreasing; bisect to full precision
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid / std::f64::consts::SQRT_2) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sample moments of one scalar series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased variance.
    pub var: f64,
    pub se_mean: f64,
    /// Asymptotic standard error of `var`.
    pub se_var: f64,
}

impl Summary {
    pub fn new(xs: &[f64]) -> Result<Summary> {
        let n = xs.len();
        if n < 4 {
            return Err(RapError::invalid("replicas", format!("need at least 4 samples, got {n}")));
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in xs {
            let d = (x - mean) * (x - mean);
            m2 += d;
            m4 += d * d;
        }
        let var = m2 / (nf - 1.0);
        let m4 = m4 / nf;
        let v_var = (m4 - var * var * (nf - 3.0) / (nf - 1.0)) / nf;
        Ok(Summary {
            n,
            mean,
            var,
            se_mean: (var / nf).sqrt(),
            se_var: v_var.max(0.0).sqrt(),
        })
    }

    /// Two-sided interval for the variance at significance `alpha`.
    pub fn var_ci(&self, alpha: f64) -> [f64; 2] {
        let h = two_sided_z(alpha) * self.se_var;
        [self.var - h, self.var + h]
    }

    pub fn var_covers(&self, target: f64, alpha: f64) -> bool {
        let [lo, hi] = self.var_ci(alpha);
        lo <= target && target <= hi
    }

    /// |mean| measured in standard errors.
    pub fn mean_z(&self) -> f64 {
        if self.se_mean == 0.0 {
            if self.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.mean.abs() / self.se_mean
        }
    }
}

/// Empirical covariance of vector samples with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub se: DMatrix<f64>,
}

impl CovEstimate {
    pub fn new(rows: &[Vec<f64>]) -> Result<CovEstimate> {
        let n = rows.len();
        if n < 4 {
            return Err(RapError::invalid("replicas", format!("need at least 4 samples, got {n}")));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(RapError::invalid("samples", "ragged sample vectors"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
        let mut cov = DMatrix::zeros(k, k);
        let mut se = DMatrix::zeros(k, k);
        for j in 0..k {
            for l in j..k {
                let prods: Vec<f64> = rows.iter().map(|r| (r[j] - mean[j]) * (r[l] - mean[l])).collect();
                let c = prods.iter().sum::<f64>() / (nf - 1.0);
                let pm = prods.iter().sum::<f64>() / nf;
                let v = prods.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / (nf - 1.0);
                cov[(j, l)] = c;
                cov[(l, j)] = c;
                se[(j, l)] = (v / nf).sqrt();
                se[(l, j)] = se[(j, l)];
            }
        }
        Ok(CovEstimate { n, mean, cov, se })
    }

    /// Entries of `target` outside the two-sided interval at `alpha`.
    pub fn uncovered(&self, target: &DMatrix<f64>, alpha: f64) -> Vec<(usize, usize)> {
        let z = two_sided_z(alpha);
        let k = self.cov.nrows();
        let mut out = Vec::new();
        for j in 0..k {
            for l in j..k {
                if (self.cov[(j, l)] - target[(j, l)]).abs() > z * self.se[(j, l)] {
                    out.push((j, l));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// P(K > s) for the Kolmogorov distribution.
pub fn kolmogorov_survival(s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for m in 1..=100_000u32 {
        let mf = m as f64;
        let term = (-2.0 * mf * mf * s * s).exp();
        sum += if m % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic against `cdf` with its asymptotic p-value.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let n = samples.len();
    if n < MIN_KS_SAMPLES {
        return Err(RapError::invalid(
            "replicas",
            format!("KS needs at least {MIN_KS_SAMPLES} samples, got {n}"),
        ));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult {
        d,
        p: kolmogorov_survival(nf.sqrt() * d),
    })
}

/// Two-sample KS statistic, p-value with effective size nm/(n+m).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < MIN_KS_SAMPLES || b.len() < MIN_KS_SAMPLES {
        return Err(RapError::invalid(
            "replicas",
            format!("KS needs at least {MIN_KS_SAMPLES} samples per side"),
        ));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        d,
        p: kolmogorov_survival(ne.sqrt() * d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_cdf() {
        assert!((two_sided_z(0.05) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((two_sided_z(0.01) - 2.575_829_303_548_901).abs() < 1e-12);
        assert!((normal_cdf(1.0, 1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert_eq!(normal_cdf(0.0, 3.0), 0.5);
    }

    #[test]
    fn kolmogorov_series() {
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 5e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(0.05) > 0.999_999);
        assert!(kolmogorov_survival(3.0) < 1e-7);
    }

    #[test]
    fn median_samples_give_half() {
        let xs = vec![0.0; 200];
        let r = ks_test(&xs, |x| normal_cdf(x, 1.0)).unwrap();
        assert_eq!(r.d, 0.5);
        assert!(ks_test(&xs[..50], |x| normal_cdf(x, 1.0)).is_err());
    }

    #[test]
    fn two_sample_identical_and_disjoint() {
        let a: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&a, &a).unwrap().d, 0.0);
        let b: Vec<f64> = (0..200).map(|i| 1000.0 + i as f64).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap().d, 1.0);
    }

    #[test]
    fn summary_of_constant_series() {
        let s = Summary::new(&[0.0; 10]).unwrap();
        assert_eq!(s.var, 0.0);
        assert_eq!(s.mean_z(), 0.0);
        assert_eq!(Summary::new(&[2.0; 10]).unwrap().mean_z(), f64::INFINITY);
    }

    #[test]
    fn covariance_is_symmetric() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 % 3.0]).collect();
        let c = CovEstimate::new(&rows).unwrap();
        assert_eq!(c.cov, c.cov.transpose());
        assert!(c.uncovered(&c.cov, 0.01).is_empty());
    }
}
