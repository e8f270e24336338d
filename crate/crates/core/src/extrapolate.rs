//! Richardson extrapolation of sequences sampled at geometrically doubling n.

use serde::Serialize;

/// Limit estimate from a Richardson tableau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrapolation {
    pub value: f64,
    /// Difference between the two deepest tableau entries.
    pub error: f64,
    /// The raw value at the largest n.
    pub last_partial: f64,
}

/// `values[j]` is the sequence at `n_0·2^j`; the error is assumed to expand in
/// `n^{-p}` for the given exponents, eliminated in order.
pub fn richardson(values: &[f64], exponents: &[f64]) -> Extrapolation {
    assert!(!values.is_empty());
    let last_partial = *values.last().unwrap();
    let mut row = values.to_vec();
    let mut prev_best = last_partial;
    let mut best = last_partial;
    for &p in exponents.iter().take(values.len() - 1) {
        let f = 2f64.powf(p);
        row = row.windows(2).map(|w| (f * w[1] - w[0]) / (f - 1.0)).collect();
        prev_best = best;
        best = *row.last().unwrap();
    }
    Extrapolation {
        value: best,
        error: (best - prev_best).abs(),
        last_partial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removes_known_power_terms() {
        let f = |n: f64| 2.0 + 3.0 / n.sqrt() - 1.0 / n.powf(1.5);
        let vals: Vec<f64> = (0..4).map(|j| f(64.0 * 2f64.powi(j))).collect();
        let e = richardson(&vals, &[0.5, 1.5]);
        assert!((e.value - 2.0).abs() < 1e-13);
        assert!(e.error > 0.0);
    }

    #[test]
    fn single_value_is_returned_as_is() {
        let e = richardson(&[1.5], &[1.0]);
        assert_eq!(e.value, 1.5);
        assert_eq!(e.error, 0.0);
    }
}
