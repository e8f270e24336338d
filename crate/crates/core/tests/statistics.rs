use rand::Rng;
use rand_distr::StandardNormal;
use rap_core::rng::{Domain, StreamKey};
use rap_core::stats::{kolmogorov_survival, ks_test, normal_cdf, Summary};

fn normals(trial: u64, n: usize) -> Vec<f64> {
    let mut rng = StreamKey::new(2024, Domain::Test, trial).rng(0);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn ks_is_calibrated_on_exact_samples() {
    let passes = (0..100)
        .filter(|&t| ks_test(&normals(t, 10_000), |x| normal_cdf(x, 1.0)).unwrap().p > 0.01)
        .count();
    assert!(passes >= 98, "{passes}/100");
}

#[test]
fn ks_detects_a_wrong_variance() {
    let r = ks_test(&normals(1000, 10_000), |x| normal_cdf(x, 1.3)).unwrap();
    assert!(r.p < 1e-6, "p = {}", r.p);
}

#[test]
fn variance_interval_coverage() {
    let covered = (0..200)
        .filter(|&t| Summary::new(&normals(500 + t, 2000)).unwrap().var_covers(1.0, 0.05))
        .count();
    assert!((180..=198).contains(&covered), "{covered}/200");
}

#[test]
fn kolmogorov_five_percent_point() {
    assert!((kolmogorov_survival(1.358) - 0.05).abs() < 5e-4);
}
