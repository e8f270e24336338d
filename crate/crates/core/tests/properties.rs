use proptest::prelude::*;
use rap_core::chains::{renewal_check, DpOptions};
use rap_core::lattice::Dim;
use rap_core::model::RapModel;
use rap_core::stats::{ks_test, normal_cdf};
use rap_core::variance::{cross_second_moment, truncated_moment_matrix, truncated_second_moment};
use rap_core::weights::{LawSpec, SlopeVector};

fn dirichlet_d1(alpha: [f64; 3]) -> RapModel {
    let law = LawSpec {
        dimension: 1,
        family: "dirichlet".into(),
        offsets: vec![vec![-1], vec![0], vec![1]],
        alpha: Some(alpha.to_vec()),
        atoms: None,
        probs: None,
    }
    .build()
    .unwrap();
    RapModel::new(law, SlopeVector::new(Dim::One, &[1.0]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn renewal_identity_for_random_laws(a in 0.2f64..4.0, b in 0.2f64..4.0, c in 0.2f64..4.0, x in 1i64..6) {
        let m = dirichlet_d1([a, b, c]);
        let rows = renewal_check(&m.kernel, [x, 0], 150, &DpOptions::default()).unwrap();
        for r in rows {
            prop_assert!(r.residual.abs() <= 1e-10);
        }
    }

    #[test]
    fn second_moments_are_symmetric_and_nonnegative(x in -4i64..5, y in -4i64..5, dx in -2i64..3, dy in -2i64..3) {
        prop_assume!((x, dx) != (0, 0) && (y, dy) != (0, 0) && (x, dx) != (y, dy));
        let m = RapModel::reference(Dim::Two);
        let opts = DpOptions::default();
        let (p, q) = ([x, dx], [y, dy]);
        let a = cross_second_moment(&m, p, q, 30, &opts).unwrap();
        let b = cross_second_moment(&m, q, p, 30, &opts).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(truncated_second_moment(&m, p, 30, &opts).unwrap() >= 0.0);
        let mat = truncated_moment_matrix(&m, &[p, q], 30, &opts).unwrap();
        prop_assert!(mat[(0, 0)] * mat[(1, 1)] - mat[(0, 1)] * mat[(0, 1)] >= -1e-12);
    }

    #[test]
    fn ks_statistics_stay_in_range(xs in prop::collection::vec(-5.0f64..5.0, 100..300)) {
        let r = ks_test(&xs, |v| normal_cdf(v, 2.0)).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.d));
        prop_assert!((0.0..=1.0).contains(&r.p));
    }
}
