use innerconvex::trajopt::bspline_eval;
use innerconvex::{fixtures, separating_halfspace, BSplineBasis, Polynomial, SemialgebraicSet};
use proptest::prelude::*;

fn arb_quadratic() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec(-1.0..1.0f64, 6).prop_map(|c| {
        Polynomial::from_terms(
            2,
            [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
                .iter()
                .zip(c)
                .map(|(e, v)| (e.to_vec(), v)),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn extra_constraint_never_adds_points(
        name in prop::sample::select(fixtures::NAMES),
        extra in arb_quadratic(),
        x in prop::collection::vec(-2.0..2.0f64, 2),
    ) {
        let set = fixtures::by_name(name).unwrap();
        prop_assume!(set.n == 2);
        let bigger: SemialgebraicSet = set.with_extra([extra]);
        if bigger.contains(&x, 0.0).unwrap() {
            prop_assert!(set.contains(&x, 0.0).unwrap());
        }
    }

    #[test]
    fn cut_value_at_point_is_eps(
        x2 in -0.99..-0.01f64,
        sign in prop::sample::select(vec![-1.0, 1.0]),
        eps in 0.0..0.1f64,
    ) {
        // boundary point of the waterdrop: x1^4 + x1^2 = -x2^3 - x2^4
        let p = fixtures::waterdrop_poly();
        let c = -x2.powi(3) - x2.powi(4);
        let x1 = sign * ((-1.0 + (1.0 + 4.0 * c).sqrt()) / 2.0).sqrt();
        let x = [x1, x2];
        prop_assert!(p.eval(&x).unwrap().abs() <= 1e-12);
        let cut = separating_halfspace(&p, &x, eps).unwrap();
        prop_assert!((cut.eval(&x).unwrap() - eps).abs() <= 1e-12);
        let (a, _) = cut.affine_parts().unwrap();
        prop_assert!((a[0].hypot(a[1]) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bspline_partition_of_unity(
        segments in 1usize..8,
        t0 in -2.0..2.0f64,
        len in 0.1..5.0f64,
        s in 0.0..=1.0f64,
    ) {
        let b = BSplineBasis::new(segments, 3, t0, t0 + len).unwrap();
        let t = t0 + s * len;
        let row = b.row(t, 0).unwrap();
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|&v| v >= -1e-14));
        prop_assert!(b.row(t, 1).unwrap().iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn bspline_is_c2_at_knots(
        alpha in prop::collection::vec(-1.0..1.0f64, 8),
        k in 1usize..5,
    ) {
        let b = BSplineBasis::standard(0.0, 2.5).unwrap();
        let t = 2.5 * k as f64 / 5.0;
        let h = 1e-7;
        for d in 0..=2 {
            let l = bspline_eval(&b, &alpha, t - h, d).unwrap();
            let r = bspline_eval(&b, &alpha, t + h, d).unwrap();
            prop_assert!((l - r).abs() <= 1e-4, "derivative {} jumps by {}", d, (l - r).abs());
        }
    }
}
