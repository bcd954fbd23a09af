use innerconvex::Polynomial;
use proptest::prelude::*;

fn arb_poly(nvars: usize, max_deg: u32) -> impl Strategy<Value = Polynomial> {
    let term = (prop::collection::vec(0..=max_deg, nvars), -2.0..2.0f64);
    prop::collection::vec(term, 1..10).prop_map(move |terms| {
        let terms = terms.into_iter().map(|(mut e, c)| {
            // keep the total degree within max_deg
            while e.iter().sum::<u32>() > max_deg {
                let j = (0..e.len()).max_by_key(|&j| e[j]).unwrap();
                e[j] -= 1;
            }
            (e, c)
        });
        Polynomial::from_terms(nvars, terms).unwrap()
    })
}

fn arb_point(nvars: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, nvars)
}

fn scale(p: &Polynomial) -> f64 {
    1.0 + p.terms().map(|(_, c)| c.abs()).sum::<f64>()
}

fn central_diff(p: &Polynomial, x: &[f64], j: usize) -> f64 {
    let h = 1e-5;
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[j] += h;
    xm[j] -= h;
    (p.eval(&xp).unwrap() - p.eval(&xm).unwrap()) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_central_differences((p, x) in (1usize..=4).prop_flat_map(|n| (arb_poly(n, 6), arb_point(n)))) {
        let g = p.gradient().eval(&x).unwrap();
        for j in 0..p.nvars() {
            let fd = central_diff(&p, &x, j);
            prop_assert!((g[j] - fd).abs() <= 1e-6 * scale(&p), "d/dx{}: {} vs {}", j, g[j], fd);
        }
    }

    #[test]
    fn hessian_matches_central_differences((p, x) in (1usize..=4).prop_flat_map(|n| (arb_poly(n, 6), arb_point(n)))) {
        let h = p.hessian().eval(&x).unwrap();
        for j in 0..p.nvars() {
            let dj = p.diff(j).unwrap();
            for k in 0..p.nvars() {
                let fd = central_diff(&dj, &x, k);
                prop_assert!((h[j][k] - fd).abs() <= 1e-6 * scale(&dj), "H[{}][{}]: {} vs {}", j, k, h[j][k], fd);
            }
        }
    }

    #[test]
    fn mixed_partials_commute(p in (1usize..=4).prop_flat_map(|n| arb_poly(n, 6))) {
        let h = p.hessian();
        for j in 0..p.nvars() {
            for k in 0..p.nvars() {
                let a = p.diff(j).unwrap().diff(k).unwrap();
                let b = p.diff(k).unwrap().diff(j).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(h.get(j, k), &a);
            }
        }
    }

    #[test]
    fn eval_is_multiplicative((p, q, x) in (1usize..=3).prop_flat_map(|n| (arb_poly(n, 3), arb_poly(n, 3), arb_point(n)))) {
        let pq = p.mul(&q).unwrap().eval(&x).unwrap();
        let expect = p.eval(&x).unwrap() * q.eval(&x).unwrap();
        prop_assert!((pq - expect).abs() <= 1e-12 * scale(&p) * scale(&q), "{} vs {}", pq, expect);
    }

    #[test]
    fn product_degree_adds((p, q) in (1usize..=3).prop_flat_map(|n| (arb_poly(n, 4), arb_poly(n, 4)))) {
        prop_assume!(!p.is_zero() && !q.is_zero());
        prop_assert_eq!(p.mul(&q).unwrap().degree(), p.degree() + q.degree());
    }

    #[test]
    fn json_round_trip(p in (1usize..=4).prop_flat_map(|n| arb_poly(n, 5))) {
        let s = serde_json::to_string(&p).unwrap();
        let back: Polynomial = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(back, p);
    }
}
