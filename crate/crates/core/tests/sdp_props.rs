use innerconvex::sdp::kkt_report;
use innerconvex::{build_curvature_problem, build_relaxation, fixtures, min_relaxation_order, solve_sdp};
use innerconvex::{Relaxation, SdpOptions, SdpProblem, SdpSolution, SdpStatus};
use proptest::prelude::*;
use std::sync::OnceLock;

const MAX_ORDER: usize = 3;

/// Every curvature relaxation of every fixture piece up to `MAX_ORDER`.
fn fixture_relaxations() -> Vec<(String, (String, usize), Relaxation)> {
    let mut out = Vec::new();
    for name in fixtures::NAMES {
        let set = fixtures::by_name(name).unwrap();
        for i in 0..set.ineqs.len() {
            let Ok(prob) = build_curvature_problem(&set, i) else {
                continue;
            };
            for k in min_relaxation_order(&prob)..=MAX_ORDER {
                let label = format!("{name} piece {i} order {k}");
                out.push((label, (name.to_string(), i), build_relaxation(&prob, k).unwrap()));
            }
        }
    }
    out
}

struct Solved {
    label: String,
    piece: (String, usize),
    order: usize,
    relax: Relaxation,
    sol: SdpSolution,
}

fn solved() -> &'static [Solved] {
    static CELL: OnceLock<Vec<Solved>> = OnceLock::new();
    CELL.get_or_init(|| {
        fixture_relaxations()
            .into_iter()
            .map(|(label, piece, relax)| {
                let sol = solve_sdp(&relax.sdp, &SdpOptions::default());
                Solved {
                    label,
                    piece,
                    order: relax.order,
                    relax,
                    sol,
                }
            })
            .collect()
    })
}

fn scale(v: &[f64]) -> f64 {
    1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn kkt_residuals_on_fixture_relaxations() {
    let mut failures = Vec::new();
    for s in solved() {
        let (r, sol) = (&s.relax, &s.sol);
        let k = kkt_report(&r.sdp, sol);
        eprintln!("{}: {:?} obj {:.8} {:?}", s.label, sol.status, sol.primal_obj, k);
        if sol.status != SdpStatus::Optimal {
            continue;
        }
        let cs = scale(&r.sdp.objective);
        let ok = k.equality <= 1e-6
            && k.primal_psd >= -1e-6
            && k.dual_psd >= -1e-6 * cs
            && k.stationarity <= 1e-6 * cs
            && k.complementarity.abs() <= 1e-6 * (1.0 + sol.primal_obj.abs());
        if !ok {
            failures.push(s.label.clone());
        }
    }
    assert!(failures.is_empty(), "KKT residuals too large: {failures:?}");
}

#[test]
fn bounds_increase_with_order() {
    let all = solved();
    for (a, b) in all.iter().zip(&all[1..]) {
        if a.piece != b.piece || b.order != a.order + 1 {
            continue;
        }
        if a.sol.status != SdpStatus::Optimal || b.sol.status != SdpStatus::Optimal {
            continue;
        }
        let slack = 1e-6 * (1.0 + a.sol.primal_obj.abs());
        assert!(
            a.sol.primal_obj <= b.sol.primal_obj + slack,
            "{}: {} then {}",
            a.label,
            a.sol.primal_obj,
            b.sol.primal_obj
        );
    }
}

#[test]
fn solver_is_deterministic() {
    let set = fixtures::by_name("waterdrop").unwrap();
    let prob = build_curvature_problem(&set, 0).unwrap();
    let r = build_relaxation(&prob, 3).unwrap();
    let a = solve_sdp(&r.sdp, &SdpOptions::default());
    let b = solve_sdp(&r.sdp, &SdpOptions::default());
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.primal_obj.to_bits(), b.primal_obj.to_bits());
    assert!(a.moment_values.iter().zip(&b.moment_values).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn text_format_round_trips_fixture_relaxations() {
    for (label, _, r) in fixture_relaxations() {
        let back = SdpProblem::from_text(&r.sdp.to_text()).unwrap();
        assert_eq!(back.num_vars, r.sdp.num_vars, "{label}");
        assert_eq!(back.objective, r.sdp.objective, "{label}");
        assert_eq!(back.equalities, r.sdp.equalities, "{label}");
        assert_eq!(back.blocks.len(), r.sdp.blocks.len(), "{label}");
        for (a, b) in back.blocks.iter().zip(&r.sdp.blocks) {
            assert_eq!(a.size, b.size, "{label}");
            assert_eq!(a.entries, b.entries, "{label}");
            assert_eq!(a.constant, b.constant, "{label}");
        }
    }
}

fn egg_relaxation() -> Relaxation {
    let set = fixtures::by_name("egg").unwrap();
    let prob = build_curvature_problem(&set, 0).unwrap();
    build_relaxation(&prob, 3).unwrap()
}

fn scaled(r: &Relaxation, lambda: f64) -> SdpProblem {
    let mut p = r.sdp.clone();
    p.objective.iter_mut().for_each(|c| *c *= lambda);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn objective_scaling_scales_optimum(lambda in 0.1..10.0f64) {
        let r = egg_relaxation();
        let base = solve_sdp(&r.sdp, &SdpOptions::default());
        let s = solve_sdp(&scaled(&r, lambda), &SdpOptions::default());
        prop_assert_eq!(base.status, SdpStatus::Optimal);
        prop_assert_eq!(s.status, SdpStatus::Optimal);
        let rel = (s.primal_obj - lambda * base.primal_obj).abs() / (1.0 + (lambda * base.primal_obj).abs());
        prop_assert!(rel <= 1e-7, "objective {} vs {} (rel {:e})", s.primal_obj, lambda * base.primal_obj, rel);
    }

    #[test]
    fn power_of_two_scaling_keeps_optimizer(j in -4i32..=4) {
        let r = egg_relaxation();
        let lambda = 2f64.powi(j);
        let base = solve_sdp(&r.sdp, &SdpOptions::default());
        let s = solve_sdp(&scaled(&r, lambda), &SdpOptions::default());
        for (a, b) in s.block_matrices.iter().zip(&base.block_matrices) {
            let d = (a - b).amax();
            prop_assert!(d <= 1e-8, "block moved by {:e}", d);
        }
        let rel = (s.primal_obj - lambda * base.primal_obj).abs() / (lambda * base.primal_obj.abs());
        prop_assert!(rel <= 1e-8);
    }
}
