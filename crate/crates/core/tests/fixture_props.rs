use std::sync::OnceLock;

use innerconvex::inner::{piece_problem, FinalStatus, PieceOutcome};
use innerconvex::{build_curvature_problem, certify, fixtures, inner_approximation, rasterize};
use innerconvex::{CertifiedOptimum, CertifyOptions, InnerApproximation, InnerOptions, PolyOptProblem, RegionRaster, Status};

struct Certified {
    label: String,
    prob: PolyOptProblem,
    res: CertifiedOptimum,
}

fn certified() -> &'static [Certified] {
    static CELL: OnceLock<Vec<Certified>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        for name in fixtures::NAMES {
            let set = fixtures::by_name(name).unwrap();
            for i in 0..set.ineqs.len() {
                let Ok(prob) = build_curvature_problem(&set, i) else {
                    continue;
                };
                let res = certify(&prob, &CertifyOptions::default());
                out.push(Certified {
                    label: format!("{name} piece {i}"),
                    prob,
                    res,
                });
            }
        }
        out
    })
}

fn two_d_fixtures() -> impl Iterator<Item = &'static str> {
    fixtures::NAMES
        .iter()
        .copied()
        .filter(|n| fixtures::by_name(n).unwrap().n == 2)
}

fn inner_runs() -> &'static [(String, InnerApproximation)] {
    static CELL: OnceLock<Vec<(String, InnerApproximation)>> = OnceLock::new();
    CELL.get_or_init(|| {
        two_d_fixtures()
            .map(|name| {
                let set = fixtures::by_name(name).unwrap();
                let inner = inner_approximation(&set, 0.0, &InnerOptions::default()).unwrap();
                (name.to_string(), inner)
            })
            .collect()
    })
}

#[test]
fn certified_minimizers_reverify() {
    for c in certified() {
        if c.res.status != Status::Certified {
            continue;
        }
        assert!(!c.res.minimizers.is_empty(), "{}", c.label);
        for m in &c.res.minimizers {
            let (eq, ineq) = c.prob.violation(&m.z);
            assert!(eq <= 1e-6 && ineq <= 1e-6, "{}: infeasible minimizer {:?}", c.label, m.z);
            let f = c.prob.objective_at(&m.z);
            assert!(
                (f - c.res.lower_bound).abs() <= 1e-5,
                "{}: objective {} vs bound {}",
                c.label,
                f,
                c.res.lower_bound
            );
        }
    }
}

#[test]
fn bounds_never_exceed_a_feasible_value() {
    for c in certified() {
        let Some(best) = c.res.minimizers.iter().map(|m| c.prob.objective_at(&m.z)).reduce(f64::min) else {
            continue;
        };
        for r in c.res.records.iter().filter(|r| !r.perturbed) {
            assert!(
                r.lower_bound <= best + 1e-5,
                "{} order {}: bound {} above feasible value {}",
                c.label,
                r.order,
                r.lower_bound,
                best
            );
        }
    }
}

#[test]
fn minimizers_closed_under_direction_flip() {
    for c in certified() {
        if c.res.antipodal_merged || !c.prob.has_direction() {
            continue;
        }
        let nx = c.prob.nx;
        for m in &c.res.minimizers {
            let flipped: Vec<f64> = m.z[..nx].iter().copied().chain(m.z[nx..].iter().map(|v| -v)).collect();
            let found = c.res.minimizers.iter().any(|o| o.z.iter().zip(&flipped).all(|(a, b)| (a - b).abs() <= 1e-6));
            assert!(found, "{}: no partner for {:?}", c.label, m.z);
        }
    }
}

fn raster(name: &str, set: &innerconvex::SemialgebraicSet) -> RegionRaster {
    let bbox = fixtures::plot_box(name).unwrap();
    rasterize(set, &bbox, &[400, 400]).unwrap()
}

#[test]
fn inner_approximation_is_a_subset() {
    for (name, inner) in inner_runs() {
        let s = raster(name, &inner.base);
        let sbar = raster(name, &inner.set());
        let outside = sbar.mask.iter().zip(&s.mask).filter(|(a, b)| **a && !**b).count();
        assert_eq!(outside, 0, "{name}: {outside} points of the inner set lie outside the set");
    }
}

#[test]
fn egg_is_left_unchanged() {
    let (_, inner) = inner_runs().iter().find(|(n, _)| n == "egg").unwrap();
    assert!(inner.cuts.is_empty());
    assert_eq!(inner.final_status, FinalStatus::ConvexCertified);
    assert_eq!(inner.set(), fixtures::egg());
}

#[test]
fn cuts_pass_through_their_minimizers() {
    for (name, inner) in inner_runs() {
        for e in inner.log.iter().filter(|e| e.outcome == PieceOutcome::Cut) {
            for cut in &e.cuts {
                let touches = e.minimizers.iter().any(|x| cut.eval(x).unwrap().abs() <= 1e-12);
                assert!(touches, "{name}: cut {cut:?} misses every minimizer");
            }
        }
    }
}

#[test]
fn logged_bounds_are_reproducible() {
    let (_, inner) = inner_runs().iter().find(|(n, _)| n == "waterdrop").unwrap();
    let opts = InnerOptions::default();
    for e in inner.log.iter().filter(|e| e.status == Some(Status::Certified)) {
        let prob = piece_problem(&inner.base, &inner.cuts[..e.cuts_in_force], e.piece, opts.contact_push).unwrap();
        let res = certify(&prob, &CertifyOptions { max_order: opts.max_order, ..opts.certify.clone() });
        assert_eq!(res.lower_bound.to_bits(), e.bound.unwrap().to_bits());
    }
}

/// Convex hull by Andrew's monotone chain, counter-clockwise.
fn hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut h: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = h.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while h.len() >= start + 2 && cross(h[h.len() - 2], h[h.len() - 1], p) <= 0.0 {
                h.pop();
            }
            h.push(p);
        }
        h.pop();
    }
    h
}

fn in_hull(h: &[[f64; 2]], p: [f64; 2]) -> bool {
    if h.len() < 3 {
        return false;
    }
    (0..h.len()).all(|i| {
        let (a, b) = (h[i], h[(i + 1) % h.len()]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
    })
}

#[test]
fn certified_inner_sets_fill_their_hull() {
    for (name, inner) in inner_runs() {
        if inner.final_status != FinalStatus::ConvexCertified {
            continue;
        }
        let r = raster(name, &inner.set());
        let (nx, ny) = (r.resolution[0], r.resolution[1]);
        let inside: Vec<[f64; 2]> = r.points().filter(|(_, b)| *b).map(|(p, _)| [p[0], p[1]]).collect();
        let h = hull(inside);
        let at = |i: usize, j: usize| r.mask[i + nx * j];
        let mut bad = 0;
        for j in 0..ny {
            for i in 0..nx {
                if at(i, j) {
                    continue;
                }
                let p = r.index_to_point(i + nx * j);
                if !in_hull(&h, [p[0], p[1]]) {
                    continue;
                }
                let near = (j.saturating_sub(1)..=(j + 1).min(ny - 1))
                    .any(|jj| (i.saturating_sub(1)..=(i + 1).min(nx - 1)).any(|ii| at(ii, jj)));
                if !near {
                    bad += 1;
                }
            }
        }
        assert_eq!(bad, 0, "{name}: {bad} hull cells are more than a cell away from the set");
    }
}
