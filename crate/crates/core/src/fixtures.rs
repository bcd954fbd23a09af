//! Named example sets used by the CLI and the test suites.

use crate::poly::{poly, Polynomial};
use crate::semialg::SemialgebraicSet;
use crate::stability;

/// `{x1 x2 <= 1}`, unbounded; the CLI adds a ball of radius 10.
pub fn hyperbola() -> SemialgebraicSet {
    single(poly(2, &[(-1.0, &[0, 0]), (1.0, &[1, 1])]))
}

/// Smooth convex quartic `x1^4 + x2^4 + x1^2 + x2 <= 0`.
pub fn egg() -> SemialgebraicSet {
    single(poly(2, &[(1.0, &[4, 0]), (1.0, &[0, 4]), (1.0, &[2, 0]), (1.0, &[0, 1])]))
}

/// Quartic with a singular boundary point at the origin.
pub fn waterdrop() -> SemialgebraicSet {
    single(waterdrop_poly())
}

pub fn waterdrop_poly() -> Polynomial {
    poly(2, &[(1.0, &[4, 0]), (1.0, &[0, 4]), (1.0, &[2, 0]), (1.0, &[0, 3])])
}

/// `x1^4 + x2^4 + x2^3 + offset <= 0`; `offset = 0` is numerically convex
/// with a singular point at the origin.
pub fn singular_quartic(offset: f64) -> SemialgebraicSet {
    single(poly(2, &[(1.0, &[4, 0]), (1.0, &[0, 4]), (1.0, &[0, 3])]).add_constant(offset))
}

pub fn half_plane() -> SemialgebraicSet {
    single(Polynomial::affine(&[1.0, 0.0], 0.0))
}

/// `{x1^2 + x2^2 + 1 <= 0}`, empty.
pub fn empty() -> SemialgebraicSet {
    single(poly(2, &[(1.0, &[2, 0]), (1.0, &[0, 2]), (1.0, &[0, 0])]))
}

fn single(p: Polynomial) -> SemialgebraicSet {
    let n = p.nvars();
    SemialgebraicSet::new(n, vec![p]).expect("single polynomial")
}

/// Look up a fixture by its CLI name.
pub fn by_name(name: &str) -> Option<SemialgebraicSet> {
    Some(match name {
        "hyperbola" => hyperbola().with_ball(10.0),
        "egg" => egg(),
        "waterdrop" => waterdrop(),
        "singular" => singular_quartic(0.0),
        "singular+" => singular_quartic(1e-3),
        "singular-" => singular_quartic(-1e-3),
        "half-plane" => half_plane(),
        "empty" => empty(),
        "schur3" => stability::schur3_region().set,
        "schur4" => stability::schur4_region(0.0).set,
        "schur4-nonconvex" => stability::schur4_region(-0.75).set,
        _ => return None,
    })
}

pub const NAMES: &[&str] = &[
    "hyperbola",
    "egg",
    "waterdrop",
    "singular",
    "singular+",
    "singular-",
    "half-plane",
    "empty",
    "schur3",
    "schur4",
    "schur4-nonconvex",
];

/// A box enclosing the fixture's region (or a window onto it when unbounded),
/// used for rasters and plots.
pub fn plot_box(name: &str) -> Option<Vec<[f64; 2]>> {
    Some(match name {
        "hyperbola" => vec![[-3.0, 3.0]; 2],
        "egg" => vec![[-1.0, 1.0], [-1.2, 0.2]],
        "waterdrop" => vec![[-0.5, 0.5], [-1.1, 0.1]],
        "singular" | "singular+" | "singular-" => vec![[-0.7, 0.7], [-1.1, 0.1]],
        "half-plane" | "empty" => vec![[-1.0, 1.0]; 2],
        "schur3" => stability::schur3_region().bounding_box(),
        "schur4" => stability::schur4_region(0.0).bounding_box(),
        "schur4-nonconvex" => stability::schur4_region(-0.75).bounding_box(),
        _ => return None,
    })
}
