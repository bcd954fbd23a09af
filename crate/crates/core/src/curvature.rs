//! The curvature problem of a boundary piece: minimize `y' H_i(x) y` over
//! boundary points `p_i(x) = 0` of the set and unit tangent directions `y`.
//! A nonnegative optimum on every piece certifies convexity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{certify, CertifyOptions, Status};
use crate::poly::{Monomial, Polynomial};
use crate::semialg::SemialgebraicSet;

/// Polynomial optimization problem over `nvars` variables, the first `nx`
/// of which are the ambient coordinates `x`; any remaining ones are the
/// auxiliary direction `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyOptProblem {
    pub nvars: usize,
    pub nx: usize,
    pub objective: Polynomial,
    pub eqs: Vec<Polynomial>,
    pub ineqs: Vec<Polynomial>,
}

impl PolyOptProblem {
    pub fn max_degree(&self) -> u32 {
        std::iter::once(&self.objective)
            .chain(&self.eqs)
            .chain(&self.ineqs)
            .map(Polynomial::degree)
            .max()
            .unwrap_or(0)
    }

    /// Largest equality residual and inequality violation at `z`.
    pub fn violation(&self, z: &[f64]) -> (f64, f64) {
        let eq = self
            .eqs
            .iter()
            .map(|h| h.eval_unchecked(z).abs())
            .fold(0.0, f64::max);
        let ineq = self
            .ineqs
            .iter()
            .map(|g| g.eval_unchecked(z).max(0.0))
            .fold(0.0, f64::max);
        (eq, ineq)
    }

    pub fn objective_at(&self, z: &[f64]) -> f64 {
        self.objective.eval_unchecked(z)
    }

    /// True when the problem carries the curvature problem's `(x, y)` split.
    pub fn has_direction(&self) -> bool {
        self.nvars == 2 * self.nx
    }
}

/// Build the curvature problem for piece `i` (0-based) of `set`.
pub fn build_curvature_problem(set: &SemialgebraicSet, i: usize) -> Result<PolyOptProblem> {
    let m = set.ineqs.len();
    if i >= m {
        return Err(Error::IndexOutOfRange { index: i, len: m });
    }
    let p = &set.ineqs[i];
    if p.degree() <= 1 {
        return Err(Error::AffinePiece(i));
    }
    let n = set.n;
    let nv = 2 * n;
    let xmap: Vec<usize> = (0..n).collect();
    let lift = |q: &Polynomial| q.embed(nv, &xmap);
    let yvar = |j: usize| Polynomial::var(nv, n + j);

    let grad = p.gradient();
    let hess = p.hessian();

    let mut objective = Polynomial::zero(nv);
    for j in 0..n {
        for k in 0..n {
            let h = lift(hess.get(j, k));
            if h.is_zero() {
                continue;
            }
            let yy = yvar(j).mul(&yvar(k))?;
            objective = objective.add(&h.mul(&yy)?)?;
        }
    }

    let mut tangency = Polynomial::zero(nv);
    for j in 0..n {
        tangency = tangency.add(&lift(&grad.0[j]).mul(&yvar(j))?)?;
    }

    let mut sphere = Polynomial::constant(nv, -1.0);
    for j in 0..n {
        let mut e = vec![0; nv];
        e[n + j] = 2;
        sphere.add_term(Monomial::new(e), 1.0);
    }

    let mut ineqs: Vec<Polynomial> = set
        .ineqs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, q)| lift(q))
        .collect();
    if let Some(b) = set.ball_polynomial() {
        ineqs.push(lift(&b));
    }

    Ok(PolyOptProblem {
        nvars: nv,
        nx: n,
        objective,
        eqs: vec![lift(p), tangency, sphere],
        ineqs,
    })
}

/// Outcome of the nondegeneracy check on a boundary piece.
#[derive(Clone, Debug, PartialEq)]
pub enum Nondegeneracy {
    /// No point of the piece has a vanishing gradient.
    Holds,
    /// A singular boundary point exists; the witness is verified feasible.
    Violated(Vec<f64>),
    /// The relaxation hierarchy could not decide.
    Unknown,
}

/// Decide whether `p_i` and its gradient vanish simultaneously on the set,
/// by certifying the system `p_i = 0, grad p_i = 0, p_j <= 0`.
pub fn check_assumption_nondegenerate(set: &SemialgebraicSet, i: usize, max_order: usize) -> Result<Nondegeneracy> {
    let m = set.ineqs.len();
    if i >= m {
        return Err(Error::IndexOutOfRange { index: i, len: m });
    }
    let p = &set.ineqs[i];
    let grad = p.gradient();
    if p.degree() <= 1 {
        return Ok(if grad.0.iter().any(|g| !g.is_zero()) {
            Nondegeneracy::Holds
        } else if p.is_zero() {
            Nondegeneracy::Violated(vec![0.0; set.n])
        } else {
            Nondegeneracy::Holds
        });
    }
    let n = set.n;
    // minimum-norm singular point keeps the minimizer unique when one exists
    let mut objective = Polynomial::zero(n);
    for j in 0..n {
        let mut e = vec![0; n];
        e[j] = 2;
        objective.add_term(Monomial::new(e), 1.0);
    }
    let mut eqs = vec![p.clone()];
    eqs.extend(grad.0.iter().filter(|g| !g.is_zero()).cloned());
    let mut ineqs: Vec<Polynomial> = set
        .ineqs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, q)| q.clone())
        .collect();
    ineqs.extend(set.ball_polynomial());
    let prob = PolyOptProblem {
        nvars: n,
        nx: n,
        objective,
        eqs,
        ineqs,
    };
    let min_order = crate::moment::min_relaxation_order(&prob);
    let opts = CertifyOptions {
        max_order: max_order.max(min_order),
        ..CertifyOptions::default()
    };
    let res = certify(&prob, &opts);
    Ok(match res.status {
        Status::Infeasible => Nondegeneracy::Holds,
        Status::Certified => Nondegeneracy::Violated(res.minimizers[0].x.clone()),
        Status::BoundOnly => Nondegeneracy::Unknown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::poly::poly;
    use crate::stability;

    #[test]
    fn hyperbola_problem() {
        let prob = build_curvature_problem(&fixtures::hyperbola(), 0).unwrap();
        // variables (x1, x2, y1, y2)
        assert_eq!(prob.objective, poly(4, &[(2.0, &[0, 0, 1, 1])]));
        assert_eq!(
            prob.eqs,
            vec![
                poly(4, &[(-1.0, &[0, 0, 0, 0]), (1.0, &[1, 1, 0, 0])]),
                poly(4, &[(1.0, &[0, 1, 1, 0]), (1.0, &[1, 0, 0, 1])]),
                poly(4, &[(-1.0, &[0, 0, 0, 0]), (1.0, &[0, 0, 2, 0]), (1.0, &[0, 0, 0, 2])]),
            ]
        );
        assert!(prob.ineqs.is_empty());
        let with_ball = build_curvature_problem(&fixtures::hyperbola().with_ball(10.0), 0).unwrap();
        assert_eq!(with_ball.ineqs.len(), 1);
    }

    #[test]
    fn schur3_problem() {
        let prob = build_curvature_problem(&stability::schur3_region().set, 2).unwrap();
        // variables (x1, x2, x3, y1, y2, y3)
        // H3 has entries 2 at (1,1) and -1 at (1,3), so y'H3y = 2y1^2 - 2y1y3
        assert_eq!(
            prob.objective,
            poly(6, &[(2.0, &[0, 0, 0, 2, 0, 0]), (-2.0, &[0, 0, 0, 1, 0, 1])])
        );
        let tangency = poly(
            6,
            &[
                (2.0, &[1, 0, 0, 1, 0, 0]),
                (-1.0, &[0, 0, 1, 1, 0, 0]),
                (1.0, &[0, 0, 0, 0, 1, 0]),
                (-1.0, &[1, 0, 0, 0, 0, 1]),
            ],
        );
        // g3 = (2x1 - x3, 1, -x1): the tangency row is (2x1-x3)y1 + y2 - x1 y3
        assert_eq!(prob.eqs[1], tangency);
        assert_eq!(prob.ineqs.len(), 2);
    }

    #[test]
    fn egg_problem() {
        let prob = build_curvature_problem(&fixtures::egg(), 0).unwrap();
        let obj = poly(4, &[(12.0, &[2, 0, 2, 0]), (2.0, &[0, 0, 2, 0]), (12.0, &[0, 2, 0, 2])]);
        assert_eq!(prob.objective, obj);
        let tangency = poly(
            4,
            &[(4.0, &[3, 0, 1, 0]), (2.0, &[1, 0, 1, 0]), (4.0, &[0, 3, 0, 1]), (1.0, &[0, 0, 0, 1])],
        );
        assert_eq!(prob.eqs[1], tangency);
        assert_eq!(prob.objective.degree_in(&[2, 3]), 2);
    }

    #[test]
    fn affine_and_range_errors() {
        let hp = fixtures::half_plane();
        assert!(matches!(build_curvature_problem(&hp, 0), Err(Error::AffinePiece(0))));
        assert!(matches!(
            build_curvature_problem(&hp, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn feasible_points_are_consistent() {
        // a hand-built feasible point of the hyperbola problem
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let prob = build_curvature_problem(&fixtures::hyperbola(), 0).unwrap();
        let z = [1.0, 1.0, h, -h];
        let (eq, ineq) = prob.violation(&z);
        assert!(eq < 1e-12 && ineq == 0.0);
        assert!((prob.objective_at(&z) + 1.0).abs() < 1e-12);
        let zm = [1.0, 1.0, -h, h];
        assert_eq!(prob.objective_at(&z), prob.objective_at(&zm));
    }

    #[test]
    fn half_plane_is_nondegenerate() {
        assert_eq!(
            check_assumption_nondegenerate(&fixtures::half_plane(), 0, 3).unwrap(),
            Nondegeneracy::Holds
        );
    }
}
