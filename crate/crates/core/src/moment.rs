//! Moment (Lasserre) relaxations of polynomial optimization problems.
//!
//! At order `k` the relaxation carries one pseudo-moment `y_a` per monomial
//! of degree at most `2k`, constrains the moment matrix `M_k(y)` and one
//! localizing matrix `M_{k - ceil(deg g / 2)}(-g y)` per inequality `g <= 0`
//! to be psd, and imposes every equality `h = 0` through the linear rows
//! `L(h m) = 0` for all monomials `m` with `deg(h m) <= 2k`.
//!
//! Each psd block is restricted to the orthogonal complement of the
//! coefficient vectors of `h m` lying inside its basis: the equality rows
//! force those vectors into the kernel of the block, so the restriction
//! loses nothing and gives the interior-point solver a strictly feasible
//! face to work on.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::curvature::PolyOptProblem;
use crate::error::{Error, Result};
use crate::poly::{Monomial, Polynomial};
use crate::sdp::{BlockEntry, LinearEquality, SdpBlock, SdpProblem};

/// Monomials of degree `<= order` in graded order.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBasis {
    pub nvars: usize,
    pub order: u32,
    pub monomials: Vec<Monomial>,
}

impl MomentBasis {
    pub fn new(nvars: usize, order: u32) -> Self {
        MomentBasis {
            nvars,
            order,
            monomials: Monomial::all_up_to(nvars, order),
        }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

/// Smallest order at which every polynomial of `prob` fits in the relaxation.
pub fn min_relaxation_order(prob: &PolyOptProblem) -> usize {
    (prob.max_degree() as usize).div_ceil(2).max(1)
}

/// A moment relaxation: the SDP together with the moment indexing.
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub order: usize,
    pub nvars: usize,
    /// Monomial of each SDP variable.
    pub moments: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
    /// Basis of the moment matrix (block 0).
    pub basis: MomentBasis,
    pub sdp: SdpProblem,
}

impl Relaxation {
    pub fn moment_index(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Moment matrix `M_t(y)` for `t <= order`, from a moment vector.
    pub fn moment_matrix(&self, y: &[f64], t: usize) -> DMatrix<f64> {
        let basis = Monomial::all_up_to(self.nvars, t as u32);
        let n = basis.len();
        DMatrix::from_fn(n, n, |i, j| y[self.index[&basis[i].mul(&basis[j])]])
    }

    /// First-order moments, i.e. the candidate point when the measure is Dirac.
    pub fn first_moments(&self, y: &[f64]) -> Vec<f64> {
        (0..self.nvars)
            .map(|j| y[self.index[&Monomial::var(self.nvars, j)]])
            .collect()
    }
}

/// Moments of the Dirac measure at `point` for all monomials of degree `<= 2k`.
pub fn dirac_moments(point: &[f64], order: usize) -> Vec<f64> {
    Monomial::all_up_to(point.len(), 2 * order as u32)
        .iter()
        .map(|m| m.eval(point))
        .collect()
}

fn check_nvars(prob: &PolyOptProblem) -> Result<()> {
    for p in std::iter::once(&prob.objective).chain(&prob.eqs).chain(&prob.ineqs) {
        if p.nvars() != prob.nvars {
            return Err(Error::DimensionMismatch {
                expected: prob.nvars,
                got: p.nvars(),
            });
        }
    }
    Ok(())
}

/// Face basis of a block with basis `basis`: the orthogonal complement of all
/// coefficient vectors of `h m` supported on the basis. `None` when nothing
/// is removed.
fn block_face(basis: &[Monomial], eqs: &[Polynomial], nvars: usize) -> Option<DMatrix<f64>> {
    let order = basis.last().map_or(0, Monomial::degree);
    let pos: HashMap<&Monomial, usize> = basis.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut vecs: Vec<Vec<f64>> = Vec::new();
    for h in eqs {
        let dh = h.degree();
        if h.is_zero() || dh > order {
            continue;
        }
        for m in Monomial::all_up_to(nvars, order - dh) {
            let mut v = vec![0.0; basis.len()];
            for (a, c) in h.terms() {
                v[pos[&a.mul(&m)]] += c;
            }
            vecs.push(v);
        }
    }
    if vecs.is_empty() {
        return None;
    }
    let n = basis.len();
    let k = DMatrix::from_fn(n, vecs.len(), |i, j| vecs[j][i]);
    let kk = &k * k.transpose();
    let eig = kk.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-10 * lmax).collect();
    if keep.len() == n {
        return None;
    }
    let cols: Vec<_> = keep.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    Some(if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    })
}

/// Build the order-`k` moment relaxation of `prob`.
pub fn build_relaxation(prob: &PolyOptProblem, k: usize) -> Result<Relaxation> {
    check_nvars(prob)?;
    let min = min_relaxation_order(prob);
    if k < min {
        return Err(Error::OrderTooSmall { order: k, min });
    }
    let nv = prob.nvars;
    let moments = Monomial::all_up_to(nv, 2 * k as u32);
    let index: HashMap<Monomial, usize> = moments.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
    let basis = MomentBasis::new(nv, k as u32);

    let mut blocks = Vec::new();
    let mut mblock = SdpBlock::new(basis.len());
    for i in 0..basis.len() {
        for j in i..basis.len() {
            mblock.entries.push(BlockEntry {
                var: index[&basis.monomials[i].mul(&basis.monomials[j])],
                row: i,
                col: j,
                value: 1.0,
            });
        }
    }
    mblock.face = block_face(&basis.monomials, &prob.eqs, nv);
    blocks.push(mblock);

    for g in &prob.ineqs {
        let dg = g.degree().div_ceil(2) as usize;
        let lb = Monomial::all_up_to(nv, (k - dg) as u32);
        let mut block = SdpBlock::new(lb.len());
        for i in 0..lb.len() {
            for j in i..lb.len() {
                let mij = lb[i].mul(&lb[j]);
                for (a, c) in g.terms() {
                    block.entries.push(BlockEntry {
                        var: index[&a.mul(&mij)],
                        row: i,
                        col: j,
                        value: -c,
                    });
                }
            }
        }
        block.face = block_face(&lb, &prob.eqs, nv);
        blocks.push(block);
    }

    let mut equalities = vec![LinearEquality {
        coeffs: vec![(index[&Monomial::one(nv)], 1.0)],
        rhs: 1.0,
    }];
    for h in &prob.eqs {
        let dh = h.degree();
        if h.is_zero() || dh > 2 * k as u32 {
            continue;
        }
        for m in Monomial::all_up_to(nv, 2 * k as u32 - dh) {
            let mut row: HashMap<usize, f64> = HashMap::new();
            for (a, c) in h.terms() {
                *row.entry(index[&a.mul(&m)]).or_default() += c;
            }
            let mut coeffs: Vec<(usize, f64)> = row.into_iter().filter(|&(_, v)| v != 0.0).collect();
            coeffs.sort_by_key(|&(i, _)| i);
            equalities.push(LinearEquality { coeffs, rhs: 0.0 });
        }
    }

    let mut objective = vec![0.0; moments.len()];
    for (a, c) in prob.objective.terms() {
        match index.get(a) {
            Some(&i) => objective[i] += c,
            None => {
                return Err(Error::OrderTooSmall { order: k, min });
            }
        }
    }

    Ok(Relaxation {
        order: k,
        nvars: nv,
        sdp: SdpProblem {
            num_vars: moments.len(),
            objective,
            blocks,
            equalities,
        },
        moments,
        index,
        basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::poly;
    use crate::sdp::{solve_sdp, SdpOptions, SdpStatus};

    fn unconstrained(obj: Polynomial) -> PolyOptProblem {
        PolyOptProblem {
            nvars: obj.nvars(),
            nx: obj.nvars(),
            objective: obj,
            eqs: vec![],
            ineqs: vec![],
        }
    }

    #[test]
    fn sizes() {
        let p = unconstrained(poly(2, &[(1.0, &[2, 0])]));
        let r = build_relaxation(&p, 2).unwrap();
        assert_eq!(r.sdp.num_vars, 15);
        assert_eq!(r.basis.len(), 6);
        assert_eq!(r.sdp.blocks.len(), 1);
        assert!(matches!(build_relaxation(&p, 0), Err(Error::OrderTooSmall { .. })));
    }

    #[test]
    fn dirac_moments_are_feasible() {
        // x1^2 + x2^2 <= 4, x1 x2 = 1, evaluated at (1, 1)
        let prob = PolyOptProblem {
            nvars: 2,
            nx: 2,
            objective: poly(2, &[(1.0, &[1, 0])]),
            eqs: vec![poly(2, &[(1.0, &[1, 1]), (-1.0, &[0, 0])])],
            ineqs: vec![poly(2, &[(1.0, &[2, 0]), (1.0, &[0, 2]), (-4.0, &[0, 0])])],
        };
        let r = build_relaxation(&prob, 2).unwrap();
        let y = dirac_moments(&[1.0, 1.0], 2);
        for eq in &r.sdp.equalities {
            let v: f64 = eq.coeffs.iter().map(|&(k, c)| c * y[k]).sum();
            assert!((v - eq.rhs).abs() < 1e-12);
        }
        for b in &r.sdp.blocks {
            let f = b.assemble(&y);
            assert!(f.symmetric_eigenvalues().min() > -1e-10);
            // equality vectors lie in the kernel, so the face keeps the whole range
            if let Some(q) = &b.face {
                let back = q * (q.transpose() * &f * q) * q.transpose();
                assert!((back - &f).amax() < 1e-9);
            }
        }
        assert_eq!(r.first_moments(&y), vec![1.0, 1.0]);
        let m1 = r.moment_matrix(&y, 1);
        assert_eq!(m1.nrows(), 3);
        assert!((m1[(1, 2)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn min_x_squared_relaxation() {
        let p = unconstrained(poly(1, &[(1.0, &[2]), (-2.0, &[1]), (1.0, &[0])]));
        let r = build_relaxation(&p, 1).unwrap();
        let sol = solve_sdp(&r.sdp, &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.primal_obj.abs() < 1e-6);
        assert!((r.first_moments(&sol.moment_values)[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn face_drops_equality_directions() {
        // x = 0 removes the x column of M_1
        let prob = PolyOptProblem {
            nvars: 1,
            nx: 1,
            objective: poly(1, &[(1.0, &[2])]),
            eqs: vec![poly(1, &[(1.0, &[1])])],
            ineqs: vec![],
        };
        let r = build_relaxation(&prob, 1).unwrap();
        let q = r.sdp.blocks[0].face.as_ref().unwrap();
        assert_eq!(q.ncols(), 1);
        assert!(q[(1, 0)].abs() < 1e-12);
    }
}
