//! Discrete-time stability regions in controller-parameter space and
//! analytic-center controller selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{poly, Polynomial};
use crate::semialg::{rasterize, SemialgebraicSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    Schur3,
    Schur4 { a: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRegionSpec {
    pub kind: RegionKind,
    pub set: SemialgebraicSet,
}

impl StabilityRegionSpec {
    /// Characteristic polynomial coefficients `c_0 .. c_d` (ascending, monic)
    /// at the parameter point `x`.
    pub fn char_poly(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            RegionKind::Schur3 => vec![x[0], x[1], x[2], 1.0],
            RegionKind::Schur4 { a } => schur4_q(a, x),
        }
    }

    /// A box containing the whole region: coefficients of a Schur-stable
    /// monic polynomial of degree `d` satisfy `|c_k| < binomial(d, k)`.
    pub fn bounding_box(&self) -> Vec<[f64; 2]> {
        match self.kind {
            RegionKind::Schur3 => vec![[-1.0, 1.0], [-3.0, 3.0], [-3.0, 3.0]],
            RegionKind::Schur4 { a } => vec![[-1.0, 3.0], [-1.0 - a, 1.0 - a]],
        }
    }
}

fn schur4_q(a: f64, x: &[f64]) -> Vec<f64> {
    vec![a + x[1], a + x[0], 1.0 - 2.0 * x[1], 2.0 * (1.0 - x[0]), 1.0]
}

/// The region of monic cubics `z^3 + x3 z^2 + x2 z + x1` with all roots in
/// the closed unit disk.
pub fn schur3_region() -> StabilityRegionSpec {
    let ineqs = vec![
        Polynomial::affine(&[-1.0, -1.0, -1.0], -1.0),
        Polynomial::affine(&[1.0, -1.0, 1.0], -1.0),
        poly(3, &[(1.0, &[2, 0, 0]), (-1.0, &[1, 0, 1]), (1.0, &[0, 1, 0]), (-1.0, &[0, 0, 0])]),
    ];
    StabilityRegionSpec {
        kind: RegionKind::Schur3,
        set: SemialgebraicSet::new(3, ineqs).expect("three polynomials in three variables"),
    }
}

const SCHUR4_MAP: [[f64; 5]; 5] = [
    [-1.0, 1.0, -1.0, 1.0, -1.0],
    [4.0, -2.0, 0.0, 2.0, -4.0],
    [-6.0, 0.0, 2.0, 0.0, -6.0],
    [4.0, 2.0, 0.0, -2.0, -4.0],
    [-1.0, -1.0, -1.0, -1.0, -1.0],
];

/// Stability region of the closed loop with characteristic polynomial
/// `z^4 + 2(1-x1) z^3 + (1-2x2) z^2 + (a+x1) z + a + x2`.
pub fn schur4_region(a: f64) -> StabilityRegionSpec {
    // q_k as affine polynomials in (x1, x2)
    let q = [
        Polynomial::affine(&[0.0, 1.0], a),
        Polynomial::affine(&[1.0, 0.0], a),
        Polynomial::affine(&[0.0, -2.0], 1.0),
        Polynomial::affine(&[-2.0, 0.0], 2.0),
        Polynomial::constant(2, 1.0),
    ];
    let mut p: Vec<Polynomial> = SCHUR4_MAP
        .iter()
        .map(|row| {
            row.iter()
                .zip(&q)
                .fold(Polynomial::zero(2), |acc, (&w, qk)| acc.add(&qk.scale(w)).expect("same nvars"))
        })
        .collect();
    let mul = |a: &Polynomial, b: &Polynomial| a.mul(b).expect("same nvars");
    // the Jury determinant, normalized so that it is negative inside the region
    let p6 = mul(&mul(&p[1], &p[2]), &p[3])
        .scale(-1.0)
        .add(&mul(&mul(&p[1], &p[1]), &p[4]))
        .and_then(|s| s.add(&mul(&p[0], &mul(&p[3], &p[3]))))
        .expect("same nvars")
        .scale(-1.0 / 64.0);
    p.push(p6);
    StabilityRegionSpec {
        kind: RegionKind::Schur4 { a },
        set: SemialgebraicSet::new(2, p).expect("six polynomials in two variables"),
    }
}

/// Largest root modulus of the polynomial with ascending coefficients
/// `c_0 .. c_d` (`c_d != 0`), from the companion matrix eigenvalues.
pub fn spectral_radius(coeffs: &[f64]) -> f64 {
    // roots at the origin do not change the radius
    let lo = coeffs.iter().position(|&c| c != 0.0).unwrap_or(coeffs.len());
    let coeffs = &coeffs[lo.min(coeffs.len() - 1)..];
    let d = coeffs.len() - 1;
    if d == 0 {
        return 0.0;
    }
    let lead = coeffs[d];
    let mut comp = DMatrix::zeros(d, d);
    for i in 1..d {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..d {
        comp[(i, d - 1)] = -coeffs[i] / lead;
    }
    let radius = |m: DMatrix<f64>| {
        m.try_schur(f64::EPSILON, 10_000)
            .map(|s| s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
    };
    radius(comp.clone())
        .or_else(|| radius(comp.transpose()))
        .unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCenterResult {
    pub x_star: Vec<f64>,
    pub gradient_norm: f64,
    pub barrier_value: f64,
    pub iterations: usize,
}

fn barrier(polys: &[Polynomial], x: &[f64]) -> Option<f64> {
    let mut f = 0.0;
    for p in polys {
        let v = p.eval_unchecked(x);
        if !(v < 0.0) {
            return None;
        }
        f -= (-v).ln();
    }
    Some(f)
}

/// Minimize `-sum log(-p_k(x))` by damped Newton from a strictly feasible `x0`.
pub fn analytic_center(set: &SemialgebraicSet, x0: &[f64]) -> Result<AnalyticCenterResult> {
    set.validate()?;
    if x0.len() != set.n {
        return Err(Error::DimensionMismatch {
            expected: set.n,
            got: x0.len(),
        });
    }
    let polys = set.all_constraints();
    let n = set.n;
    let grads: Vec<_> = polys.iter().map(Polynomial::gradient).collect();
    let hess: Vec<_> = polys.iter().map(Polynomial::hessian).collect();
    let mut x = x0.to_vec();
    let Some(mut f) = barrier(&polys, &x) else {
        return Err(Error::Infeasible(format!("starting point {x0:?} is not strictly feasible")));
    };
    let mut gnorm = f64::INFINITY;
    for it in 0..500 {
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for k in 0..polys.len() {
            let s = -polys[k].eval_unchecked(&x);
            let gk = DVector::from_vec(grads[k].eval(&x)?);
            let hk = hess[k].eval(&x)?;
            g += &gk / s;
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += hk[i][j] / s + gk[i] * gk[j] / (s * s);
                }
            }
        }
        gnorm = g.norm();
        if gnorm <= 1e-8 {
            return Ok(AnalyticCenterResult {
                x_star: x,
                gradient_norm: gnorm,
                barrier_value: f,
                iterations: it,
            });
        }
        // shift until positive definite so the step is a descent direction
        let mut shift = 0.0;
        let dx = loop {
            let mut hs = h.clone();
            for i in 0..n {
                hs[(i, i)] += shift;
            }
            if let Some(c) = hs.cholesky() {
                break -c.solve(&g);
            }
            shift = if shift == 0.0 { 1e-8 * h.amax().max(1.0) } else { shift * 10.0 };
        };
        let slope = g.dot(&dx);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + t * d).collect();
            if let Some(ft) = barrier(&polys, &trial) {
                if ft <= f + 1e-4 * t * slope {
                    x = trial;
                    f = ft;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            // at machine precision the line search cannot make progress
            if gnorm <= 1e-6 {
                return Ok(AnalyticCenterResult {
                    x_star: x,
                    gradient_norm: gnorm,
                    barrier_value: f,
                    iterations: it,
                });
            }
            return Err(Error::NoConvergence {
                iters: it,
                reason: "line search failed".into(),
                best: Some(x),
            });
        }
    }
    Err(Error::NoConvergence {
        iters: 500,
        reason: format!("gradient norm {gnorm:.3e}"),
        best: Some(x),
    })
}

/// Root radii within this distance of 1 count as marginal. A `d`-fold root
/// on the unit circle is only resolved to about `eps^(1/d)`.
pub const MARGINAL_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub samples: usize,
    pub inside: usize,
    pub stable: usize,
    /// Inside points whose root radius is within the tolerance of 1.
    pub marginal: usize,
    pub violations: Vec<Vec<f64>>,
    pub max_radius: f64,
}

/// Check every raster point of `region` (over the spec's bounding box) for
/// Schur stability of its characteristic polynomial.
pub fn verify_stability_sampling(spec: &StabilityRegionSpec, region: &SemialgebraicSet, resolution: usize) -> Result<SamplingReport> {
    let bbox = spec.bounding_box();
    let raster = rasterize(region, &bbox, &vec![resolution; bbox.len()])?;
    let tol = MARGINAL_TOL;
    let mut rep = SamplingReport {
        samples: raster.len(),
        inside: 0,
        stable: 0,
        marginal: 0,
        violations: Vec::new(),
        max_radius: 0.0,
    };
    for (x, inside) in raster.points() {
        if !inside {
            continue;
        }
        rep.inside += 1;
        let rho = spectral_radius(&spec.char_poly(&x));
        rep.max_radius = rep.max_radius.max(rho);
        if (rho - 1.0).abs() <= tol {
            rep.marginal += 1;
        } else if rho < 1.0 {
            rep.stable += 1;
        } else {
            rep.violations.push(x);
        }
    }
    Ok(rep)
}
