//! Trajectory optimization for the double integrator through its flat output.
//!
//! The flat output `f` is a clamped cubic B-spline; the state is
//! `(x1, x2) = (f, f')` and the input is `u = f''`. Path constraints
//! `p(x1, x2) <= 0` are enforced at the midpoints of `N` equal subintervals
//! and the program is solved in the null space of the boundary conditions by
//! a log-barrier method with a phase-one start.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{PolyMatrix, PolyVector, Polynomial};
use crate::semialg::SemialgebraicSet;

/// Clamped B-spline basis with uniform interior knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub segments: usize,
    pub degree: usize,
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(segments: usize, degree: usize, t0: f64, tf: f64) -> Result<Self> {
        if segments == 0 || !(tf > t0) {
            return Err(Error::InvalidArgument(format!(
                "need at least one segment and t0 < tf, got {segments} segments on [{t0}, {tf}]"
            )));
        }
        let mut knots = vec![t0; degree];
        for s in 0..=segments {
            knots.push(t0 + (tf - t0) * s as f64 / segments as f64);
        }
        *knots.last_mut().expect("nonempty") = tf;
        knots.extend(std::iter::repeat_n(tf, degree));
        Ok(BSplineBasis { segments, degree, knots })
    }

    /// Five cubic segments.
    pub fn standard(t0: f64, tf: f64) -> Result<Self> {
        Self::new(5, 3, t0, tf)
    }

    pub fn len(&self) -> usize {
        self.segments + self.degree
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t0(&self) -> f64 {
        self.knots[0]
    }

    pub fn tf(&self) -> f64 {
        *self.knots.last().expect("nonempty")
    }

    /// `deriv`-th derivatives of all basis functions at `t`.
    pub fn row(&self, t: f64, deriv: usize) -> Result<Vec<f64>> {
        if !(t >= self.t0() && t <= self.tf()) {
            return Err(Error::InvalidArgument(format!(
                "t = {t} outside [{}, {}]",
                self.t0(),
                self.tf()
            )));
        }
        if deriv > self.degree {
            return Err(Error::InvalidArgument(format!("derivative order {deriv} above degree {}", self.degree)));
        }
        let u = &self.knots;
        // degree-0 functions: the span containing t, the last nonempty span at tf
        let mut cur: Vec<f64> = (0..u.len() - 1)
            .map(|i| {
                let inside = u[i] <= t && t < u[i + 1];
                let at_end = t == self.tf() && u[i] < u[i + 1] && u[i + 1] == self.tf();
                if inside || at_end {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        for p in 1..=self.degree {
            let differentiate = p > self.degree - deriv;
            cur = (0..cur.len() - 1)
                .map(|i| {
                    if differentiate {
                        p as f64 * (ratio(cur[i], u[i + p] - u[i]) - ratio(cur[i + 1], u[i + p + 1] - u[i + 1]))
                    } else {
                        ratio(t - u[i], u[i + p] - u[i]) * cur[i] + ratio(u[i + p + 1] - t, u[i + p + 1] - u[i + 1]) * cur[i + 1]
                    }
                })
                .collect();
        }
        Ok(cur)
    }
}

/// `f`, `f'` or `f''` of the spline with coefficients `alpha`.
pub fn bspline_eval(basis: &BSplineBasis, alpha: &[f64], t: f64, deriv: usize) -> Result<f64> {
    if alpha.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            got: alpha.len(),
        });
    }
    Ok(basis.row(t, deriv)?.iter().zip(alpha).map(|(b, a)| b * a).sum())
}

/// How the input energy is summed over the constraint instants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConvention {
    /// `sum u(t_i)^2 dt`, a midpoint rule for the energy integral.
    #[default]
    Weighted,
    /// `sum u(t_i)^2`.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatProgram {
    pub basis: BSplineBasis,
    pub x0: [f64; 2],
    pub xf: [f64; 2],
    pub instants: Vec<f64>,
    pub constraints: Vec<Polynomial>,
    pub cost: CostConvention,
}

/// Program for steering `x0` at `t0` to `xf` at `tf` inside `set`,
/// constrained at `n` midpoint instants.
pub fn build_flat_program(x0: [f64; 2], xf: [f64; 2], t0: f64, tf: f64, n: usize, set: &SemialgebraicSet) -> Result<FlatProgram> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one constraint instant".into()));
    }
    if set.n != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: set.n });
    }
    for (name, x) in [("initial", x0), ("final", xf)] {
        if !set.contains(&x, 0.0)? {
            return Err(Error::Infeasible(format!("{name} state {x:?} is outside the constraint set")));
        }
    }
    let basis = BSplineBasis::standard(t0, tf)?;
    let dt = (tf - t0) / n as f64;
    Ok(FlatProgram {
        basis,
        x0,
        xf,
        instants: (0..n).map(|i| t0 + (i as f64 + 0.5) * dt).collect(),
        constraints: set.all_constraints(),
        cost: CostConvention::Weighted,
    })
}

impl FlatProgram {
    /// The same program without path constraints.
    pub fn unconstrained(&self) -> FlatProgram {
        FlatProgram {
            constraints: Vec::new(),
            ..self.clone()
        }
    }

    fn weight(&self) -> f64 {
        match self.cost {
            CostConvention::Weighted => (self.basis.tf() - self.basis.t0()) / self.instants.len() as f64,
            CostConvention::Literal => 1.0,
        }
    }

    pub fn cost(&self, alpha: &[f64]) -> f64 {
        let w = self.weight();
        self.instants
            .iter()
            .map(|&t| bspline_eval(&self.basis, alpha, t, 2).expect("instant inside window").powi(2) * w)
            .sum()
    }

    /// Largest constraint value over `times`.
    pub fn violation_at(&self, alpha: &[f64], times: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &t in times {
            let x = [
                bspline_eval(&self.basis, alpha, t, 0).expect("inside window"),
                bspline_eval(&self.basis, alpha, t, 1).expect("inside window"),
            ];
            for p in &self.constraints {
                worst = worst.max(p.eval_unchecked(&x));
            }
        }
        worst
    }

    /// Boundary residual `max |x(t0) - x0|, |x(tf) - xf|`.
    pub fn boundary_error(&self, alpha: &[f64]) -> f64 {
        let b = &self.basis;
        let ev = |t, d| bspline_eval(b, alpha, t, d).expect("endpoint");
        [
            ev(b.t0(), 0) - self.x0[0],
            ev(b.t0(), 1) - self.x0[1],
            ev(b.tf(), 0) - self.xf[0],
            ev(b.tf(), 1) - self.xf[1],
        ]
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajoptOptions {
    /// Number of starts; the first is the straight-line initialization and
    /// the others perturb it.
    pub starts: usize,
    pub perturbation: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Default for TrajoptOptions {
    fn default() -> Self {
        TrajoptOptions {
            starts: 1,
            perturbation: 0.3,
            seed: 0,
            tol: 1e-9,
        }
    }
}

impl TrajoptOptions {
    /// Five starts, for programs over nonconvex sets.
    pub fn multistart() -> Self {
        TrajoptOptions {
            starts: 5,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub alpha_star: Vec<f64>,
    pub cost: f64,
    pub max_constraint_violation: f64,
    pub boundary_error: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub starts_converged: usize,
}

/// Affine reparametrization `alpha = alpha_p + Z w` of the boundary conditions.
struct Reduced {
    alpha_p: DVector<f64>,
    z: DMatrix<f64>,
}

impl Reduced {
    fn new(fp: &FlatProgram) -> Result<Self> {
        let b = &fp.basis;
        let n = b.len();
        let rows = [b.row(b.t0(), 0)?, b.row(b.t0(), 1)?, b.row(b.tf(), 0)?, b.row(b.tf(), 1)?];
        let e = DMatrix::from_fn(4, n, |i, j| rows[i][j]);
        let rhs = DVector::from_column_slice(&[fp.x0[0], fp.x0[1], fp.xf[0], fp.xf[1]]);
        let svd = e.clone().svd(true, true);
        let alpha_p = svd
            .solve(&rhs, 1e-12)
            .map_err(|m| Error::InvalidArgument(format!("boundary conditions: {m}")))?;
        let vt = svd.v_t.expect("v requested");
        // full right singular basis: complete the row space with a QR of its transpose
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12).count();
        let vr = vt.rows(0, rank).transpose();
        let mut q = DMatrix::identity(n, n);
        vr.qr().q_tr_mul(&mut q);
        let z = q.rows(rank, n - rank).transpose();
        Ok(Reduced { alpha_p, z })
    }

    fn alpha(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.alpha_p + &self.z * w
    }

    fn project(&self, alpha: &DVector<f64>) -> DVector<f64> {
        self.z.tr_mul(&(alpha - &self.alpha_p))
    }
}

/// A smooth function with value, gradient and Hessian.
type Smooth<'a> = Box<dyn Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) + 'a>;

/// Path constraint `p(A v + b) <= 0` composed with an affine map.
struct PathConstraint<'a> {
    p: &'a Polynomial,
    grad: &'a PolyVector,
    hess: &'a PolyMatrix,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl PathConstraint<'_> {
    fn eval(&self, v: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let x = &self.a * v + &self.b;
        let xs = x.as_slice();
        let g = DVector::from_iterator(x.len(), self.grad.0.iter().map(|q| q.eval_unchecked(xs)));
        let h = DMatrix::from_fn(x.len(), x.len(), |i, j| self.hess.get(i, j).eval_unchecked(xs));
        (self.p.eval_unchecked(xs), self.a.tr_mul(&g), self.a.tr_mul(&(h * &self.a)))
    }
}

struct BarrierOutcome {
    v: DVector<f64>,
    newton_steps: usize,
}

/// Minimize `obj` over `{cons_j < 0}` from a strictly feasible `v0`.
/// `stop` may end the run early after any Newton step.
fn barrier(obj: &Smooth, cons: &[Smooth], v0: DVector<f64>, tol: f64, stop: &dyn Fn(&DVector<f64>) -> bool) -> Result<BarrierOutcome> {
    let m = cons.len().max(1) as f64;
    let mut v = v0;
    let mut steps = 0;
    let phi = |v: &DVector<f64>, t: f64| -> Option<f64> {
        let mut s = t * obj(v).0;
        for c in cons {
            let val = c(v).0;
            if !(val < 0.0) {
                return None;
            }
            s -= (-val).ln();
        }
        Some(s)
    };
    let f0 = obj(&v).0.abs().max(1.0);
    let mut t = m / f0;
    for _outer in 0..60 {
        for _ in 0..200 {
            let (_, gf, hf) = obj(&v);
            let mut g = gf * t;
            let mut h = hf * t;
            for c in cons {
                let (val, gc, hc) = c(&v);
                let s = -val;
                g += &gc / s;
                h += &gc * gc.transpose() / (s * s) + hc / s;
            }
            // modified Newton: floor the spectrum so the step is a descent direction
            let eig = h.clone().symmetric_eigen();
            let lmax = eig.eigenvalues.amax().max(1e-300);
            let floor = 1e-10 * lmax;
            let mut hinv_g = DVector::zeros(v.len());
            for k in 0..v.len() {
                let q = eig.eigenvectors.column(k);
                hinv_g += q * (q.dot(&g) / eig.eigenvalues[k].abs().max(floor));
            }
            let dec = g.dot(&hinv_g);
            if dec / 2.0 <= 1e-12 {
                break;
            }
            let cur = phi(&v, t).expect("iterate stays strictly feasible");
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-14 {
                let cand = &v - &hinv_g * step;
                if let Some(val) = phi(&cand, t) {
                    if val <= cur - 0.25 * step * dec {
                        v = cand;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            if stop(&v) {
                return Ok(BarrierOutcome { v, newton_steps: steps });
            }
            if !moved {
                break;
            }
        }
        if m / t < tol * obj(&v).0.abs().max(1.0) {
            return Ok(BarrierOutcome { v, newton_steps: steps });
        }
        t *= 50.0;
    }
    Err(Error::NoConvergence {
        iters: steps,
        reason: "barrier parameter did not reach the tolerance".into(),
        best: Some(v.iter().copied().collect()),
    })
}

/// Coefficients of the straight line from `x0[0]` to `xf[0]`, moved onto the
/// boundary conditions.
fn straight_line(fp: &FlatProgram, red: &Reduced) -> DVector<f64> {
    let n = fp.basis.len();
    let line = DVector::from_fn(n, |k, _| fp.x0[0] + (fp.xf[0] - fp.x0[0]) * k as f64 / (n - 1) as f64);
    red.project(&line)
}

struct Problem<'a> {
    red: Reduced,
    quad_h: DMatrix<f64>,
    quad_g: DVector<f64>,
    quad_c: f64,
    paths: Vec<PathConstraint<'a>>,
}

fn setup<'a>(fp: &FlatProgram, derivs: &'a [(Polynomial, PolyVector, PolyMatrix)]) -> Result<Problem<'a>> {
    let red = Reduced::new(fp)?;
    let d = red.z.ncols();
    let w = fp.weight();
    // cost = sum w (r2 alpha)^2 = w |D (alpha_p + Z w)|^2
    let mut quad_h = DMatrix::zeros(d, d);
    let mut quad_g = DVector::zeros(d);
    let mut quad_c = 0.0;
    let mut paths = Vec::new();
    for &t in &fp.instants {
        let r0 = DVector::from_vec(fp.basis.row(t, 0)?);
        let r1 = DVector::from_vec(fp.basis.row(t, 1)?);
        let r2 = DVector::from_vec(fp.basis.row(t, 2)?);
        let zr2 = red.z.tr_mul(&r2);
        let c2 = r2.dot(&red.alpha_p);
        quad_h += &zr2 * zr2.transpose() * (2.0 * w);
        quad_g += &zr2 * (2.0 * w * c2);
        quad_c += w * c2 * c2;
        let zr0 = red.z.tr_mul(&r0);
        let zr1 = red.z.tr_mul(&r1);
        let a = DMatrix::from_fn(2, d, |i, j| if i == 0 { zr0[j] } else { zr1[j] });
        let b = DVector::from_column_slice(&[r0.dot(&red.alpha_p), r1.dot(&red.alpha_p)]);
        for (p, grad, hess) in derivs {
            paths.push(PathConstraint {
                p,
                grad,
                hess,
                a: a.clone(),
                b: b.clone(),
            });
        }
    }
    Ok(Problem {
        red,
        quad_h,
        quad_g,
        quad_c,
        paths,
    })
}

impl Problem<'_> {
    /// Strictly feasible point near `w0`, by minimizing the largest
    /// constraint value (with a floor at -1) until it is negative.
    fn phase_one(&self, w0: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize)> {
        let d = w0.len();
        let worst = self
            .paths
            .iter()
            .map(|c| c.eval(w0).0)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < 0.0 {
            return Ok((w0.clone(), 0));
        }
        let v0 = w0.clone().insert_row(d, worst + 1.0);
        let obj: Smooth = Box::new(move |v: &DVector<f64>| {
            let mut g = DVector::zeros(d + 1);
            g[d] = 1.0;
            (v[d], g, DMatrix::zeros(d + 1, d + 1))
        });
        let mut cons: Vec<Smooth> = self
            .paths
            .iter()
            .map(|c| {
                Box::new(move |v: &DVector<f64>| {
                    let w = v.rows(0, d).into_owned();
                    let (val, g, h) = c.eval(&w);
                    let gg = g.insert_row(d, -1.0);
                    let hh = h.insert_row(d, 0.0).insert_column(d, 0.0);
                    (val - v[d], gg, hh)
                }) as Smooth
            })
            .collect();
        cons.push(Box::new(move |v: &DVector<f64>| {
            let mut g = DVector::zeros(d + 1);
            g[d] = -1.0;
            (-1.0 - v[d], g, DMatrix::zeros(d + 1, d + 1))
        }));
        let feasible = |v: &DVector<f64>| {
            let w = v.rows(0, d).into_owned();
            self.paths.iter().all(|c| c.eval(&w).0 < -1e-9)
        };
        let out = barrier(&obj, &cons, v0, tol, &feasible)?;
        let w = out.v.rows(0, d).into_owned();
        if !self.paths.iter().all(|c| c.eval(&w).0 < 0.0) {
            return Err(Error::Infeasible(format!(
                "phase one ended with largest constraint value {:.3e}",
                out.v[d]
            )));
        }
        Ok((w, out.newton_steps))
    }

    fn solve_from(&self, w0: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize)> {
        let (w, n1) = self.phase_one(w0, tol)?;
        let obj: Smooth = Box::new(|w: &DVector<f64>| {
            let hw = &self.quad_h * w;
            (0.5 * w.dot(&hw) + self.quad_g.dot(w) + self.quad_c, hw + &self.quad_g, self.quad_h.clone())
        });
        let cons: Vec<Smooth> = self
            .paths
            .iter()
            .map(|c| Box::new(move |w: &DVector<f64>| c.eval(w)) as Smooth)
            .collect();
        let out = barrier(&obj, &cons, w, tol, &|_| false)?;
        Ok((out.v, n1 + out.newton_steps))
    }
}

/// Solve `fp` from the straight-line start, plus perturbed starts when
/// `opts.starts > 1`, and keep the cheapest converged run.
pub fn solve_flat_program(fp: &FlatProgram, opts: &TrajoptOptions) -> Result<TrajectoryResult> {
    let clock = Instant::now();
    let derivs: Vec<(Polynomial, PolyVector, PolyMatrix)> =
        fp.constraints.iter().map(|p| (p.clone(), p.gradient(), p.hessian())).collect();
    let prob = setup(fp, &derivs)?;
    let w_line = straight_line(fp, &prob.red);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.perturbation.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut iterations = 0;
    let mut converged = 0;
    let mut failures = Vec::new();
    for s in 0..opts.starts.max(1) {
        let w0 = if s == 0 {
            w_line.clone()
        } else {
            w_line.map(|v| v + normal.sample(&mut rng))
        };
        match prob.solve_from(&w0, opts.tol) {
            Ok((w, it)) => {
                iterations += it;
                converged += 1;
                let alpha = prob.red.alpha(&w);
                let cost = fp.cost(alpha.as_slice());
                log::debug!("start {s}: cost {cost} after {it} Newton steps");
                if best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, alpha));
                }
            }
            Err(e) => {
                log::debug!("start {s} failed: {e}");
                failures.push(format!("start {s}: {e}"));
            }
        }
    }
    let Some((cost, alpha)) = best else {
        return Err(Error::NoConvergence {
            iters: iterations,
            reason: failures.join("; "),
            best: None,
        });
    };
    let alpha: Vec<f64> = alpha.iter().copied().collect();
    Ok(TrajectoryResult {
        max_constraint_violation: fp.violation_at(&alpha, &fp.instants).max(0.0),
        boundary_error: fp.boundary_error(&alpha),
        cost,
        alpha_star: alpha,
        iterations,
        wall_time: clock.elapsed().as_secs_f64(),
        starts_converged: converged,
    })
}

/// Initial and final states and horizon of the waterdrop demonstration.
pub const DEMO_X0: [f64; 2] = [0.3, -0.8];
pub const DEMO_XF: [f64; 2] = [-0.3, -0.8];
pub const DEMO_T0: f64 = 0.0;
pub const DEMO_TF: f64 = 2.5;

/// Samples `(t, x1, x2, u)` of a solution at `count` equally spaced times.
pub fn sample_trajectory(fp: &FlatProgram, alpha: &[f64], count: usize) -> Result<Vec<[f64; 4]>> {
    let b = &fp.basis;
    let count = count.max(2);
    (0..count)
        .map(|k| {
            let t = b.t0() + (b.tf() - b.t0()) * k as f64 / (count - 1) as f64;
            Ok([
                t,
                bspline_eval(b, alpha, t, 0)?,
                bspline_eval(b, alpha, t, 1)?,
                bspline_eval(b, alpha, t, 2)?,
            ])
        })
        .collect()
}
