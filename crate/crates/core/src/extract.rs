//! Certification of global optima from moment relaxations: flat truncation
//! detection, minimizer extraction and the order hierarchy loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::PolyOptProblem;
use crate::moment::{build_relaxation, min_relaxation_order, Relaxation};
use crate::poly::{Monomial, Polynomial};
use crate::sdp::{solve_sdp, SdpOptions, SdpStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Infeasible,
    BoundOnly,
    Certified,
}

impl Status {
    /// `-1` infeasible, `0` bound only, `+1` certified.
    pub fn code(self) -> i32 {
        match self {
            Status::Infeasible => -1,
            Status::BoundOnly => 0,
            Status::Certified => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyOptions {
    /// Defaults to the smallest admissible order.
    pub min_order: Option<usize>,
    pub max_order: usize,
    /// Relative singular value threshold for numerical rank.
    pub rank_tol: f64,
    pub feas_tol: f64,
    /// Relative tolerance between a verified point's value and the bound.
    pub obj_tol: f64,
    pub sdp: SdpOptions,
    /// Also search a relaxation with the objective tilted in `x` when the
    /// untilted one yields no certificate.
    pub perturb: bool,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            min_order: None,
            max_order: 5,
            rank_tol: 1e-6,
            feas_tol: 1e-6,
            obj_tol: 1e-5,
            sdp: SdpOptions::default(),
            perturb: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    /// The full point (all problem variables).
    pub z: Vec<f64>,
    /// The ambient coordinates, i.e. the first `nx` entries of `z`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_residual: f64,
    pub ineq_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub order: usize,
    pub sdp_status: SdpStatus,
    pub lower_bound: f64,
    /// Numerical ranks of `M_0 .. M_k`.
    pub ranks: Vec<usize>,
    pub flat_at: Option<usize>,
    pub perturbed: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMethod {
    FlatExtension,
    LocalRefinement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedOptimum {
    pub status: Status,
    /// Best lower bound from the hierarchy (`+inf` when infeasible, `NaN` if
    /// no relaxation solved).
    pub lower_bound: f64,
    pub order: Option<usize>,
    pub minimizers: Vec<Minimizer>,
    /// Set when minimizers are listed once per `(x, y)`, `(x, -y)` pair.
    pub antipodal_merged: bool,
    pub method: Option<CertMethod>,
    pub records: Vec<OrderRecord>,
}

pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax <= 1e-12 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rank_tol * smax).count()
}

/// Ranks of `M_0 .. M_k` at the moment vector `y`.
pub fn moment_ranks(relax: &Relaxation, y: &[f64], rank_tol: f64) -> Vec<usize> {
    (0..=relax.order)
        .map(|t| numerical_rank(&relax.moment_matrix(y, t), rank_tol))
        .collect()
}

/// Largest `t` in `1..=k` with `rank M_t = rank M_{t-1}`, with that rank.
pub fn check_flatness(relax: &Relaxation, y: &[f64], rank_tol: f64) -> Option<(usize, usize)> {
    let ranks = moment_ranks(relax, y, rank_tol);
    (1..=relax.order)
        .rev()
        .find(|&t| ranks[t] == ranks[t - 1] && ranks[t] > 0)
        .map(|t| (t, ranks[t]))
}

/// Extract `rank` atoms from a flat moment matrix `M_t`.
pub fn extract_minimizers(relax: &Relaxation, y: &[f64], t: usize, rank: usize, seed: u64) -> Option<Vec<Vec<f64>>> {
    let nv = relax.nvars;
    let basis = Monomial::all_up_to(nv, t as u32);
    let m = relax.moment_matrix(y, t);
    let s = basis.len();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let r = rank;
    if r == 0 || r > s {
        return None;
    }
    // V = U_r sqrt(S_r), rows indexed by the basis
    let mut v = DMatrix::zeros(s, r);
    for (c, &i) in order.iter().take(r).enumerate() {
        let lam = eig.eigenvalues[i].max(0.0).sqrt();
        for row in 0..s {
            v[(row, c)] = eig.eigenvectors[(row, i)] * lam;
        }
    }
    // column echelon form of V: row echelon of V' with pivots taken in basis order
    let mut w = v.transpose();
    let tol = 1e-6 * w.amax().max(1e-300);
    let mut pivots: Vec<usize> = Vec::new();
    let mut prow = 0;
    for col in 0..s {
        if prow == r {
            break;
        }
        let (best, val) = (prow..r)
            .map(|i| (i, w[(i, col)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if val <= tol {
            for i in prow..r {
                w[(i, col)] = 0.0;
            }
            continue;
        }
        w.swap_rows(prow, best);
        let piv = w[(prow, col)];
        for j in 0..s {
            w[(prow, j)] /= piv;
        }
        for i in 0..r {
            if i != prow {
                let f = w[(i, col)];
                if f != 0.0 {
                    for j in 0..s {
                        w[(i, j)] -= f * w[(prow, j)];
                    }
                }
            }
        }
        pivots.push(col);
        prow += 1;
    }
    if pivots.len() != r {
        return None;
    }
    let u = w.transpose();
    let pos: std::collections::HashMap<&Monomial, usize> = basis.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut mult: Vec<DMatrix<f64>> = Vec::with_capacity(nv);
    for i in 0..nv {
        let xi = Monomial::var(nv, i);
        let mut ni = DMatrix::zeros(r, r);
        for (j, &p) in pivots.iter().enumerate() {
            let row = *pos.get(&basis[p].mul(&xi))?;
            for c in 0..r {
                ni[(j, c)] = u[(row, c)];
            }
        }
        mult.push(ni);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lam: Vec<f64> = (0..nv).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|l| *l /= total);
    let mut comb = DMatrix::zeros(r, r);
    for (l, ni) in lam.iter().zip(&mult) {
        comb += ni * *l;
    }
    let schur = comb.schur();
    let (q, _) = schur.unpack();
    let mut points = Vec::with_capacity(r);
    for j in 0..r {
        let qj = q.column(j);
        let pt: Vec<f64> = mult.iter().map(|ni| qj.dot(&(ni * qj))).collect();
        if pt.iter().any(|v| !v.is_finite()) {
            return None;
        }
        points.push(pt);
    }
    Some(points)
}

/// Gauss-Newton projection onto the equalities and the nearly active
/// inequalities.
pub fn polish(prob: &PolyOptProblem, z0: &[f64]) -> Vec<f64> {
    let mut z = DVector::from_column_slice(z0);
    let active: Vec<&Polynomial> = prob
        .ineqs
        .iter()
        .filter(|g| g.eval_unchecked(z0) > -1e-3 * (1.0 + g.max_abs_coeff()))
        .collect();
    let cons: Vec<&Polynomial> = prob.eqs.iter().chain(active.iter().copied()).collect();
    if cons.is_empty() {
        return z0.to_vec();
    }
    let grads: Vec<Vec<Polynomial>> = cons.iter().map(|c| c.gradient().0).collect();
    for _ in 0..30 {
        let r = DVector::from_iterator(cons.len(), cons.iter().map(|c| c.eval_unchecked(z.as_slice())));
        if r.amax() < 1e-14 {
            break;
        }
        let j = DMatrix::from_fn(cons.len(), z.len(), |a, b| grads[a][b].eval_unchecked(z.as_slice()));
        let svd = j.svd(true, true);
        let smax = svd.singular_values.max();
        let Ok(dz) = svd.solve(&r, 1e-10 * smax.max(1e-300)) else {
            break;
        };
        let trial = &z - &dz;
        let rt = cons.iter().map(|c| c.eval_unchecked(trial.as_slice()).abs()).fold(0.0, f64::max);
        if !(rt < r.amax()) {
            break;
        }
        z = trial;
    }
    z.iter().copied().collect()
}

fn canonical_direction(z: &mut [f64], nx: usize) -> bool {
    let first = z[nx..].iter().copied().find(|v| v.abs() > 1e-8);
    if first.is_some_and(|v| v < 0.0) {
        z[nx..].iter_mut().for_each(|v| *v = -*v);
        true
    } else {
        false
    }
}

fn verify_points(prob: &PolyOptProblem, pts: Vec<Vec<f64>>, bound: f64, opts: &CertifyOptions) -> (Vec<Minimizer>, bool, bool) {
    let mut out: Vec<Minimizer> = Vec::new();
    let mut all_ok = !pts.is_empty();
    let scale = 1.0 + bound.abs();
    for p in pts {
        let mut z = polish(prob, &p);
        let (eq, ineq) = prob.violation(&z);
        let f = prob.objective_at(&z);
        let ok = eq <= opts.feas_tol && ineq <= opts.feas_tol && (f - bound).abs() <= opts.obj_tol * scale;
        if !ok {
            log::debug!("rejected atom {z:?}: eq {eq:.2e} ineq {ineq:.2e} f {f} bound {bound}");
            all_ok = false;
            continue;
        }
        if prob.has_direction() {
            canonical_direction(&mut z, prob.nx);
        }
        let dup = out
            .iter()
            .any(|m| m.z.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-5);
        if dup {
            continue;
        }
        out.push(Minimizer {
            x: z[..prob.nx].to_vec(),
            z,
            objective: f,
            eq_residual: eq,
            ineq_violation: ineq,
        });
    }
    let merged = prob.has_direction() && !out.is_empty();
    (out, all_ok, merged)
}

fn tilted(prob: &PolyOptProblem, seed: u64) -> PolyOptProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let eps = 1e-3 * prob.objective.max_abs_coeff().max(1.0);
    let mut obj = prob.objective.clone();
    for j in 0..prob.nx {
        obj.add_term(Monomial::var(prob.nvars, j), eps * (2.0 * rng.random::<f64>() - 1.0));
    }
    PolyOptProblem {
        objective: obj,
        ..prob.clone()
    }
}

/// Local descent from `z0`: gradient steps projected onto the tangent space
/// of the equalities and active inequalities, each followed by [`polish`].
pub fn refine(prob: &PolyOptProblem, z0: &[f64]) -> Vec<f64> {
    let n = prob.nvars;
    let mut z = polish(prob, z0);
    let feasible = |z: &[f64]| {
        let (eq, ineq) = prob.violation(z);
        eq <= 1e-10 && ineq <= 1e-10
    };
    if !feasible(&z) {
        return z;
    }
    let gf = prob.objective.gradient();
    let eq_grads: Vec<_> = prob.eqs.iter().map(Polynomial::gradient).collect();
    let in_grads: Vec<_> = prob.ineqs.iter().map(Polynomial::gradient).collect();
    let mut f = prob.objective_at(&z);
    for _ in 0..300 {
        let mut rows: Vec<Vec<f64>> = eq_grads.iter().map(|g| g.0.iter().map(|p| p.eval_unchecked(&z)).collect()).collect();
        for (g, gg) in prob.ineqs.iter().zip(&in_grads) {
            if g.eval_unchecked(&z) > -1e-8 {
                rows.push(gg.0.iter().map(|p| p.eval_unchecked(&z)).collect());
            }
        }
        let grad = DVector::from_iterator(n, gf.0.iter().map(|p| p.eval_unchecked(&z)));
        let mut d = -grad.clone();
        if !rows.is_empty() {
            let j = DMatrix::from_fn(rows.len(), n, |a, b| rows[a][b]);
            let svd = j.svd(false, true);
            let vt = svd.v_t.expect("v requested");
            let smax = svd.singular_values.max();
            for (i, &sv) in svd.singular_values.iter().enumerate() {
                if sv > 1e-10 * smax {
                    let v = vt.row(i).transpose();
                    d -= &v * v.dot(&d);
                }
            }
        }
        let dn = d.norm();
        if dn <= 1e-12 * (1.0 + grad.norm()) {
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
            let trial = polish(prob, &trial);
            if feasible(&trial) {
                let ft = prob.objective_at(&trial);
                if ft < f - 1e-4 * t * dn * dn {
                    z = trial;
                    f = ft;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    z
}

/// Candidate points from a moment vector that need not be flat: atoms
/// extracted with the rank read at a loose threshold, plus the mean.
fn approximate_atoms(relax: &Relaxation, y: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let ranks = moment_ranks(relax, y, 1e-3);
    let mut pts = vec![relax.first_moments(y)];
    for t in (2..=relax.order).rev() {
        if let Some(atoms) = extract_minimizers(relax, y, t, ranks[t - 1], seed) {
            pts.extend(atoms);
            break;
        }
    }
    pts
}

/// Try to read off verified minimizers from a solved relaxation.
fn try_extract(
    prob: &PolyOptProblem,
    relax: &Relaxation,
    y: &[f64],
    bound: f64,
    opts: &CertifyOptions,
) -> (Vec<usize>, Option<usize>, Option<(Vec<Minimizer>, bool)>) {
    let ranks = moment_ranks(relax, y, opts.rank_tol);
    let flat = (1..=relax.order).rev().find(|&t| ranks[t] == ranks[t - 1] && ranks[t] > 0);
    let Some(t) = flat else {
        return (ranks, None, None);
    };
    let found = extract_minimizers(relax, y, t, ranks[t], opts.seed).and_then(|pts| {
        let (mins, all_ok, merged) = verify_points(prob, pts, bound, opts);
        (all_ok && !mins.is_empty()).then_some((mins, merged))
    });
    (ranks, Some(t), found)
}

/// Refine approximate atoms locally and keep those that attain `bound`.
fn try_refine(
    prob: &PolyOptProblem,
    relax: &Relaxation,
    y: &[f64],
    bound: f64,
    opts: &CertifyOptions,
) -> Option<(Vec<Minimizer>, bool)> {
    let pts: Vec<Vec<f64>> = approximate_atoms(relax, y, opts.seed)
        .iter()
        .map(|p| refine(prob, p))
        .collect();
    let (mins, _, merged) = verify_points(prob, pts, bound, opts);
    (!mins.is_empty()).then_some((mins, merged))
}

fn certified(bound: f64, k: usize, found: (Vec<Minimizer>, bool), method: CertMethod, records: Vec<OrderRecord>) -> CertifiedOptimum {
    CertifiedOptimum {
        status: Status::Certified,
        lower_bound: bound,
        order: Some(k),
        minimizers: found.0,
        antipodal_merged: found.1,
        method: Some(method),
        records,
    }
}

/// Run the moment hierarchy on `prob` from the minimal order up to
/// `opts.max_order`, stopping at the first certificate.
///
/// A certificate is a lower bound from a relaxation together with verified
/// feasible points attaining it. Points come from flat extension when the
/// moment matrix is flat, and otherwise from local refinement of approximate
/// atoms, of the relaxation itself or of one with the objective slightly
/// tilted in `x` (which singles out a point of a continuum of minimizers).
pub fn certify(prob: &PolyOptProblem, opts: &CertifyOptions) -> CertifiedOptimum {
    let kmin = opts.min_order.unwrap_or(0).max(min_relaxation_order(prob));
    let mut records = Vec::new();
    let mut best = f64::NAN;
    let mut best_order = None;
    for k in kmin..=opts.max_order.max(kmin) {
        let relax = match build_relaxation(prob, k) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("relaxation order {k}: {e}");
                break;
            }
        };
        let sol = solve_sdp(&relax.sdp, &opts.sdp);
        log::debug!(
            "order {k}: {:?} bound {} in {} iterations",
            sol.status,
            sol.primal_obj,
            sol.iterations
        );
        let mut rec = OrderRecord {
            order: k,
            sdp_status: sol.status,
            lower_bound: sol.primal_obj,
            ranks: Vec::new(),
            flat_at: None,
            perturbed: false,
            iterations: sol.iterations,
        };
        match sol.status {
            SdpStatus::Infeasible => {
                records.push(rec);
                return CertifiedOptimum {
                    status: Status::Infeasible,
                    lower_bound: f64::INFINITY,
                    order: Some(k),
                    minimizers: Vec::new(),
                    antipodal_merged: false,
                    method: None,
                    records,
                };
            }
            SdpStatus::Optimal => {}
            _ => {
                records.push(rec);
                continue;
            }
        }
        let bound = sol.primal_obj;
        if best.is_nan() || bound > best {
            best = bound;
            best_order = Some(k);
        }
        let (ranks, flat, found) = try_extract(prob, &relax, &sol.moment_values, bound, opts);
        rec.ranks = ranks;
        rec.flat_at = flat;
        records.push(rec);
        if let Some(found) = found {
            return certified(bound, k, found, CertMethod::FlatExtension, records);
        }
        if let Some(found) = try_refine(prob, &relax, &sol.moment_values, bound, opts) {
            return certified(bound, k, found, CertMethod::LocalRefinement, records);
        }
        if opts.perturb && prob.nx > 0 {
            let tp = tilted(prob, opts.seed);
            let Ok(trelax) = build_relaxation(&tp, k) else {
                continue;
            };
            let tsol = solve_sdp(&trelax.sdp, &opts.sdp);
            records.push(OrderRecord {
                order: k,
                sdp_status: tsol.status,
                lower_bound: tsol.primal_obj,
                ranks: moment_ranks(&trelax, &tsol.moment_values, opts.rank_tol),
                flat_at: None,
                perturbed: true,
                iterations: tsol.iterations,
            });
            if tsol.status != SdpStatus::Optimal {
                continue;
            }
            // points are verified against the untilted problem and bound
            if let Some(found) = try_refine(prob, &trelax, &tsol.moment_values, bound, opts) {
                return certified(bound, k, found, CertMethod::LocalRefinement, records);
            }
        }
    }
    CertifiedOptimum {
        status: Status::BoundOnly,
        lower_bound: best,
        order: best_order,
        minimizers: Vec::new(),
        antipodal_merged: false,
        method: None,
        records,
    }
}
#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment::dirac_moments;
    use crate::poly::poly;

    fn prob(obj: Polynomial, eqs: Vec<Polynomial>, ineqs: Vec<Polynomial>) -> PolyOptProblem {
        PolyOptProblem {
            nvars: obj.nvars(),
            nx: obj.nvars(),
            objective: obj,
            eqs,
            ineqs,
        }
    }

    #[test]
    fn extracts_from_exact_atomic_moments() {
        let p = prob(poly(2, &[(1.0, &[1, 0])]), vec![], vec![]);
        let relax = build_relaxation(&p, 3).unwrap();
        let atoms = [[1.0, -0.5], [-0.3, 2.0], [0.7, 0.4]];
        let weights = [0.5, 0.3, 0.2];
        let mut y = vec![0.0; relax.moments.len()];
        for (a, w) in atoms.iter().zip(weights) {
            for (yi, d) in y.iter_mut().zip(dirac_moments(a, 3)) {
                *yi += w * d;
            }
        }
        let (t, r) = check_flatness(&relax, &y, 1e-8).unwrap();
        assert_eq!(r, 3);
        assert!(t >= 2);
        let mut pts = extract_minimizers(&relax, &y, t, r, 1).unwrap();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut want = atoms.to_vec();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (p, w) in pts.iter().zip(&want) {
            assert!((p[0] - w[0]).abs() < 1e-8 && (p[1] - w[1]).abs() < 1e-8, "{p:?} vs {w:?}");
        }
    }

    #[test]
    fn certifies_simple_minimum() {
        // min (x-1)^2 + (y+2)^2 over the disk of radius 3
        let obj = poly(2, &[(1.0, &[2, 0]), (-2.0, &[1, 0]), (1.0, &[0, 2]), (4.0, &[0, 1]), (5.0, &[0, 0])]);
        let disk = poly(2, &[(1.0, &[2, 0]), (1.0, &[0, 2]), (-9.0, &[0, 0])]);
        let res = certify(&prob(obj, vec![], vec![disk]), &CertifyOptions::default());
        assert_eq!(res.status, Status::Certified);
        assert!(res.lower_bound.abs() < 1e-6);
        assert_eq!(res.minimizers.len(), 1);
        assert!((res.minimizers[0].x[0] - 1.0).abs() < 1e-5);
        assert!((res.minimizers[0].x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn detects_infeasible() {
        // x^2 + 1 = 0
        let obj = poly(1, &[(1.0, &[1])]);
        let res = certify(
            &prob(obj, vec![poly(1, &[(1.0, &[2]), (1.0, &[0])])], vec![]),
            &CertifyOptions::default(),
        );
        assert_eq!(res.status, Status::Infeasible);
        assert_eq!(res.status.code(), -1);
    }

    #[test]
    fn two_minimizers() {
        // min -x^2 on [-1, 1]: minimizers +-1
        let obj = poly(1, &[(-1.0, &[2])]);
        let box1 = poly(1, &[(1.0, &[2]), (-1.0, &[0])]);
        // order 1 is certified by refinement from a single atom; order 2 is flat
        let opts = CertifyOptions {
            min_order: Some(2),
            ..Default::default()
        };
        let res = certify(&prob(obj, vec![], vec![box1]), &opts);
        assert_eq!(res.status, Status::Certified);
        assert_eq!(res.method, Some(CertMethod::FlatExtension));
        assert!((res.lower_bound + 1.0).abs() < 1e-6);
        let mut xs: Vec<f64> = res.minimizers.iter().map(|m| m.x[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs.len(), 2);
        assert!((xs[0] + 1.0).abs() < 1e-5 && (xs[1] - 1.0).abs() < 1e-5);
    }
}
