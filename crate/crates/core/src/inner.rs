//! Convex inner approximation by gradient cuts, and the convexity test.
//!
//! A piece `p_i` of the boundary is nonnegatively curved when the curvature
//! problem of [`build_curvature_problem`] has a nonnegative optimum. Where it
//! is negative, the set is cut by the tangent half-space at a minimizer and
//! the same piece is checked again against the enlarged constraint list.

use serde::{Deserialize, Serialize};

use crate::curvature::{build_curvature_problem, PolyOptProblem};
use crate::error::{Error, Result};
use crate::extract::{certify, CertifiedOptimum, CertifyOptions, Status};
use crate::poly::Polynomial;
use crate::semialg::SemialgebraicSet;

/// Normalized half-space `g(x*)/|g(x*)| . (x - x*) + eps <= 0` with `g` the
/// gradient of `p` at `x_star`.
pub fn separating_halfspace(p: &Polynomial, x_star: &[f64], eps: f64) -> Result<Polynomial> {
    if x_star.len() != p.nvars() {
        return Err(Error::DimensionMismatch {
            expected: p.nvars(),
            got: x_star.len(),
        });
    }
    let g = p.gradient().eval(x_star)?;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(Error::DegenerateCut);
    }
    let a: Vec<f64> = g.iter().map(|v| v / norm).collect();
    let c0 = -a.iter().zip(x_star).map(|(u, v)| u * v).sum::<f64>() + eps;
    Ok(Polynomial::affine(&a, c0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimizerPolicy {
    /// Cut at every extracted minimizer at once.
    #[default]
    All,
    First,
    /// The minimizer where `|grad p_i|` is largest.
    MaxGradientNorm,
}

impl std::str::FromStr for MinimizerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(MinimizerPolicy::All),
            "first" => Ok(MinimizerPolicy::First),
            "max-gradient-norm" => Ok(MinimizerPolicy::MaxGradientNorm),
            other => Err(Error::InvalidArgument(format!("unknown minimizer policy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerOptions {
    pub max_order: usize,
    pub max_cuts: usize,
    pub policy: MinimizerPolicy,
    /// Curvature bounds `>= -curvature_tol` count as nonnegative.
    pub curvature_tol: f64,
    /// Cuts enter later curvature problems as `c(x) + contact_push <= 0`, so
    /// the contact point of a tangent cut is not found again. Boundary points
    /// closer than this to a cut are not re-checked; 0 checks the exact set
    /// but thin margins then tend to end inconclusive.
    pub contact_push: f64,
    pub certify: CertifyOptions,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            max_order: 5,
            max_cuts: 20,
            policy: MinimizerPolicy::All,
            curvature_tol: 1e-6,
            contact_push: 1e-2,
            certify: CertifyOptions::default(),
        }
    }
}

impl InnerOptions {
    fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            max_order: self.max_order,
            ..self.certify.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    ConvexCertified,
    MaxIters,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceOutcome {
    Affine,
    Inactive,
    Nonnegative,
    Cut,
    Inconclusive,
    MaxCuts,
}

/// One pass of the loop over a piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLogEntry {
    pub piece: usize,
    /// Number of cuts in force when the piece was checked.
    pub cuts_in_force: usize,
    pub outcome: PieceOutcome,
    pub status: Option<Status>,
    pub order: Option<usize>,
    pub bound: Option<f64>,
    pub minimizers: Vec<Vec<f64>>,
    pub cuts: Vec<Polynomial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerApproximation {
    pub base: SemialgebraicSet,
    pub cuts: Vec<Polynomial>,
    pub log: Vec<InnerLogEntry>,
    pub final_status: FinalStatus,
}

impl InnerApproximation {
    /// The inner approximation: `base` with the cuts appended.
    pub fn set(&self) -> SemialgebraicSet {
        self.base.with_extra(self.cuts.iter().cloned())
    }
}

/// Curvature problem for `piece` of `base` intersected with the first cuts,
/// each pushed inward by `contact_push`.
pub fn piece_problem(base: &SemialgebraicSet, cuts: &[Polynomial], piece: usize, contact_push: f64) -> Result<PolyOptProblem> {
    let set = base.with_extra(cuts.iter().map(|c| c.add_constant(contact_push)));
    build_curvature_problem(&set, piece)
}

fn chosen_points(res: &CertifiedOptimum, p: &Polynomial, policy: MinimizerPolicy) -> Vec<Vec<f64>> {
    let mut xs: Vec<Vec<f64>> = Vec::new();
    for m in &res.minimizers {
        let dup = xs
            .iter()
            .any(|x| x.iter().zip(&m.x).all(|(a, b)| (a - b).abs() < 1e-6));
        if !dup {
            xs.push(m.x.clone());
        }
    }
    match policy {
        MinimizerPolicy::All => xs,
        MinimizerPolicy::First => xs.into_iter().take(1).collect(),
        MinimizerPolicy::MaxGradientNorm => {
            let grad = p.gradient();
            let norm = |x: &Vec<f64>| grad.0.iter().map(|g| g.eval_unchecked(x).powi(2)).sum::<f64>();
            xs.into_iter().max_by(|a, b| norm(a).total_cmp(&norm(b))).into_iter().collect()
        }
    }
}

/// Grow a list of affine cuts until every curved piece of `set` is
/// certified nonnegatively curved on the result.
pub fn inner_approximation(set: &SemialgebraicSet, eps: f64, opts: &InnerOptions) -> Result<InnerApproximation> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    if opts.max_cuts == 0 {
        return Err(Error::InvalidArgument("max_cuts must be at least 1".into()));
    }
    set.validate()?;
    let copts = opts.certify_options();
    let mut cuts: Vec<Polynomial> = Vec::new();
    let mut log = Vec::new();
    let mut final_status = FinalStatus::ConvexCertified;
    let mut i = 0;
    while i < set.ineqs.len() + cuts.len() {
        let entry = |outcome, res: Option<&CertifiedOptimum>, ncuts| InnerLogEntry {
            piece: i,
            cuts_in_force: ncuts,
            outcome,
            status: res.map(|r| r.status),
            order: res.and_then(|r| r.order),
            bound: res.map(|r| r.lower_bound),
            minimizers: Vec::new(),
            cuts: Vec::new(),
        };
        if i >= set.ineqs.len() || set.ineqs[i].degree() <= 1 {
            log.push(entry(PieceOutcome::Affine, None, cuts.len()));
            i += 1;
            continue;
        }
        let prob = piece_problem(set, &cuts, i, opts.contact_push)?;
        let res = certify(&prob, &copts);
        log::debug!("piece {i} with {} cuts: {:?} bound {}", cuts.len(), res.status, res.lower_bound);
        match res.status {
            Status::Infeasible => {
                log.push(entry(PieceOutcome::Inactive, Some(&res), cuts.len()));
                i += 1;
            }
            _ if res.lower_bound >= -opts.curvature_tol => {
                log.push(entry(PieceOutcome::Nonnegative, Some(&res), cuts.len()));
                i += 1;
            }
            Status::BoundOnly => {
                log.push(entry(PieceOutcome::Inconclusive, Some(&res), cuts.len()));
                final_status = FinalStatus::Inconclusive;
                i += 1;
            }
            Status::Certified => {
                if cuts.len() >= opts.max_cuts {
                    log.push(entry(PieceOutcome::MaxCuts, Some(&res), cuts.len()));
                    final_status = FinalStatus::MaxIters;
                    break;
                }
                let mut e = entry(PieceOutcome::Cut, Some(&res), cuts.len());
                for x in chosen_points(&res, &set.ineqs[i], opts.policy) {
                    if cuts.len() >= opts.max_cuts {
                        break;
                    }
                    let cut = separating_halfspace(&set.ineqs[i], &x, eps)?;
                    if cuts.iter().any(|c| c.approx_eq(&cut, 1e-9)) {
                        continue;
                    }
                    cuts.push(cut.clone());
                    e.minimizers.push(x);
                    e.cuts.push(cut);
                }
                if e.cuts.is_empty() {
                    // every candidate cut is already present; another pass would repeat
                    e.outcome = PieceOutcome::Inconclusive;
                    log.push(e);
                    final_status = FinalStatus::Inconclusive;
                    i += 1;
                } else {
                    log.push(e);
                }
            }
        }
    }
    Ok(InnerApproximation {
        base: set.clone(),
        cuts,
        log,
        final_status,
    })
}

/// Outcome of the convexity test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Convexity {
    Convex,
    Nonconvex { piece: usize, x: Vec<f64>, curvature: f64 },
    Inconclusive { piece: usize, bound: f64, note: Option<String> },
}

/// Decide convexity piece by piece. A certified negative curvature wins over
/// an inconclusive piece.
pub fn is_convex(set: &SemialgebraicSet, max_order: usize) -> Result<Convexity> {
    is_convex_with(set, max_order, 1e-6, &CertifyOptions::default())
}

pub fn is_convex_with(set: &SemialgebraicSet, max_order: usize, curvature_tol: f64, copts: &CertifyOptions) -> Result<Convexity> {
    set.validate()?;
    let copts = CertifyOptions {
        max_order,
        ..copts.clone()
    };
    let mut pending: Option<Convexity> = None;
    for (i, p) in set.ineqs.iter().enumerate() {
        if p.degree() <= 1 {
            continue;
        }
        let res = certify(&build_curvature_problem(set, i)?, &copts);
        match res.status {
            Status::Infeasible => {}
            _ if res.lower_bound >= -curvature_tol => {}
            Status::Certified => {
                let m = &res.minimizers[0];
                return Ok(Convexity::Nonconvex {
                    piece: i,
                    x: m.x.clone(),
                    curvature: res.lower_bound,
                });
            }
            Status::BoundOnly => {
                if pending.is_none() {
                    pending = Some(Convexity::Inconclusive {
                        piece: i,
                        bound: res.lower_bound,
                        note: numerically_convex(&res).then(|| "numerically convex".to_string()),
                    });
                }
            }
        }
    }
    Ok(pending.unwrap_or(Convexity::Convex))
}

/// The hierarchy's bounds rise order by order and the last one is within
/// `1e-2` of zero.
fn numerically_convex(res: &CertifiedOptimum) -> bool {
    let mut by_order: Vec<(usize, f64)> = Vec::new();
    for r in res.records.iter().filter(|r| !r.perturbed && r.lower_bound.is_finite()) {
        by_order.push((r.order, r.lower_bound));
    }
    by_order.len() >= 2
        && by_order.windows(2).all(|w| w[1].1 >= w[0].1)
        && by_order.last().is_some_and(|&(_, b)| b > -1e-2)
}
