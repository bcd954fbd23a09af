//! Convex inner approximations of basic semialgebraic sets.
//!
//! Boundary curvature of each defining polynomial is bounded through a
//! hierarchy of moment relaxations; where the curvature is negative the set
//! is cut by gradient half-spaces at the certified minimizers.

pub mod curvature;
pub mod error;
pub mod extract;
pub mod fixtures;
pub mod inner;
pub mod moment;
pub mod poly;
pub mod sdp;
pub mod semialg;
pub mod stability;
pub mod trajopt;

pub use curvature::{build_curvature_problem, check_assumption_nondegenerate, Nondegeneracy, PolyOptProblem};
pub use error::{Error, Result};
pub use extract::{certify, CertifiedOptimum, CertifyOptions, Minimizer, Status};
pub use inner::{
    inner_approximation, is_convex, separating_halfspace, Convexity, FinalStatus, InnerApproximation, InnerOptions,
    MinimizerPolicy,
};
pub use moment::{build_relaxation, min_relaxation_order, MomentBasis, Relaxation};
pub use poly::{Monomial, PolyMatrix, PolyVector, Polynomial};
pub use sdp::{solve_sdp, SdpOptions, SdpProblem, SdpSolution, SdpStatus};
pub use semialg::{rasterize, RegionRaster, SemialgebraicSet};
pub use stability::{analytic_center, schur3_region, schur4_region, StabilityRegionSpec};
pub use trajopt::{
    bspline_eval, build_flat_program, solve_flat_program, BSplineBasis, FlatProgram, TrajectoryResult, TrajoptOptions,
};
