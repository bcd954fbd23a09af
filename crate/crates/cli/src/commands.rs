use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use innerconvex::extract::OrderRecord;
use innerconvex::semialg::{layers_to_svg, DARK_GRAY, LIGHT_GRAY};
use innerconvex::stability::verify_stability_sampling;
use innerconvex::trajopt::{sample_trajectory, CostConvention};
use innerconvex::{
    analytic_center, build_curvature_problem, build_flat_program, build_relaxation, fixtures,
    inner_approximation, rasterize, schur3_region, schur4_region, solve_flat_program, solve_sdp,
    CertifiedOptimum, CertifyOptions, InnerApproximation, InnerOptions, PolyOptProblem, SdpProblem, SdpStatus,
    SemialgebraicSet, Status, TrajoptOptions,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::input::{bbox_for, load_set, parse_point, LoadedSet};
use crate::manifest::ManifestBuilder;
use crate::{
    CertifyArgs, ConvexArgs, Cost, GlobalArgs, InnerArgs, RasterArgs, RelaxArgs, SdpArgs, StabArgs, StabKind,
    TrajoptArgs,
};

/// A run that finished without a usable numerical result.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<NumericalFailure>()
            || matches!(c.downcast_ref::<innerconvex::Error>(), Some(innerconvex::Error::NoConvergence { .. }))
    })
}

#[derive(Serialize)]
struct WithSdp<'a, T: Serialize> {
    #[serde(flatten)]
    args: &'a T,
    sdp: &'a GlobalArgs,
}

fn manifest<T: Serialize>(name: &str, g: &GlobalArgs, args: &T) -> ManifestBuilder {
    ManifestBuilder::new(name, &WithSdp { args, sdp: g }, g.manifest.clone())
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn piece_problem(loaded: &LoadedSet, piece: usize) -> Result<PolyOptProblem> {
    let m = loaded.set.ineqs.len();
    if piece == 0 || piece > m {
        bail!("--piece must be between 1 and {m}");
    }
    Ok(build_curvature_problem(&loaded.set, piece - 1)?)
}

fn minimizers_json(res: &CertifiedOptimum) -> Value {
    json!(res
        .minimizers
        .iter()
        .map(|m| json!({"x": m.x, "z": m.z, "objective": m.objective}))
        .collect::<Vec<_>>())
}

/// One line per hierarchy order; a tilted relaxation solved at the same
/// order is nested under `tilted`.
fn order_lines(res: &CertifiedOptimum) -> Vec<Value> {
    let mut lines: Vec<Value> = Vec::new();
    let mut plain: Option<&OrderRecord> = None;
    let flush = |rec: &OrderRecord, tilted: Option<&OrderRecord>, lines: &mut Vec<Value>| {
        let here = res.order == Some(rec.order);
        let status = match () {
            _ if rec.sdp_status == SdpStatus::Infeasible => Status::Infeasible,
            _ if here && res.status == Status::Certified => Status::Certified,
            _ => Status::BoundOnly,
        };
        let mut v = json!({
            "order": rec.order,
            "status": status.code(),
            "bound": rec.lower_bound,
            "sdp_status": rec.sdp_status,
            "ranks": rec.ranks,
            "flat_at": rec.flat_at,
            "iterations": rec.iterations,
            "tilted": tilted.map(|t| json!({
                "bound": t.lower_bound,
                "sdp_status": t.sdp_status,
                "ranks": t.ranks,
                "iterations": t.iterations,
            })),
        });
        if status == Status::Certified {
            v["method"] = json!(res.method);
            v["minimizers"] = minimizers_json(res);
        }
        lines.push(v);
    };
    for rec in &res.records {
        if rec.perturbed {
            if let Some(p) = plain.take() {
                flush(p, Some(rec), &mut lines);
            }
        } else {
            if let Some(p) = plain.replace(rec) {
                flush(p, None, &mut lines);
            }
        }
    }
    if let Some(p) = plain {
        flush(p, None, &mut lines);
    }
    lines
}

pub fn certify(g: &GlobalArgs, a: &CertifyArgs) -> Result<()> {
    let mut man = manifest("certify", g, a);
    man.input(&a.set);
    man.seed(a.seed);
    let loaded = load_set(&a.set, a.ball)?;
    let prob = piece_problem(&loaded, a.piece)?;
    let opts = CertifyOptions {
        min_order: a.min_order,
        max_order: a.max_order,
        perturb: !a.no_perturb,
        seed: a.seed,
        sdp: g.sdp_options(),
        ..Default::default()
    };
    let res = innerconvex::certify(&prob, &opts);
    for line in order_lines(&res) {
        print_json(&line)?;
    }
    print_json(&json!({
        "final": true,
        "status": res.status.code(),
        "status_name": res.status,
        "bound": res.lower_bound,
        "order": res.order,
        "method": res.method,
        "antipodal_merged": res.antipodal_merged,
        "minimizers": minimizers_json(&res),
    }))?;
    man.finish()?;
    if res.lower_bound.is_nan() {
        return Err(NumericalFailure("no relaxation in the hierarchy was solved".into()).into());
    }
    Ok(())
}

pub fn convex(g: &GlobalArgs, a: &ConvexArgs) -> Result<()> {
    let mut man = manifest("convex", g, a);
    man.input(&a.set);
    let loaded = load_set(&a.set, a.ball)?;
    let copts = CertifyOptions {
        sdp: g.sdp_options(),
        ..Default::default()
    };
    let verdict = innerconvex::inner::is_convex_with(&loaded.set, a.max_order, a.curvature_tol, &copts)?;
    print_json(&verdict)?;
    man.finish()
}

fn inner_options(g: &GlobalArgs, max_order: usize) -> InnerOptions {
    InnerOptions {
        max_order,
        certify: CertifyOptions {
            sdp: g.sdp_options(),
            ..Default::default()
        },
        ..Default::default()
    }
}

fn cut_points(inner: &InnerApproximation) -> Vec<[f64; 2]> {
    inner
        .log
        .iter()
        .filter(|e| !e.cuts.is_empty())
        .flat_map(|e| e.minimizers.iter())
        .filter(|x| x.len() == 2)
        .map(|x| [x[0], x[1]])
        .collect()
}

fn write_inner_outputs(dir: &Path, inner: &InnerApproximation) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("Sbar.json"), &(serde_json::to_string_pretty(&inner.set())? + "\n"))?;
    write_file(&dir.join("log.json"), &(serde_json::to_string_pretty(inner)? + "\n"))?;
    Ok(())
}

fn cuts_json(inner: &InnerApproximation) -> Value {
    json!(inner
        .cuts
        .iter()
        .map(|c| {
            let (a, c0) = c.affine_parts().expect("cuts are affine");
            json!({"a": a, "c0": c0})
        })
        .collect::<Vec<_>>())
}

pub fn inner(g: &GlobalArgs, a: &InnerArgs) -> Result<()> {
    let mut man = manifest("inner", g, a);
    man.input(&a.set);
    let loaded = load_set(&a.set, a.ball)?;
    let opts = InnerOptions {
        max_cuts: a.max_cuts,
        policy: a.policy,
        contact_push: a.contact_push,
        ..inner_options(g, a.max_order)
    };
    let res = inner_approximation(&loaded.set, a.eps, &opts)?;
    write_inner_outputs(&a.out, &res)?;
    man.write_in_dir(&a.out)?;
    if let Some(plot) = &a.plot {
        if loaded.set.n != 2 {
            bail!("--plot needs a set in two variables");
        }
        let bbox = bbox_for(&loaded, a.bbox.as_deref())?;
        let grid = [a.resolution, a.resolution];
        let s = rasterize(&loaded.set, &bbox, &grid)?;
        let sb = rasterize(&res.set(), &bbox, &grid)?;
        write_file(plot, &layers_to_svg(&[(&s, LIGHT_GRAY), (&sb, DARK_GRAY)], &cut_points(&res), 1)?)?;
        man.write_beside(plot)?;
    }
    print_json(&json!({
        "final_status": res.final_status,
        "cuts": cuts_json(&res),
        "sbar": a.out.join("Sbar.json"),
        "log": a.out.join("log.json"),
    }))?;
    man.finish()
}

/// Strictly feasible raster point farthest inside every constraint.
fn deepest_point(set: &SemialgebraicSet, bbox: &[[f64; 2]], res: usize) -> Result<Vec<f64>> {
    let r = rasterize(set, bbox, &vec![res; bbox.len()])?;
    let polys = set.all_constraints();
    let depth = |x: &[f64]| {
        polys
            .iter()
            .map(|p| -p.eval(x).expect("dimension checked"))
            .fold(f64::INFINITY, f64::min)
    };
    r.points()
        .filter(|(_, inside)| *inside)
        .map(|(x, _)| (depth(&x), x))
        .filter(|(d, _)| *d > 0.0)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, x)| x)
        .ok_or_else(|| anyhow::anyhow!("no strictly feasible sample to start the analytic center from"))
}

pub fn stab(g: &GlobalArgs, a: &StabArgs) -> Result<()> {
    let man = manifest("stab", g, a);
    let spec = match a.kind {
        StabKind::Schur3 => schur3_region(),
        StabKind::Schur4 => schur4_region(a.a),
    };
    let dim = spec.set.n;
    let res = a.resolution.unwrap_or(if dim == 2 { 200 } else { 60 });
    let mut region = spec.set.clone();
    let mut inner_report = Value::Null;
    let mut marks = Vec::new();
    if a.inner {
        let inner = inner_approximation(&spec.set, a.eps, &inner_options(g, a.max_order))?;
        region = inner.set();
        marks.extend(cut_points(&inner));
        if let Some(dir) = &a.out {
            write_inner_outputs(dir, &inner)?;
            man.write_in_dir(dir)?;
        }
        inner_report = json!({
            "final_status": inner.final_status,
            "cuts": cuts_json(&inner),
            "log": inner.log,
        });
    }
    let sampling = verify_stability_sampling(&spec, &region, res)?;
    let bbox = spec.bounding_box();
    let center = if a.center {
        let x0 = deepest_point(&region, &bbox, res)?;
        let c = analytic_center(&region, &x0)?;
        if dim == 2 {
            marks.push([c.x_star[0], c.x_star[1]]);
        }
        json!(c)
    } else {
        Value::Null
    };
    if let Some(plot) = &a.plot {
        if dim != 2 {
            bail!("--plot needs the two-parameter schur4 region");
        }
        let grid = [res, res];
        let s = rasterize(&spec.set, &bbox, &grid)?;
        let sb = rasterize(&region, &bbox, &grid)?;
        let layers: Vec<(&innerconvex::RegionRaster, &str)> = if a.inner {
            vec![(&s, LIGHT_GRAY), (&sb, DARK_GRAY)]
        } else {
            vec![(&s, LIGHT_GRAY)]
        };
        write_file(plot, &layers_to_svg(&layers, &marks, 2)?)?;
        man.write_beside(plot)?;
    }
    print_json(&json!({
        "kind": a.kind,
        "a": if matches!(a.kind, StabKind::Schur4) { json!(a.a) } else { Value::Null },
        "inner": inner_report,
        "sampling": sampling,
        "center": center,
    }))?;
    man.finish()
}

pub fn trajopt(g: &GlobalArgs, a: &TrajoptArgs) -> Result<()> {
    let mut man = manifest("trajopt", g, a);
    man.input(&a.set);
    man.seed(a.seed);
    let (set, default_starts) = match a.set.as_str() {
        "waterdrop-inner" => {
            let inner = inner_approximation(&fixtures::waterdrop(), 0.0, &inner_options(g, a.max_order))?;
            (inner.set(), 1)
        }
        "waterdrop" => (fixtures::waterdrop(), 5),
        other => (load_set(other, None)?.set, 1),
    };
    let mut fp = build_flat_program(parse_point(&a.x0)?, parse_point(&a.xf)?, a.t0, a.tf, a.n, &set)?;
    fp.cost = match a.cost {
        Cost::Weighted => CostConvention::Weighted,
        Cost::Literal => CostConvention::Literal,
    };
    let opts = TrajoptOptions {
        starts: a.starts.unwrap_or(default_starts),
        perturbation: a.perturbation,
        seed: a.seed,
        ..Default::default()
    };
    let r = solve_flat_program(&fp, &opts)?;
    if let Some(csv) = &a.csv {
        let mut s = String::from("t,x1,x2,u\n");
        for [t, x1, x2, u] in sample_trajectory(&fp, &r.alpha_star, a.samples)? {
            s.push_str(&format!("{t},{x1},{x2},{u}\n"));
        }
        write_file(csv, &s)?;
        man.write_beside(csv)?;
    }
    print_json(&json!({
        "set": a.set,
        "n": a.n,
        "cost": r.cost,
        "max_constraint_violation": r.max_constraint_violation,
        "boundary_error": r.boundary_error,
        "iterations": r.iterations,
        "wall_time": r.wall_time,
        "starts": opts.starts,
        "starts_converged": r.starts_converged,
        "alpha": r.alpha_star,
    }))?;
    man.finish()
}

pub fn raster(g: &GlobalArgs, a: &RasterArgs) -> Result<()> {
    let mut man = manifest("raster", g, a);
    man.input(&a.set);
    let loaded = load_set(&a.set, a.ball)?;
    let bbox = bbox_for(&loaded, a.bbox.as_deref())?;
    let grid = vec![a.resolution; bbox.len()];
    let s = rasterize(&loaded.set, &bbox, &grid)?;
    let inner = match &a.inner {
        Some(p) => {
            man.input(p);
            let set = load_set(p, None)?.set;
            Some(rasterize(&set, &bbox, &grid)?)
        }
        None => None,
    };
    if let Some(csv) = &a.csv {
        write_file(csv, &s.to_csv())?;
        man.write_beside(csv)?;
    }
    if let Some(svg) = &a.svg {
        let mut layers = vec![(&s, LIGHT_GRAY)];
        if let Some(r) = &inner {
            layers.push((r, DARK_GRAY));
        }
        write_file(svg, &layers_to_svg(&layers, &[], a.pixel)?)?;
        man.write_beside(svg)?;
    }
    print_json(&json!({
        "samples": s.len(),
        "inside": s.count_inside(),
        "inner_inside": inner.as_ref().map(|r| r.count_inside()),
    }))?;
    man.finish()
}

pub fn relax(g: &GlobalArgs, a: &RelaxArgs) -> Result<()> {
    let mut man = manifest("relax", g, a);
    man.input(&a.set);
    let loaded = load_set(&a.set, a.ball)?;
    let prob = piece_problem(&loaded, a.piece)?;
    let r = build_relaxation(&prob, a.order)?;
    write_file(&a.out, &r.sdp.to_text())?;
    man.write_beside(&a.out)?;
    print_json(&json!({
        "num_vars": r.sdp.num_vars,
        "block_sizes": r.sdp.blocks.iter().map(|b| b.size).collect::<Vec<_>>(),
        "equalities": r.sdp.equalities.len(),
    }))?;
    man.finish()
}

pub fn sdp(g: &GlobalArgs, a: &SdpArgs) -> Result<()> {
    let mut man = manifest("sdp", g, a);
    man.input(a.file.display().to_string());
    let text = std::fs::read_to_string(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let prob = SdpProblem::from_text(&text).with_context(|| format!("parsing {}", a.file.display()))?;
    let sol = solve_sdp(&prob, &g.sdp_options());
    let k = innerconvex::sdp::kkt_report(&prob, &sol);
    let mut v = json!({
        "status": sol.status,
        "primal_obj": sol.primal_obj,
        "dual_obj": sol.dual_obj,
        "iterations": sol.iterations,
        "residuals": sol.residuals,
        "kkt": {
            "equality": k.equality,
            "primal_psd": k.primal_psd,
            "dual_psd": k.dual_psd,
            "stationarity": k.stationarity,
            "complementarity": k.complementarity,
        },
    });
    if a.values {
        v["values"] = json!(sol.moment_values);
    }
    print_json(&v)?;
    man.finish()?;
    if sol.status == SdpStatus::NumericalFailure {
        return Err(NumericalFailure(format!("solver stopped after {} iterations", sol.iterations)).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use innerconvex::extract::CertMethod;

    fn rec(order: usize, perturbed: bool, status: SdpStatus) -> OrderRecord {
        OrderRecord {
            order,
            sdp_status: status,
            lower_bound: -(order as f64),
            ranks: vec![],
            flat_at: None,
            perturbed,
            iterations: 1,
        }
    }

    #[test]
    fn tilted_records_fold_into_their_order() {
        let res = CertifiedOptimum {
            status: Status::Certified,
            lower_bound: -3.0,
            order: Some(3),
            minimizers: vec![],
            antipodal_merged: false,
            method: Some(CertMethod::LocalRefinement),
            records: vec![
                rec(2, false, SdpStatus::Optimal),
                rec(2, true, SdpStatus::Optimal),
                rec(3, false, SdpStatus::Optimal),
            ],
        };
        let lines = order_lines(&res);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["status"], 0);
        assert!(lines[0]["tilted"].is_object());
        assert_eq!(lines[1]["status"], 1);
        assert!(lines[1]["tilted"].is_null());
        assert_eq!(lines[1]["method"], "local_refinement");
    }
}
