mod commands;
mod input;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use innerconvex::{MinimizerPolicy, SdpOptions};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "innerconvex", version, about = "Convex inner approximations of semialgebraic sets")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GlobalArgs {
    /// SDP feasibility and gap tolerance (default from INNERCONVEX_SDP_TOL, else 1e-8).
    #[arg(long, global = true)]
    pub sdp_tol: Option<f64>,
    #[arg(long, global = true)]
    pub sdp_max_iters: Option<usize>,
    /// Also write the run manifest to this path.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    #[serde(skip)]
    pub verbose: u8,
}

impl GlobalArgs {
    pub fn sdp_options(&self) -> SdpOptions {
        let mut o = SdpOptions::from_env();
        if let Some(t) = self.sdp_tol {
            o.tol = t;
            o.report_tol = SdpOptions::default().report_tol.max(10.0 * t);
        }
        if let Some(n) = self.sdp_max_iters {
            o.max_iters = n;
        }
        o
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bound the boundary curvature of one piece through the moment hierarchy.
    Certify(CertifyArgs),
    /// Decide convexity of a set piece by piece.
    Convex(ConvexArgs),
    /// Build a convex inner approximation by affine cuts.
    Inner(InnerArgs),
    /// Schur stability regions: inner approximation, sampling check, analytic center.
    Stab(StabArgs),
    /// Double-integrator transfer through the waterdrop, or any 2D set.
    Trajopt(TrajoptArgs),
    /// Rasterize a 2D set (and optionally an inner set) to CSV and SVG.
    Raster(RasterArgs),
    /// Write one moment relaxation in the sparse SDP text format.
    Relax(RelaxArgs),
    /// Solve an SDP given in the sparse text format.
    Sdp(SdpArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct CertifyArgs {
    /// Fixture name or set JSON file.
    #[arg(long)]
    pub set: String,
    /// Boundary piece, counted from 1.
    #[arg(long, default_value_t = 1)]
    pub piece: usize,
    #[arg(long)]
    pub min_order: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub max_order: usize,
    /// Compactifying ball radius added to the set.
    #[arg(long)]
    pub ball: Option<f64>,
    /// Skip the tilted relaxation used to pick a point from a continuum of minimizers.
    #[arg(long)]
    pub no_perturb: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvexArgs {
    #[arg(long)]
    pub set: String,
    #[arg(long, default_value_t = 5)]
    pub max_order: usize,
    #[arg(long)]
    pub ball: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub curvature_tol: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct InnerArgs {
    #[arg(long)]
    pub set: String,
    /// Offset of each cut past its minimizer.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub max_order: usize,
    #[arg(long, default_value = "all")]
    pub policy: MinimizerPolicy,
    #[arg(long, default_value_t = 20)]
    pub max_cuts: usize,
    /// Shift of cuts when re-checking a piece.
    #[arg(long, default_value_t = 1e-2)]
    pub contact_push: f64,
    #[arg(long)]
    pub ball: Option<f64>,
    /// Directory for Sbar.json, log.json and manifest.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// SVG of the set (light) and the inner approximation (dark).
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Plot window as lo1,hi1,lo2,hi2 (fixtures have a default).
    #[arg(long)]
    pub bbox: Option<String>,
    #[arg(long, default_value_t = 400)]
    pub resolution: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StabKind {
    Schur3,
    Schur4,
}

#[derive(Args, Debug, Serialize)]
pub struct StabArgs {
    #[arg(long, value_enum)]
    pub kind: StabKind,
    /// Plant parameter of the fourth-order loop.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a: f64,
    /// Replace the region by its convex inner approximation.
    #[arg(long)]
    pub inner: bool,
    /// Compute the analytic center of the (inner) region.
    #[arg(long)]
    pub center: bool,
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Samples per axis for the stability check (default 200 in 2D, 60 in 3D).
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub max_order: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Directory for Sbar.json and log.json when --inner is given.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cost {
    Weighted,
    Literal,
}

#[derive(Args, Debug, Serialize)]
pub struct TrajoptArgs {
    /// waterdrop, waterdrop-inner, another fixture, or a set JSON file.
    #[arg(long, default_value = "waterdrop")]
    pub set: String,
    /// Number of constraint instants.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of starts (default 5 for the nonconvex waterdrop, else 1).
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub perturbation: f64,
    #[arg(long, value_enum, default_value = "weighted")]
    pub cost: Cost,
    #[arg(long, default_value = "0.3,-0.8", allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value = "-0.3,-0.8", allow_hyphen_values = true)]
    pub xf: String,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 2.5)]
    pub tf: f64,
    /// Trajectory samples written to --csv.
    #[arg(long, default_value_t = 251)]
    pub samples: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Relaxation order limit when building waterdrop-inner.
    #[arg(long, default_value_t = 5)]
    pub max_order: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct RasterArgs {
    #[arg(long)]
    pub set: String,
    /// Inner set drawn dark over the set.
    #[arg(long)]
    pub inner: Option<String>,
    #[arg(long, default_value_t = 400)]
    pub resolution: usize,
    #[arg(long)]
    pub bbox: Option<String>,
    #[arg(long)]
    pub ball: Option<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub pixel: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct RelaxArgs {
    #[arg(long)]
    pub set: String,
    #[arg(long, default_value_t = 1)]
    pub piece: usize,
    #[arg(long)]
    pub order: usize,
    #[arg(long)]
    pub ball: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SdpArgs {
    pub file: PathBuf,
    /// Print the solution vector too.
    #[arg(long)]
    pub values: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let g = &cli.global;
    let res = match &cli.command {
        Command::Certify(a) => commands::certify(g, a),
        Command::Convex(a) => commands::convex(g, a),
        Command::Inner(a) => commands::inner(g, a),
        Command::Stab(a) => commands::stab(g, a),
        Command::Trajopt(a) => commands::trajopt(g, a),
        Command::Raster(a) => commands::raster(g, a),
        Command::Relax(a) => commands::relax(g, a),
        Command::Sdp(a) => commands::sdp(g, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if commands::is_numerical(&e) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
