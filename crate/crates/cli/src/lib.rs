//! Command-line front end: argument parsing, configuration loading and
//! report emission for the `geoconn` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod demos;
mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use io::{parse_point, parse_points, SCHEMA};

const CSV_HELP: &str = "\
Exit status: 0 completed, 2 not-found or unreachable verdict, 1 error.

Reports are JSON (field `schema` = 1) on stdout or in --out.
CSV files (--csv):
  integrate                s, x_0..x_{n-1}, v_0..v_{n-1}, energy
  connect, multiwarped     solution, s, x_0.., v_0.., energy (one block per solution)
  desitter                 s, x_0..x_n (closed-form geodesic, 101 samples)
  raster                   i, j, x, y, hit
  convexity connect        s, x_0..x_{n-1}
  stationary split         curve, f, f1, f2, relative_error";

#[derive(Debug, Parser)]
#[command(name = "geoconn", version, about = "Geodesic connectedness toolkit", after_long_help = CSV_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model file (JSON `{name, params}`) or an inline JSON object.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write trajectory, path or raster data as CSV.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Seed for all randomized sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Integrator or endpoint tolerance (command specific).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Interior nodes of discretized paths.
    #[arg(long, global = true)]
    pub n_nodes: Option<usize>,
    /// First penalty weight of the continuation schedule.
    #[arg(long, global = true)]
    pub eps0: Option<f64>,
    /// Largest affine parameter.
    #[arg(long, global = true)]
    pub s_max: Option<f64>,
    /// Winding bound for periodic fibers.
    #[arg(long, global = true)]
    pub max_winding: Option<u32>,
}

/// A point given as comma-separated coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

/// Points separated by `;`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points(pub Vec<Vec<f64>>);

fn point_arg(s: &str) -> Result<Point, String> {
    parse_point(s).map(Point)
}

fn points_arg(s: &str) -> Result<Points, String> {
    parse_points(s).map(Points)
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one geodesic.
    Integrate {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        v: Point,
        /// Fixed-step RK4 instead of adaptive steps.
        #[arg(long)]
        fixed_step: Option<f64>,
    },
    /// Search connecting geodesics by shooting.
    Connect {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        q: Point,
        /// Velocity box half-width per frame coefficient.
        #[arg(long, default_value_t = 1.0)]
        v_max: f64,
        #[arg(long, default_value_t = 8)]
        multistart: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        /// Lattice lifts searched on each side for torus quotients.
        #[arg(long, default_value_t = 1)]
        lifts: u32,
    },
    /// Reachability raster of a 2D model.
    Raster {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        lo: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        hi: Point,
        #[arg(long, default_value_t = 0.1)]
        cell: f64,
        #[arg(long, default_value_t = 64)]
        directions: usize,
    },
    /// Closed-form connectivity on de Sitter space (embedded coordinates).
    Desitter {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        q: Point,
    },
    /// Multiwarped spacetimes.
    Multiwarped {
        #[command(subcommand)]
        command: MultiwarpedCommand,
    },
    /// Domains with boundary `{phi > 0}`.
    Convexity {
        /// Domain file (JSON `{model, phi, bounds?}`) or inline JSON.
        #[arg(long)]
        domain: String,
        #[command(subcommand)]
        command: ConvexityCommand,
    },
    /// Standard stationary spacetimes.
    Stationary {
        #[command(subcommand)]
        command: StationaryCommand,
    },
    /// Reproduce a worked example and check its assertion.
    Demo {
        #[command(subcommand)]
        command: DemoCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum MultiwarpedCommand {
    /// Connecting geodesics through the reduced shooting map.
    Connect {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        z: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        w: Point,
    },
    /// Causal connecting geodesics (K >= 0).
    Causal {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        z: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        w: Point,
    },
    /// Integral criterion at both ends of the base interval.
    Criterion {
        #[arg(long, allow_hyphen_values = true)]
        probe: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConvexityCommand {
    /// Classify boundary points and test local convexity.
    Classify {
        /// Points to project onto the boundary; sampled from the bounds when absent.
        #[arg(long, value_parser = points_arg, allow_hyphen_values = true)]
        points: Option<Points>,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        directions: usize,
        /// Chart radius of the tangent-geodesic test (0 disables it).
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
    },
    /// Sample the conditions on phi along a ladder of levels.
    Audit {
        /// Decreasing positive levels.
        #[arg(long, value_parser = point_arg)]
        ladder: Option<Point>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Connect two interior points with the penalized action.
    Connect {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        q: Point,
        /// Start from a path with this many extra turns around --center.
        #[arg(long, allow_hyphen_values = true)]
        winding: Option<i32>,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        center: Option<Point>,
        #[arg(long, default_value_t = 8)]
        eps_steps: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum StationaryCommand {
    /// Split the action of seeded random curves along the Killing field.
    Split {
        #[arg(long, default_value_t = 100)]
        curves: usize,
        #[arg(long, default_value_t = 64)]
        segments: usize,
    },
    /// Audit the sufficient conditions for connectedness on a base box.
    Audit {
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        lo: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        hi: Point,
        #[arg(long, value_parser = point_arg, allow_hyphen_values = true)]
        p0: Point,
        #[arg(long, default_value_t = 21)]
        samples: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Affine torus: x-range of random geodesics stays within 2π.
    Bates {
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Lorentzian torus: unit determinant and bounded x-range.
    Smith {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
    },
    /// De Sitter: shooting agrees with the closed form.
    Pseudosphere {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Dimension of S^n_1.
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Exponential warping: integral criterion at both ends.
    Grw,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    NotFound,
}

impl Outcome {
    pub fn from_connected(connected: bool) -> Self {
        if connected {
            Outcome::Completed
        } else {
            Outcome::NotFound
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Outcome::Completed => 0,
            Outcome::NotFound => 2,
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<Outcome> {
    commands::dispatch(cli)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
