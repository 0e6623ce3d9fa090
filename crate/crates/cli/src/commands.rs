use anyhow::{bail, Context, Result};
use geoconn::connectivity::{
    desitter_geodesic, desitter_report, reachability_raster, shoot_connect, RasterSpec, ShootingProblem, Solution,
};
use geoconn::convexity::{
    audit_conditions, check_lc, classify_boundary, connect_in_domain, project_to_level, winding_path, BoundaryPoint,
    DomainSpec, LcCheck, PenalizedProblem,
};
use geoconn::geometry::{integrate_geodesic, GeodesicState, Geometry, IntegratorConfig, StepStats, Termination};
use geoconn::models::{make_model, EmbeddedPseudosphere, ModelId, ModelName};
use geoconn::multiwarped::{
    causal_connect, check_integral_criterion, solve_connection, MultiwarpedModel, SolveOptions,
};
use geoconn::stationary::{action_f, audit_connectedness, split_f1_f2, DiscreteCurve, StationaryModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{check_len, envelope, load_model, read_config, Sink};
use crate::{demos, Cli, Command, Common, ConvexityCommand, MultiwarpedCommand, Outcome, StationaryCommand};

pub fn dispatch(cli: Cli) -> Result<Outcome> {
    let c = &cli.common;
    let sink = Sink {
        out: c.out.clone(),
        csv: c.csv.clone(),
    };
    match cli.command {
        Command::Integrate { p, v, fixed_step } => integrate(c, &sink, p.0, v.0, fixed_step),
        Command::Connect {
            p,
            q,
            v_max,
            multistart,
            grid,
            lifts,
        } => connect(c, &sink, p.0, q.0, v_max, multistart, grid, lifts),
        Command::Raster {
            p,
            lo,
            hi,
            cell,
            directions,
        } => raster(c, &sink, p.0, lo.0, hi.0, cell, directions),
        Command::Desitter { p, q } => desitter(&sink, p.0, q.0),
        Command::Multiwarped { command } => multiwarped(c, &sink, command),
        Command::Convexity { domain, command } => convexity(c, &sink, &domain, command),
        Command::Stationary { command } => stationary(c, &sink, command),
        Command::Demo { command } => demos::run(c, &sink, command),
    }
}

pub fn integrator(c: &Common) -> Result<IntegratorConfig> {
    let cfg = match c.tol {
        Some(t) => IntegratorConfig::with_tol(t),
        None => IntegratorConfig::default(),
    };
    cfg.validate().context("--tol")?;
    Ok(cfg)
}

#[derive(Serialize)]
struct IntegrateReport {
    termination: Termination,
    s_reached: f64,
    final_state: GeodesicState,
    steps: StepStats,
    energy_initial: Option<f64>,
    energy_drift: Option<f64>,
}

fn integrate(c: &Common, sink: &Sink, p: Vec<f64>, v: Vec<f64>, fixed_step: Option<f64>) -> Result<Outcome> {
    let model = make_model(&load_model(c.model.as_deref())?).context("--model")?;
    check_len("--p", &p, model.dim())?;
    check_len("--v", &v, model.dim())?;
    let mut cfg = integrator(c)?;
    cfg.fixed_step = fixed_step;
    cfg.validate().context("--fixed-step")?;
    let s_max = c.s_max.unwrap_or(10.0);
    let tr = integrate_geodesic(&*model, &GeodesicState::new(p, v, 0.0), (0.0, s_max), &cfg)?;
    let drift = tr.energy_drift();
    sink.json(&envelope(
        "trajectory",
        IntegrateReport {
            termination: tr.termination,
            s_reached: tr.last().s,
            final_state: tr.last().clone(),
            steps: tr.step_stats,
            energy_initial: drift.map(|d| d.initial),
            energy_drift: drift.map(|d| d.relative_or_abs()),
        },
    ))?;
    sink.csv(&tr.to_csv())?;
    Ok(Outcome::Completed)
}

/// One CSV block per solution, re-integrated from `p`.
fn solutions_csv<G: Geometry + ?Sized>(
    model: &G,
    p: &[f64],
    solutions: &[Solution],
    cfg: &IntegratorConfig,
) -> Result<String> {
    let mut out = String::new();
    for (k, sol) in solutions.iter().enumerate() {
        let st = GeodesicState::new(p.to_vec(), sol.initial_velocity.clone(), 0.0);
        let cfg = IntegratorConfig {
            record_energy: true,
            ..*cfg
        };
        let csv = integrate_geodesic(model, &st, (0.0, sol.arrival_s), &cfg)?.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if k == 0 {
            out.push_str(&format!("solution,{header}\n"));
        }
        for l in lines {
            out.push_str(&format!("{k},{l}\n"));
        }
    }
    Ok(out)
}

type Frame = Vec<Vec<f64>>;

/// Tangent frame at `p` and the chord hint toward `q` on embedded pseudospheres.
fn embedded_frame(id: &ModelId, p: &[f64], q: &[f64]) -> Result<Option<(Frame, Vec<f64>)>> {
    if id.name != ModelName::Pseudosphere || id.params.get("embedded").and_then(|v| v.as_bool()) != Some(true) {
        return Ok(None);
    }
    let get = |k: &str, d: usize| id.params.get(k).and_then(|v| v.as_u64()).map_or(d, |v| v as usize);
    let m = EmbeddedPseudosphere::new(get("n", 2), get("nu", 1))?;
    Ok(Some((m.tangent_frame(p), m.chord_direction(p, q))))
}

#[allow(clippy::too_many_arguments)]
fn connect(
    c: &Common,
    sink: &Sink,
    p: Vec<f64>,
    q: Vec<f64>,
    v_max: f64,
    multistart: usize,
    grid: usize,
    lifts: u32,
) -> Result<Outcome> {
    let id = load_model(c.model.as_deref())?;
    let model = make_model(&id).context("--model")?;
    check_len("--p", &p, model.dim())?;
    check_len("--q", &q, model.dim())?;
    if !(v_max > 0.0) || grid < 2 || multistart == 0 {
        bail!("--v-max must be positive, --grid at least 2 and --multistart at least 1");
    }
    let cfg = integrator(c)?;
    let mut prob = ShootingProblem::new(&*model, p.clone(), q.clone());
    if let Some((frame, hint)) = embedded_frame(&id, &p, &q)? {
        prob = prob.with_frame(frame);
        prob.hints.push(hint);
    }
    let d = prob.v_lo.len();
    prob = prob.with_box(vec![-v_max; d], vec![v_max; d]);
    prob.s_max = c.s_max.unwrap_or(prob.s_max);
    prob.tol_endpoint = c.tol.unwrap_or(prob.tol_endpoint);
    prob.multistart = multistart;
    prob.grid = grid;
    prob.lattice = id.lattice()?.map(|l| (l, lifts));
    prob.cfg = cfg;
    let report = shoot_connect(&prob)?;
    sink.json(&report)?;
    if sink.csv.is_some() {
        sink.csv(&solutions_csv(&*model, &p, &report.solutions, &cfg)?)?;
    }
    Ok(Outcome::from_connected(report.is_connected()))
}

#[derive(Serialize)]
struct RasterReport {
    lo: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    cells_hit: usize,
    directions: usize,
    s_max: f64,
}

fn raster(
    c: &Common,
    sink: &Sink,
    p: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cell: f64,
    directions: usize,
) -> Result<Outcome> {
    let id = load_model(c.model.as_deref())?;
    let model = make_model(&id).context("--model")?;
    if model.dim() != 2 {
        bail!("raster: model must be 2-dimensional");
    }
    check_len("--p", &p, 2)?;
    check_len("--lo", &lo, 2)?;
    check_len("--hi", &hi, 2)?;
    let spec = RasterSpec {
        lo: [lo[0], lo[1]],
        hi: [hi[0], hi[1]],
        cell,
        directions,
        s_max: c.s_max.unwrap_or(5.0),
        frame: None,
        wrap: id.lattice()?,
    };
    let r = reachability_raster(&*model, &p, &spec)?;
    sink.json(&envelope(
        "raster",
        RasterReport {
            lo: r.lo,
            cell: r.cell,
            nx: r.nx,
            ny: r.ny,
            cells_hit: r.count(),
            directions,
            s_max: spec.s_max,
        },
    ))?;
    sink.csv(&r.to_csv())?;
    Ok(Outcome::Completed)
}

fn desitter(sink: &Sink, p: Vec<f64>, q: Vec<f64>) -> Result<Outcome> {
    if p.len() < 3 || p.len() != q.len() {
        bail!("--p, --q: need two points of equal length >= 3 on the de Sitter quadric");
    }
    let report = desitter_report(&p, &q)?;
    sink.json(&report)?;
    if sink.csv.is_some() {
        let mut out = String::from("s");
        for i in 0..p.len() {
            out.push_str(&format!(",x_{i}"));
        }
        out.push('\n');
        if let Some(g) = desitter_geodesic(&p, &q)? {
            for k in 0..=100 {
                let s = g.s_end * k as f64 / 100.0;
                out.push_str(&format!("{s:.17e}"));
                for x in g.point(s) {
                    out.push_str(&format!(",{x:.17e}"));
                }
                out.push('\n');
            }
        }
        sink.csv(&out)?;
    }
    Ok(Outcome::from_connected(report.is_connected()))
}

fn multiwarped_model(c: &Common) -> Result<MultiwarpedModel> {
    let id = load_model(c.model.as_deref())?;
    if id.name != ModelName::Multiwarped {
        bail!("--model: expected a multiwarped model");
    }
    MultiwarpedModel::from_params(&id.params).context("--model")
}

fn multiwarped(c: &Common, sink: &Sink, cmd: MultiwarpedCommand) -> Result<Outcome> {
    let model = multiwarped_model(c)?;
    let mut opts = SolveOptions {
        max_winding: c.max_winding.unwrap_or(0),
        ..Default::default()
    };
    if let Some(t) = c.tol {
        if !(t > 0.0) {
            bail!("--tol: must be positive");
        }
        opts.tol_endpoint = t;
    }
    let (z, report) = match cmd {
        MultiwarpedCommand::Criterion { probe } => {
            let r = check_integral_criterion(&model, probe)?;
            sink.json(&envelope("integral-criterion", r))?;
            return Ok(Outcome::Completed);
        }
        MultiwarpedCommand::Connect { z, w } => {
            let r = solve_connection(&model, &z.0, &w.0, &opts)?;
            (z.0, r)
        }
        MultiwarpedCommand::Causal { z, w } => {
            let r = causal_connect(&model, &z.0, &w.0, &opts)?;
            (z.0, r)
        }
    };
    sink.json(&report)?;
    if sink.csv.is_some() {
        sink.csv(&solutions_csv(&model, &z, &report.report.solutions, &opts.cfg)?)?;
    }
    Ok(Outcome::from_connected(report.report.is_connected()))
}

#[derive(Serialize)]
struct ClassifiedPoint {
    #[serde(flatten)]
    boundary: BoundaryPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    lc: Option<LcCheck>,
}

#[derive(Serialize)]
struct Classification {
    points: Vec<ClassifiedPoint>,
}

fn convexity(c: &Common, sink: &Sink, domain: &str, cmd: ConvexityCommand) -> Result<Outcome> {
    let dom = DomainSpec::from_json(&read_config(domain)?).context("--domain")?;
    let n = dom.dim();
    match cmd {
        ConvexityCommand::Classify {
            points,
            samples,
            directions,
            radius,
        } => {
            let pts = match points {
                Some(p) => {
                    for x in &p.0 {
                        check_len("--points", x, n)?;
                    }
                    p.0
                }
                None => {
                    let (lo, hi) = dom
                        .bounds
                        .clone()
                        .context("--points: required when the domain file has no bounds")?;
                    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
                    let mut out = Vec::new();
                    let mut tries = 0;
                    while out.len() < samples && tries < 100 * samples.max(1) {
                        tries += 1;
                        let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
                        if project_to_level(&dom, &x, 0.0).is_ok() {
                            out.push(x);
                        }
                    }
                    out
                }
            };
            let classes = classify_boundary(&dom, &pts, directions)?;
            let mut out = Vec::with_capacity(classes.len());
            for b in classes {
                let lc = if radius > 0.0 {
                    Some(check_lc(&dom, &b.point, radius, directions)?)
                } else {
                    None
                };
                out.push(ClassifiedPoint { boundary: b, lc });
            }
            sink.json(&envelope("boundary-classification", Classification { points: out }))?;
            Ok(Outcome::Completed)
        }
        ConvexityCommand::Audit { ladder, samples } => {
            let ladder = ladder.map_or_else(|| vec![0.1, 0.03, 0.01, 0.003, 0.001], |l| l.0);
            let a = audit_conditions(&dom, &ladder, samples, c.seed)?;
            sink.json(&envelope("conditions-audit", a))?;
            Ok(Outcome::Completed)
        }
        ConvexityCommand::Connect {
            p,
            q,
            winding,
            center,
            eps_steps,
        } => {
            check_len("--p", &p.0, n)?;
            check_len("--q", &q.0, n)?;
            let mut prob = PenalizedProblem::new(&dom, p.0.clone(), q.0.clone());
            prob.n_nodes = c.n_nodes.unwrap_or(prob.n_nodes);
            prob.eps0 = c.eps0;
            prob.eps_steps = eps_steps;
            prob.residual_tol = c.tol.unwrap_or(prob.residual_tol);
            if let Some(k) = winding {
                if n != 2 {
                    bail!("--winding: only planar domains");
                }
                let center = center.map_or(vec![0.0, 0.0], |c| c.0);
                check_len("--center", &center, 2)?;
                prob.initial = Some(winding_path(&p.0, &q.0, &center, k, prob.n_nodes));
            }
            let r = connect_in_domain(&prob)?;
            sink.json(&r)?;
            sink.csv(&r.path_csv())?;
            Ok(Outcome::from_connected(r.report.is_connected()))
        }
    }
}

fn stationary_model(c: &Common) -> Result<StationaryModel> {
    let id = load_model(c.model.as_deref())?;
    if id.name != ModelName::StandardStationary {
        bail!("--model: expected a standard-stationary model");
    }
    StationaryModel::from_params(&id.params).context("--model")
}

#[derive(Serialize)]
struct SplitRow {
    curve: usize,
    f: f64,
    f1: f64,
    f2: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct SplitReport {
    curves: Vec<SplitRow>,
    max_relative_error: f64,
    f2_nonpositive: bool,
}

/// Seeded random curve in `(t, x…)`: a chord plus a few sine modes.
pub fn random_curve(dim: usize, seed: u64, index: usize, segments: usize) -> Result<DiscreteCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let modes: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    Ok(DiscreteCurve::sample(
        |s| {
            (0..dim)
                .map(|i| {
                    a[i] + s * (b[i] - a[i])
                        + modes
                            .iter()
                            .enumerate()
                            .map(|(k, m)| m[i] * ((k + 1) as f64 * std::f64::consts::PI * s).sin())
                            .sum::<f64>()
                })
                .collect()
        },
        segments,
    )?)
}

fn stationary(c: &Common, sink: &Sink, cmd: StationaryCommand) -> Result<Outcome> {
    let model = stationary_model(c)?;
    match cmd {
        StationaryCommand::Split { curves, segments } => {
            if segments == 0 {
                bail!("--segments: must be positive");
            }
            let rows: Vec<SplitRow> = (0..curves)
                .into_par_iter()
                .map(|k| -> Result<SplitRow> {
                    let curve = random_curve(model.dim(), c.seed, k, segments)?;
                    let f = action_f(&model, &curve)?;
                    let (f1, f2) = split_f1_f2(&model, &curve)?;
                    let scale = f.abs().max(f1.abs() + f2.abs()).max(f64::MIN_POSITIVE);
                    Ok(SplitRow {
                        curve: k,
                        f,
                        f1,
                        f2,
                        relative_error: (f - f1 - f2).abs() / scale,
                    })
                })
                .collect::<Result<_>>()?;
            let mut csv = String::from("curve,f,f1,f2,relative_error\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    r.curve, r.f, r.f1, r.f2, r.relative_error
                ));
            }
            let report = SplitReport {
                max_relative_error: rows.iter().map(|r| r.relative_error).fold(0.0, f64::max),
                f2_nonpositive: rows.iter().all(|r| r.f2 <= 0.0),
                curves: rows,
            };
            sink.json(&envelope("stationary-split", report))?;
            sink.csv(&csv)?;
            Ok(Outcome::Completed)
        }
        StationaryCommand::Audit { lo, hi, p0, samples } => {
            let a = audit_connectedness(&model, &lo.0, &hi.0, &p0.0, samples)?;
            sink.json(&envelope("stationary-audit", a))?;
            Ok(Outcome::Completed)
        }
    }
}
