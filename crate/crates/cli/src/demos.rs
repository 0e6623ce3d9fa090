//! Worked examples with built-in assertions; a violated assertion is an error.

use std::f64::consts::PI;

use anyhow::{bail, Result};
use geoconn::connectivity::{desitter_connectable, shoot_connect, ShootingProblem};
use geoconn::geometry::{inner, integrate_with, GeodesicState, Geometry, IntegratorConfig};
use geoconn::models::{BatesTorus, EmbeddedPseudosphere, SmithTorus};
use geoconn::multiwarped::{check_integral_criterion, CriterionReport, CriterionVerdict, MultiwarpedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{envelope, Sink};
use crate::{Common, DemoCommand, Outcome};

pub const RANGE_BOUND: f64 = 2.0 * PI + 1e-3;

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// Geodesics faster than this multiple of the initial speed are cut off:
/// on incomplete models the velocity blows up in finite parameter.
pub const SPEED_CAP: f64 = 1e2;

/// Range of the first coordinate along the geodesic over `[-span, span]`
/// (or up to the speed cap), and the largest relative energy drift.
pub fn x_range<G: Geometry + ?Sized>(
    model: &G,
    p: &[f64],
    v: &[f64],
    span: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, Option<f64>)> {
    let (mut lo, mut hi) = (p[0], p[0]);
    let speed = |w: &[f64]| w.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cap = SPEED_CAP * speed(v);
    let energy = |st: &GeodesicState| inner(model, &st.pos, &st.vel, &st.vel).ok();
    let e0 = energy(&GeodesicState::new(p.to_vec(), v.to_vec(), 0.0));
    let mut drift: f64 = 0.0;
    for end in [span, -span] {
        let st = GeodesicState::new(p.to_vec(), v.to_vec(), 0.0);
        integrate_with(model, &st, end, cfg, |_, next| {
            if speed(&next.vel) > cap {
                return false;
            }
            lo = lo.min(next.pos[0]);
            hi = hi.max(next.pos[0]);
            if let (Some(a), Some(b)) = (e0, energy(next)) {
                drift = drift.max((b - a).abs() / a.abs().max(1e-12));
            }
            true
        })?;
    }
    Ok((hi - lo, e0.map(|_| drift)))
}

#[derive(Serialize)]
struct RangeDemo {
    count: usize,
    seed: u64,
    max_x_range: f64,
    bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_det_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_energy_drift: Option<f64>,
    pass: bool,
}

pub fn bates_ranges(count: usize, seed: u64) -> Result<Vec<f64>> {
    let m = BatesTorus::default();
    let cfg = IntegratorConfig {
        record_energy: false,
        ..Default::default()
    };
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, k);
            let p = [rng.random_range(0.0..m.period), rng.random_range(0.0..m.period)];
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            Ok(x_range(&m, &p, &v, 100.0, &cfg)?.0)
        })
        .collect()
}

/// `(|det g + 1|` maximum over `points` samples, x-ranges and energy drifts of
/// `count` non-null geodesics).
pub fn smith_checks(count: usize, points: usize, seed: u64) -> Result<(f64, Vec<(f64, f64)>)> {
    let m = SmithTorus::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut det_err: f64 = 0.0;
    for _ in 0..points {
        let x = [rng.random_range(0.0..m.period), rng.random_range(0.0..m.period)];
        let g = m.metric(&x).expect("metric model");
        det_err = det_err.max((g.determinant() + 1.0).abs());
    }
    let cfg = IntegratorConfig::default();
    let runs = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed.wrapping_add(1), k);
            let p = [rng.random_range(0.0..m.period), rng.random_range(0.0..m.period)];
            let g = m.metric(&p).expect("metric model");
            let v = loop {
                let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let e = g[(0, 0)] * v[0] * v[0] + 2.0 * g[(0, 1)] * v[0] * v[1] + g[(1, 1)] * v[1] * v[1];
                if e.abs() > 0.05 {
                    break v;
                }
            };
            let (r, d) = x_range(&m, &p, &v, 100.0, &cfg)?;
            Ok((r, d.unwrap_or(f64::NAN)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((det_err, runs))
}

/// Uniform-ish point of `S^n_1 ⊂ R^{n+1}_1`: time coordinate in `[-2, 2]`.
pub fn desitter_sample(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let t: f64 = rng.random_range(-2.0..2.0);
    let dir: Vec<f64> = loop {
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 0.1 && r <= 1.0 {
            break d.iter().map(|x| x / r).collect();
        }
    };
    let rad = (1.0 + t * t).sqrt();
    std::iter::once(t).chain(dir.iter().map(|x| rad * x)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DesitterAgreement {
    pub n: usize,
    pub pairs: usize,
    pub agree: usize,
    pub closed_form_connectable: usize,
    pub forbidden_successes: usize,
    pub agreement: f64,
}

/// Shooting against the closed form on `count` seeded pairs away from the
/// boundary `⟨p,q⟩ = -1`.
pub fn desitter_agreement(n: usize, count: usize, seed: u64, grid: usize) -> Result<DesitterAgreement> {
    let model = EmbeddedPseudosphere::de_sitter(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let p = desitter_sample(&mut rng, n);
        let q = desitter_sample(&mut rng, n);
        let v = desitter_connectable(&p, &q)?;
        if (v.inner + 1.0).abs() > 0.05 {
            pairs.push((p, q, v.connectable));
        }
    }
    let results: Vec<(bool, bool)> = pairs
        .par_iter()
        .map(|(p, q, closed)| {
            let mut prob = ShootingProblem::new(&model, p.clone(), q.clone()).with_frame(model.tangent_frame(p));
            prob.hints = vec![model.chord_direction(p, q)];
            prob.grid = grid;
            prob.multistart = 4;
            prob.s_max = 4.0;
            prob.cfg.record_energy = false;
            Ok((*closed, shoot_connect(&prob)?.is_connected()))
        })
        .collect::<Result<_>>()?;
    let agree = results.iter().filter(|(a, b)| a == b).count();
    Ok(DesitterAgreement {
        n,
        pairs: count,
        agree,
        closed_form_connectable: results.iter().filter(|r| r.0).count(),
        forbidden_successes: results.iter().filter(|(a, b)| !a && *b).count(),
        agreement: agree as f64 / count.max(1) as f64,
    })
}

#[derive(Serialize)]
struct GrwDemo {
    #[serde(flatten)]
    criterion: CriterionReport,
    pass: bool,
}

pub fn run(c: &Common, sink: &Sink, cmd: DemoCommand) -> Result<Outcome> {
    match cmd {
        DemoCommand::Bates { count } => {
            let ranges = bates_ranges(count, c.seed)?;
            let max = ranges.iter().copied().fold(0.0, f64::max);
            let pass = max <= RANGE_BOUND;
            sink.json(&envelope(
                "demo-bates",
                RangeDemo {
                    count,
                    seed: c.seed,
                    max_x_range: max,
                    bound: RANGE_BOUND,
                    max_det_error: None,
                    max_energy_drift: None,
                    pass,
                },
            ))?;
            if !pass {
                bail!("assertion violated: x-range {max} exceeds {RANGE_BOUND}");
            }
        }
        DemoCommand::Smith { count, points } => {
            let (det, runs) = smith_checks(count, points, c.seed)?;
            let max = runs.iter().map(|r| r.0).fold(0.0, f64::max);
            let drift = runs.iter().map(|r| r.1).fold(0.0, f64::max);
            let pass = max <= RANGE_BOUND && det <= 1e-12 && drift <= 1e-7;
            sink.json(&envelope(
                "demo-smith",
                RangeDemo {
                    count,
                    seed: c.seed,
                    max_x_range: max,
                    bound: RANGE_BOUND,
                    max_det_error: Some(det),
                    max_energy_drift: Some(drift),
                    pass,
                },
            ))?;
            if !pass {
                bail!("assertion violated: x-range {max}, |det g + 1| {det}, energy drift {drift}");
            }
        }
        DemoCommand::Pseudosphere { count, n } => {
            if !(2..=3).contains(&n) {
                bail!("--n: 2 or 3");
            }
            let a = desitter_agreement(n, count, c.seed, if n == 2 { 16 } else { 8 })?;
            let pass = a.agreement >= 0.99 && a.forbidden_successes == 0;
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                a: DesitterAgreement,
                pass: bool,
            }
            sink.json(&envelope("demo-pseudosphere", Out { a: a.clone(), pass }))?;
            if !pass {
                bail!(
                    "assertion violated: agreement {:.4}, {} forbidden successes",
                    a.agreement,
                    a.forbidden_successes
                );
            }
        }
        DemoCommand::Grw => {
            let model = MultiwarpedModel::preset("grw-exp")?;
            let r = check_integral_criterion(&model, 0.0)?;
            let pass = r.lower.verdicts.iter().all(|v| *v == CriterionVerdict::Divergent)
                && r.upper.verdicts.iter().all(|v| *v == CriterionVerdict::Convergent);
            sink.json(&envelope("demo-grw", GrwDemo { criterion: r, pass }))?;
            if !pass {
                bail!("assertion violated: expected divergent toward -inf and convergent toward +inf");
            }
        }
    }
    Ok(Outcome::Completed)
}
