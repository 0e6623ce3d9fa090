//! Two-point connection search by shooting, reachability rasters for the
//! image of the exponential map, and the closed-form connectivity test on
//! de Sitter space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{integrate_with, GeodesicState, Geometry, IntegratorConfig, Termination};
use crate::models::{minkowski_inner, quotient_displacement, LatticeQuotient};
use crate::solve::levenberg_marquardt;
use crate::{Error, Result};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Connected,
    NotFound,
    UnreachableClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictSource {
    Shooting,
    ClosedForm,
    Reduction,
    PenalizedAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub initial_velocity: Vec<f64>,
    pub arrival_s: f64,
    pub endpoint_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub schema: u32,
    pub status: Status,
    pub verdict_source: VerdictSource,
    pub solutions: Vec<Solution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub diagnostics: Vec<String>,
}

impl ConnectivityReport {
    pub fn new(status: Status, verdict_source: VerdictSource) -> Self {
        ConnectivityReport {
            schema: REPORT_SCHEMA,
            status,
            verdict_source,
            solutions: Vec::new(),
            reason: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.status == Status::Connected
    }
}

/// A shooting query from `p` to `q`.
///
/// Initial velocities are `Σ a_i e_i` over `frame` (coordinate basis when
/// `None`) with coefficients `a` in the box `[v_lo, v_hi]`.
#[derive(Debug, Clone)]
pub struct ShootingProblem<'a, G: Geometry + ?Sized> {
    pub model: &'a G,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    pub frame: Option<Vec<Vec<f64>>>,
    pub s_max: f64,
    pub tol_endpoint: f64,
    /// Number of grid seeds refined.
    pub multistart: usize,
    /// Coarse grid points per velocity axis.
    pub grid: usize,
    pub lattice: Option<(LatticeQuotient, u32)>,
    /// Extra search directions (frame coefficients) followed up to `s_max`
    /// like grid points; their closest approaches are always refined.
    pub hints: Vec<Vec<f64>>,
    pub cfg: IntegratorConfig,
}

impl<'a, G: Geometry + ?Sized> ShootingProblem<'a, G> {
    pub fn new(model: &'a G, p: Vec<f64>, q: Vec<f64>) -> Self {
        let n = model.dim();
        ShootingProblem {
            model,
            p,
            q,
            v_lo: vec![-1.0; n],
            v_hi: vec![1.0; n],
            frame: None,
            s_max: 5.0,
            tol_endpoint: 1e-8,
            multistart: 8,
            grid: 16,
            lattice: None,
            hints: Vec::new(),
            cfg: IntegratorConfig::default(),
        }
    }

    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.v_lo = lo;
        self.v_hi = hi;
        self
    }

    pub fn with_frame(mut self, frame: Vec<Vec<f64>>) -> Self {
        let d = frame.len();
        self.frame = Some(frame);
        if self.v_lo.len() != d {
            self.v_lo = vec![-1.0; d];
            self.v_hi = vec![1.0; d];
        }
        self
    }

    fn velocity(&self, a: &[f64]) -> Vec<f64> {
        match &self.frame {
            None => a.to_vec(),
            Some(f) => {
                let mut v = vec![0.0; self.model.dim()];
                for (c, e) in a.iter().zip(f) {
                    for (vi, ei) in v.iter_mut().zip(e) {
                        *vi += c * ei;
                    }
                }
                v
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.model.dim();
        crate::geometry::check_dim(n, self.p.len())?;
        crate::geometry::check_dim(n, self.q.len())?;
        let d = self.frame.as_ref().map_or(n, |f| f.len());
        crate::geometry::check_dim(d, self.v_lo.len())?;
        crate::geometry::check_dim(d, self.v_hi.len())?;
        if let Some(f) = &self.frame {
            for e in f {
                crate::geometry::check_dim(n, e.len())?;
            }
        }
        for h in &self.hints {
            crate::geometry::check_dim(d, h.len())?;
            if h.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParams("hint directions must be finite".into()));
            }
        }
        if !(self.tol_endpoint > 0.0) {
            return Err(Error::InvalidParams("tol_endpoint must be positive".into()));
        }
        if self.v_lo.iter().zip(&self.v_hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParams("velocity box is degenerate".into()));
        }
        if !(self.s_max > 0.0) || self.grid < 2 || self.multistart == 0 {
            return Err(Error::InvalidParams(
                "need s_max > 0, grid >= 2 and multistart >= 1".into(),
            ));
        }
        for x in [&self.p, &self.q] {
            if !self.model.contains(x) {
                return Err(Error::OutsideDomain(x.clone()));
            }
        }
        Ok(())
    }

    fn targets(&self) -> Vec<Vec<f64>> {
        match &self.lattice {
            None => vec![self.q.clone()],
            Some((lat, w)) => quotient_displacement(lat, &self.p, &self.q, *w),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
struct Seed {
    a: Vec<f64>,
    miss: f64,
    s_at: f64,
    target: usize,
}

fn grid_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|k| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    lo[k] + (hi[k] - lo[k]) * i as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Multistart shooting: coarse grid evaluation of
/// `miss(a) = min_{s ≤ s_max} |exp_p(v(a), s) - q|`, then Levenberg–Marquardt
/// refinement of `w = s·a` with the endpoint at unit parameter. Every
/// returned solution is re-integrated at the configured tolerance.
///
/// `not-found` is never a proof that no geodesic exists.
pub fn shoot_connect<G: Geometry + ?Sized>(prob: &ShootingProblem<'_, G>) -> Result<ConnectivityReport> {
    prob.validate()?;
    let targets = prob.targets();
    let mut report = ConnectivityReport::new(Status::NotFound, VerdictSource::Shooting);
    let d = prob.v_lo.len();

    if let Some(t) = targets.iter().position(|t| dist(&prob.p, t) <= prob.tol_endpoint) {
        if t == 0 || prob.lattice.is_none() {
            report.status = Status::Connected;
            report.solutions.push(Solution {
                initial_velocity: vec![0.0; prob.model.dim()],
                arrival_s: 0.0,
                endpoint_error: dist(&prob.p, &targets[t]),
                action: None,
            });
            report.diagnostics.push("p = q: constant geodesic".into());
        }
    }

    let coarse = IntegratorConfig {
        abs_tol: 1e-9,
        rel_tol: 1e-9,
        h_max: prob.s_max / 32.0,
        record_energy: false,
        ..prob.cfg
    };
    let closest = |a: Vec<f64>, span: f64| {
        let v = prob.velocity(&a);
        let mut best = (f64::INFINITY, 0.0, 0usize);
        let mut consider = |st: &GeodesicState| {
            for (i, t) in targets.iter().enumerate() {
                let m = dist(&st.pos, t);
                if m < best.0 {
                    best = (m, st.s, i);
                }
            }
        };
        let st = GeodesicState::new(prob.p.clone(), v, 0.0);
        let _ = integrate_with(prob.model, &st, span, &coarse, |_, next| {
            consider(next);
            true
        });
        Seed {
            a,
            miss: best.0,
            s_at: best.1,
            target: best.2,
        }
    };
    let points = grid_points(&prob.v_lo, &prob.v_hi, prob.grid);
    let mut seeds: Vec<Seed> = points.into_par_iter().map(|a| closest(a, prob.s_max)).collect();
    seeds.retain(|s| s.miss.is_finite() && s.s_at > 0.0);
    seeds.sort_by(|x, y| x.miss.total_cmp(&y.miss).then_with(|| lex(&x.a, &y.a)));
    if let Some(best) = seeds.first() {
        report
            .diagnostics
            .push(format!("best coarse miss {:.3e} at s = {:.4}", best.miss, best.s_at));
    }
    seeds.truncate(prob.multistart);
    seeds.extend(
        prob.hints
            .iter()
            .map(|h| closest(h.clone(), prob.s_max))
            .filter(|s| s.miss.is_finite() && s.s_at > 0.0),
    );
    report.diagnostics.push(format!(
        "grid {}^{} velocities and {} hints, {} seeds refined",
        prob.grid,
        d,
        prob.hints.len(),
        seeds.len()
    ));

    // refinement stays within the searched velocities scaled by s_max
    let reach: Vec<f64> = (0..d)
        .map(|i| {
            let hint = prob.hints.iter().map(|h| h[i].abs()).fold(0.0, f64::max);
            2.0 * prob.s_max * prob.v_lo[i].abs().max(prob.v_hi[i].abs()).max(hint)
        })
        .collect();
    let flow = |b: &[f64], target: &[f64], cfg: &IntegratorConfig| -> Option<Vec<f64>> {
        if b.iter().zip(&reach).any(|(x, r)| x.abs() > *r) {
            return None;
        }
        let st = GeodesicState::new(prob.p.clone(), prob.velocity(b), 0.0);
        match integrate_with(prob.model, &st, 1.0, cfg, |_, _| true) {
            Ok((end, _, Termination::SpanComplete)) => Some(end.pos.iter().zip(target).map(|(x, y)| x - y).collect()),
            _ => None,
        }
    };
    let refine_cfg = IntegratorConfig {
        record_energy: false,
        ..prob.cfg
    };
    let refined: Vec<Option<(Vec<f64>, f64, f64)>> = seeds
        .par_iter()
        .map(|seed| {
            let target = &targets[seed.target];
            let b0: Vec<f64> = seed.a.iter().map(|x| x * seed.s_at).collect();
            let lm = levenberg_marquardt(
                |b| flow(b, target, &refine_cfg),
                &b0,
                1e-6,
                50,
                1e-2 * prob.tol_endpoint,
            )?;
            let err = flow(&lm.x, target, &refine_cfg)?
                .iter()
                .map(|r| r * r)
                .sum::<f64>()
                .sqrt();
            (err <= prob.tol_endpoint).then_some((lm.x, err, seed.s_at))
        })
        .collect();

    let mut kept: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for (b, err, s_at) in refined.into_iter().flatten() {
        if kept.iter().all(|(k, _, _)| dist(k, &b) >= 1e-4) {
            kept.push((b, err, s_at));
        }
    }
    kept.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| lex(&x.0, &y.0)));
    for (b, err, s_at) in kept {
        let v: Vec<f64> = prob.velocity(&b).iter().map(|x| x / s_at).collect();
        report.solutions.push(Solution {
            initial_velocity: v,
            arrival_s: s_at,
            endpoint_error: err,
            action: None,
        });
    }
    if report.solutions.is_empty() {
        report.reason = Some("no validated solution; this does not prove disconnection".into());
    } else {
        report.status = Status::Connected;
    }
    Ok(report)
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Occupancy of a 2-d chart box by `exp_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Raster {
    pub lo: [f64; 2],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `hits[j * nx + i]` for cell column `i`, row `j`.
    pub hits: Vec<bool>,
}

impl Raster {
    pub fn hit(&self, i: usize, j: usize) -> bool {
        self.hits[j * self.nx + i]
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.lo[0] + (i as f64 + 0.5) * self.cell,
            self.lo[1] + (j as f64 + 0.5) * self.cell,
        ]
    }

    pub fn count(&self) -> usize {
        self.hits.iter().filter(|h| **h).count()
    }

    /// Rows `i,j,x,y,hit` with the cell centre coordinates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,x,y,hit\n");
        for j in 0..self.ny {
            for i in 0..self.nx {
                let c = self.center(i, j);
                out.push_str(&format!("{i},{j},{},{},{}\n", c[0], c[1], self.hit(i, j) as u8));
            }
        }
        out
    }

    fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let fi = (x[0] - self.lo[0]) / self.cell;
        let fj = (x[1] - self.lo[1]) / self.cell;
        if fi < 0.0 || fj < 0.0 || !fi.is_finite() || !fj.is_finite() {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.nx && j < self.ny).then_some(j * self.nx + i)
    }
}

#[derive(Debug, Clone)]
pub struct RasterSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub cell: f64,
    /// Directions `cos α e₁ + sin α e₂` at `α = 2πk/directions`.
    pub directions: usize,
    pub s_max: f64,
    pub frame: Option<[Vec<f64>; 2]>,
    /// Positions are wrapped into the fundamental domain before marking.
    pub wrap: Option<LatticeQuotient>,
}

/// Marks every cell crossed by `exp_p(v, s)` for `s ∈ [0, s_max]` and
/// unit directions `v`.
///
/// Trajectories use fixed RK4 steps and chords between steps are marked
/// densely, so raising `s_max` or doubling `directions` only adds cells.
pub fn reachability_raster<G: Geometry + ?Sized>(model: &G, p: &[f64], spec: &RasterSpec) -> Result<Raster> {
    if model.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: model.dim(),
        });
    }
    crate::geometry::check_dim(2, p.len())?;
    if !(spec.cell > 0.0) || spec.lo[0] >= spec.hi[0] || spec.lo[1] >= spec.hi[1] {
        return Err(Error::InvalidParams("raster box or cell size is invalid".into()));
    }
    if spec.directions == 0 || !(spec.s_max >= 0.0) {
        return Err(Error::InvalidParams("need directions >= 1 and s_max >= 0".into()));
    }
    if !model.contains(p) {
        return Err(Error::OutsideDomain(p.to_vec()));
    }
    let nx = ((spec.hi[0] - spec.lo[0]) / spec.cell).ceil() as usize;
    let ny = ((spec.hi[1] - spec.lo[1]) / spec.cell).ceil() as usize;
    let mut raster = Raster {
        lo: spec.lo,
        cell: spec.cell,
        nx,
        ny,
        hits: vec![false; nx * ny],
    };
    let h = (spec.cell / 4.0).min(spec.s_max / 16.0).max(1e-6);
    let cfg = IntegratorConfig {
        fixed_step: Some(h),
        record_energy: false,
        max_steps: usize::MAX,
        ..Default::default()
    };
    let (e1, e2) = match &spec.frame {
        Some([a, b]) => (a.clone(), b.clone()),
        None => (vec![1.0, 0.0], vec![0.0, 1.0]),
    };
    let wrap = |x: &[f64]| -> Vec<f64> {
        match &spec.wrap {
            Some(l) => {
                let w = l.wrap(&[x[0] - spec.lo[0], x[1] - spec.lo[1]]);
                vec![w[0] + spec.lo[0], w[1] + spec.lo[1]]
            }
            None => x.to_vec(),
        }
    };
    let r = &raster;
    let marked: Vec<Vec<usize>> = (0..spec.directions)
        .into_par_iter()
        .map(|k| {
            let alpha = 2.0 * std::f64::consts::PI * k as f64 / spec.directions as f64;
            let (s, c) = alpha.sin_cos();
            let v = vec![c * e1[0] + s * e2[0], c * e1[1] + s * e2[1]];
            let mut cells = Vec::new();
            if let Some(ci) = r.cell_of(&wrap(p)) {
                cells.push(ci);
            }
            let st = GeodesicState::new(p.to_vec(), v, 0.0);
            let _ = integrate_with(model, &st, spec.s_max, &cfg, |prev, next| {
                if next.s - prev.s < h * (1.0 - 1e-9) {
                    // partial final step: its end point depends on s_max
                    return true;
                }
                let len = dist(&prev.pos, &next.pos);
                let pieces = ((len / (0.25 * spec.cell)).ceil() as usize).clamp(1, 100_000);
                for m in 1..=pieces {
                    let t = m as f64 / pieces as f64;
                    let x = [
                        prev.pos[0] + t * (next.pos[0] - prev.pos[0]),
                        prev.pos[1] + t * (next.pos[1] - prev.pos[1]),
                    ];
                    if let Some(ci) = r.cell_of(&wrap(&x)) {
                        cells.push(ci);
                    }
                }
                true
            });
            cells
        })
        .collect();
    for ci in marked.into_iter().flatten() {
        raster.hits[ci] = true;
    }
    Ok(raster)
}

const QUADRIC_TOL: f64 = 1e-9;
const BOUNDARY_TOL: f64 = 1e-10;
const NULL_TOL: f64 = 1e-10;

fn check_desitter_point(p: &[f64]) -> Result<()> {
    if p.len() < 3 {
        return Err(Error::Dimension {
            expected: 3,
            got: p.len(),
        });
    }
    let r = minkowski_inner(1, p, p) - 1.0;
    if r.abs() > QUADRIC_TOL {
        return Err(Error::OffQuadric(r));
    }
    Ok(())
}

/// `⟨p, q⟩₁ = -p⁰q⁰ + Σ pⁱqⁱ` for on-quadric points of de Sitter space.
pub fn desitter_inner(p: &[f64], q: &[f64]) -> Result<f64> {
    check_desitter_point(p)?;
    check_desitter_point(q)?;
    crate::geometry::check_dim(p.len(), q.len())?;
    Ok(minkowski_inner(1, p, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesitterVerdict {
    pub connectable: bool,
    pub inner: f64,
    /// `|⟨p,q⟩₁ + 1| < 1e-10`: the strict criterion is indeterminate here.
    pub boundary: bool,
}

/// Two points of de Sitter space are joined by a geodesic iff `⟨p,q⟩₁ > -1`.
pub fn desitter_connectable(p: &[f64], q: &[f64]) -> Result<DesitterVerdict> {
    let inner = desitter_inner(p, q)?;
    Ok(DesitterVerdict {
        connectable: inner > -1.0,
        inner,
        boundary: (inner + 1.0).abs() < BOUNDARY_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeodesicForm {
    Constant,
    Trigonometric,
    Hyperbolic,
    Null,
}

/// The geodesic in the plane spanned by `p` and `q`, reaching `q` at `s_end`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesitterGeodesic {
    pub p: Vec<f64>,
    /// Unit (or, for the null form, unnormalized) initial velocity.
    pub dir: Vec<f64>,
    pub form: GeodesicForm,
    pub s_end: f64,
}

impl DesitterGeodesic {
    pub fn point(&self, s: f64) -> Vec<f64> {
        let (a, b) = match self.form {
            GeodesicForm::Constant => (1.0, 0.0),
            GeodesicForm::Trigonometric => (s.cos(), s.sin()),
            GeodesicForm::Hyperbolic => (s.cosh(), s.sinh()),
            GeodesicForm::Null => (1.0, s),
        };
        self.p.iter().zip(&self.dir).map(|(x, d)| a * x + b * d).collect()
    }

    pub fn velocity(&self, s: f64) -> Vec<f64> {
        let (a, b) = match self.form {
            GeodesicForm::Constant => (0.0, 0.0),
            GeodesicForm::Trigonometric => (-s.sin(), s.cos()),
            GeodesicForm::Hyperbolic => (s.sinh(), s.cosh()),
            GeodesicForm::Null => (0.0, 1.0),
        };
        self.p.iter().zip(&self.dir).map(|(x, d)| a * x + b * d).collect()
    }

    pub fn initial_state(&self) -> GeodesicState {
        GeodesicState::new(self.p.clone(), self.velocity(0.0), 0.0)
    }
}

/// Closed-form connecting geodesic, or `None` when `⟨p,q⟩₁ ≤ -1`.
pub fn desitter_geodesic(p: &[f64], q: &[f64]) -> Result<Option<DesitterGeodesic>> {
    let v = desitter_connectable(p, q)?;
    if !v.connectable || v.boundary {
        return Ok(None);
    }
    let w: Vec<f64> = q.iter().zip(p).map(|(qi, pi)| qi - v.inner * pi).collect();
    let ww = minkowski_inner(1, &w, &w);
    let euclid = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (form, dir, s_end) = if euclid < 1e-14 {
        (GeodesicForm::Constant, vec![0.0; p.len()], 0.0)
    } else if ww.abs() < NULL_TOL {
        (GeodesicForm::Null, w, 1.0)
    } else if ww > 0.0 {
        let n = ww.sqrt();
        (
            GeodesicForm::Trigonometric,
            w.iter().map(|x| x / n).collect(),
            n.atan2(v.inner),
        )
    } else {
        let n = (-ww).sqrt();
        (GeodesicForm::Hyperbolic, w.iter().map(|x| x / n).collect(), n.asinh())
    };
    Ok(Some(DesitterGeodesic {
        p: p.to_vec(),
        dir,
        form,
        s_end,
    }))
}

/// Closed-form verdict as a report.
pub fn desitter_report(p: &[f64], q: &[f64]) -> Result<ConnectivityReport> {
    let v = desitter_connectable(p, q)?;
    let mut r = ConnectivityReport::new(Status::UnreachableClosedForm, VerdictSource::ClosedForm);
    r.diagnostics.push(format!("<p,q> = {}", v.inner));
    if v.boundary {
        r.diagnostics
            .push("boundary of the criterion: <p,q> = -1 within 1e-10 (indeterminate)".into());
    }
    match desitter_geodesic(p, q)? {
        Some(g) => {
            let end = g.point(g.s_end);
            r.status = Status::Connected;
            r.diagnostics.push(format!("{:?} geodesic", g.form).to_lowercase());
            r.solutions.push(Solution {
                initial_velocity: g.velocity(0.0),
                arrival_s: g.s_end,
                endpoint_error: dist(&end, q),
                action: None,
            });
        }
        None => {
            r.reason = Some("<p,q> <= -1: no geodesic joins p and q".into());
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, integrate_geodesic};
    use crate::models::{BatesTorus, EmbeddedPseudosphere, Flat};
    use std::f64::consts::PI;

    #[test]
    fn flat_plane_single_straight_solution() {
        let m = Flat::euclidean(2);
        let prob = ShootingProblem::new(&m, vec![0.0, 0.0], vec![3.0, 4.0]);
        let r = shoot_connect(&prob).unwrap();
        assert_eq!(r.status, Status::Connected);
        assert_eq!(r.solutions.len(), 1, "{r:?}");
        let s = &r.solutions[0];
        let v = &s.initial_velocity;
        assert!((v[0] * s.arrival_s - 3.0).abs() < 1e-7 && (v[1] * s.arrival_s - 4.0).abs() < 1e-7);
        assert!(s.endpoint_error <= 1e-8);
    }

    #[test]
    fn antipodal_sphere_points_give_a_family() {
        let s2 = EmbeddedPseudosphere::new(2, 0).unwrap();
        let p = vec![0.0, 0.0, 1.0];
        let frame = s2.tangent_frame(&p);
        let prob = ShootingProblem {
            multistart: 8,
            grid: 21,
            s_max: 4.0,
            ..ShootingProblem::new(&s2, p, vec![0.0, 0.0, -1.0])
        }
        .with_frame(frame);
        let r = shoot_connect(&prob).unwrap();
        assert_eq!(r.status, Status::Connected);
        assert!(r.solutions.len() >= 4, "{}", r.solutions.len());
        for s in &r.solutions {
            let speed = s.initial_velocity.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((speed * s.arrival_s - PI).abs() < 1e-6);
        }
    }

    #[test]
    fn bates_cover_far_point_is_not_found() {
        let m = BatesTorus::default();
        let prob = ShootingProblem {
            grid: 16,
            s_max: 20.0,
            ..ShootingProblem::new(&m, vec![0.0, 0.0], vec![3.0 * PI, 0.0])
        };
        let r = shoot_connect(&prob).unwrap();
        assert_eq!(r.status, Status::NotFound);
        assert!(r.reason.unwrap().contains("does not prove"));
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let m = Flat::euclidean(2);
        let mut prob = ShootingProblem::new(&m, vec![0.0, 0.0], vec![1.0, 0.0]);
        prob.tol_endpoint = 0.0;
        assert!(shoot_connect(&prob).is_err());
        let prob = ShootingProblem::new(&m, vec![0.0, 0.0], vec![1.0, 0.0]).with_box(vec![0.0, 1.0], vec![0.0, 2.0]);
        assert!(shoot_connect(&prob).is_err());
    }

    fn ds_point(u: f64, ang: f64) -> Vec<f64> {
        let r = (1.0 + u * u).sqrt();
        vec![u, r * ang.cos(), r * ang.sin()]
    }

    #[test]
    fn inner_product_cases() {
        let p = ds_point(0.3, 0.4);
        assert!((desitter_inner(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        let q: Vec<f64> = p.iter().map(|x| -x).collect();
        assert!((desitter_inner(&p, &q).unwrap() + 1.0).abs() < 1e-12);
        let q = ds_point(-1.1, 2.0);
        let direct = -p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
        assert_eq!(desitter_inner(&p, &q).unwrap(), direct);
        assert!(matches!(
            desitter_inner(&[0.0, 1.0, 0.1], &p),
            Err(Error::OffQuadric(_))
        ));
    }

    #[test]
    fn closed_form_verdicts() {
        let p = vec![0.0, 1.0, 0.0];
        let q = vec![0.0, 0.0, 1.0];
        let g = desitter_geodesic(&p, &q).unwrap().unwrap();
        assert_eq!(g.form, GeodesicForm::Trigonometric);
        assert!((g.s_end - PI / 2.0).abs() < 1e-15);
        assert!(dist(&g.point(g.s_end), &q) < 1e-12);

        let anti = vec![0.0, -1.0, 0.0];
        let v = desitter_connectable(&p, &anti).unwrap();
        assert!(!v.connectable && v.boundary);
        assert!(desitter_geodesic(&p, &anti).unwrap().is_none());
        let r = desitter_report(&p, &anti).unwrap();
        assert_eq!(r.status, Status::UnreachableClosedForm);

        let g = desitter_geodesic(&p, &p).unwrap().unwrap();
        assert_eq!(g.form, GeodesicForm::Constant);
        assert_eq!(g.point(0.7), p);
    }

    #[test]
    fn null_and_hyperbolic_forms_reach_q() {
        let ds = EmbeddedPseudosphere::de_sitter(2).unwrap();
        let p = vec![0.0, 1.0, 0.0];
        // p + s(1, 0, 1) stays on the quadric
        let q = vec![0.8, 1.0, 0.8];
        let g = desitter_geodesic(&p, &q).unwrap().unwrap();
        assert_eq!(g.form, GeodesicForm::Null);
        let q = vec![2f64.sinh(), 2f64.cosh(), 0.0];
        let g = desitter_geodesic(&p, &q).unwrap().unwrap();
        assert_eq!(g.form, GeodesicForm::Hyperbolic);
        assert!((g.s_end - 2.0).abs() < 1e-12);
        for (a, b) in [(0.3, 1.2), (-0.7, 2.0), (1.4, -0.3)] {
            let q = ds_point(a, b);
            let g = desitter_geodesic(&p, &q).unwrap().unwrap();
            assert!(dist(&g.point(g.s_end), &q) < 1e-8);
            let tr = integrate_geodesic(&ds, &g.initial_state(), (0.0, g.s_end), &IntegratorConfig::default()).unwrap();
            assert!(dist(&tr.last().pos, &q) < 1e-6);
        }
    }

    #[test]
    fn exp_homogeneity_on_de_sitter() {
        let ds = EmbeddedPseudosphere::de_sitter(2).unwrap();
        let p = ds_point(0.2, 0.1);
        let v = ds.tangent_part(&p, &[0.4, -0.3, 0.5]);
        let cfg = IntegratorConfig::default();
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let a = exp_map(&ds, &p, &v2, 1.3, &cfg).unwrap();
        let b = exp_map(&ds, &p, &v, 2.6, &cfg).unwrap();
        assert!(dist(&a, &b) < 1e-6);
    }

    #[test]
    fn flat_raster_fills_the_disk() {
        let m = Flat::euclidean(2);
        let spec = RasterSpec {
            lo: [-2.0, -2.0],
            hi: [2.0, 2.0],
            cell: 0.1,
            directions: 720,
            s_max: 1.5,
            frame: None,
            wrap: None,
        };
        let r = reachability_raster(&m, &[0.0, 0.0], &spec).unwrap();
        for j in 0..r.ny {
            for i in 0..r.nx {
                let c = r.center(i, j);
                let rad = (c[0] * c[0] + c[1] * c[1]).sqrt();
                if rad < 1.5 - 0.1 {
                    assert!(r.hit(i, j), "cell {i},{j} at radius {rad}");
                }
                if rad > 1.5 + 0.15 {
                    assert!(!r.hit(i, j));
                }
            }
        }
        assert!(r.to_csv().starts_with("i,j,x,y,hit\n0,0,"));
    }

    #[test]
    fn raster_is_monotone() {
        let m = BatesTorus::default();
        let spec = |dirs, s_max| RasterSpec {
            lo: [-8.0, -8.0],
            hi: [8.0, 8.0],
            cell: 0.25,
            directions: dirs,
            s_max,
            frame: None,
            wrap: None,
        };
        let small = reachability_raster(&m, &[0.0, 0.0], &spec(32, 4.0)).unwrap();
        let more_dirs = reachability_raster(&m, &[0.0, 0.0], &spec(64, 4.0)).unwrap();
        let longer = reachability_raster(&m, &[0.0, 0.0], &spec(32, 7.0)).unwrap();
        for k in 0..small.hits.len() {
            if small.hits[k] {
                assert!(more_dirs.hits[k] && longer.hits[k]);
            }
        }
        assert!(longer.count() > small.count());
    }
}
