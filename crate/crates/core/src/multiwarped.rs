//! Multiwarped spacetimes `-dt² + Σ f_i(t)² g_i` over an interval: geodesic
//! reduction to fiber constants `(c, K)`, the shooting residuals, a
//! degree-style simplex scan for connecting geodesics, and the integral
//! test on warping functions near the ends of the interval.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::connectivity::{ConnectivityReport, Solution, Status, VerdictSource};
use crate::expr::DiffExpr;
use crate::geometry::{check_dim, integrate_geodesic, Geometry, IntegratorConfig, Termination};
use crate::models::{quotient_displacement, LatticeQuotient};
use crate::params::opt_str;
use crate::quadrature;
use crate::solve::{bisect, levenberg_marquardt};
use crate::{Error, Result};

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if n < 2 || y.len() != n {
            return Err(Error::InvalidParams(
                "spline needs at least two (t, f) samples of equal length".into(),
            ));
        }
        if t.iter().chain(&y).any(|v| !v.is_finite()) || t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParams(
                "spline knots must be finite and strictly increasing".into(),
            ));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let off = t[i + 1] - t[i];
                let w = off / diag[i - 1];
                diag[i] -= w * off;
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (1..k).rev() {
                let off = t[i + 1] - t[i];
                m[i] = (rhs[i - 1] - off * m[i + 1]) / diag[i - 1];
            }
        }
        Ok(CubicSpline { t, y, m })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t[0], *self.t.last().unwrap())
    }

    fn locate(&self, x: f64) -> usize {
        self.t
            .partition_point(|&ti| ti <= x)
            .saturating_sub(1)
            .min(self.t.len() - 2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * self.m[i]
            + (3.0 * b * b - 1.0) / 6.0 * h * self.m[i + 1]
    }
}

/// A warping function of `t`.
#[derive(Debug, Clone)]
pub enum Warp {
    Expr(DiffExpr),
    Spline(CubicSpline),
}

impl Warp {
    pub fn expr(src: &str) -> Result<Self> {
        Ok(Warp::Expr(DiffExpr::parse(src, &["t"])?))
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Warp::Expr(e) => e.eval(&[t]),
            Warp::Spline(s) => s.eval(t),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            Warp::Expr(e) => e.grad[0].eval(&[t]),
            Warp::Spline(s) => s.derivative(t),
        }
    }
}

/// Fiber geometries with built-in geodesic enumerators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fiber {
    Euclidean {
        dim: usize,
    },
    /// `R^dim / period·Z^dim`; `dim = 1` is a circle.
    Torus {
        dim: usize,
        period: f64,
    },
    /// Unit 2-sphere in `(θ, φ)`.
    Sphere,
}

/// A fiber geodesic from `z` of the given length; `dir` is a unit vector at `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberGeodesic {
    pub length: f64,
    pub dir: Vec<f64>,
}

impl Fiber {
    pub fn dim(&self) -> usize {
        match self {
            Fiber::Euclidean { dim } | Fiber::Torus { dim, .. } => *dim,
            Fiber::Sphere => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Fiber::Euclidean { dim } if *dim == 0 => Err(Error::InvalidParams("fiber dimension must be >= 1".into())),
            Fiber::Torus { dim, period } if *dim == 0 || !(*period > 0.0) => {
                Err(Error::InvalidParams("torus fiber needs dim >= 1 and period > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Fiber::Sphere => x[0] > 0.0 && x[0] < PI && x[1].is_finite(),
            _ => x.iter().all(|v| v.is_finite()),
        }
    }

    /// Diagonal of the fiber metric.
    fn metric_diag(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Fiber::Sphere => vec![1.0, x[0].sin().powi(2)],
            _ => vec![1.0; self.dim()],
        }
    }

    pub fn norm2(&self, x: &[f64], v: &[f64]) -> f64 {
        self.metric_diag(x).iter().zip(v).map(|(g, w)| g * w * w).sum()
    }

    fn christoffel_term(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            Fiber::Sphere => {
                let (s, c) = x[0].sin_cos();
                out[0] = -s * c * v[1] * v[1];
                out[1] = 2.0 * c / s * v[0] * v[1];
            }
            _ => out.fill(0.0),
        }
    }

    /// Geodesics from `z` to `x`, sorted by length; windings up to `max_winding`.
    pub fn geodesics(&self, z: &[f64], x: &[f64], max_winding: u32) -> Vec<FiberGeodesic> {
        let straight = |a: &[f64], b: &[f64]| {
            let d: Vec<f64> = b.iter().zip(a).map(|(p, q)| p - q).collect();
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dir = if len > 0.0 {
                d.iter().map(|v| v / len).collect()
            } else {
                vec![0.0; d.len()]
            };
            FiberGeodesic { length: len, dir }
        };
        match self {
            Fiber::Euclidean { .. } => vec![straight(z, x)],
            Fiber::Torus { dim, period } => {
                let lat = LatticeQuotient::uniform(*dim, *period);
                quotient_displacement(&lat, z, x, max_winding)
                    .iter()
                    .map(|lift| straight(z, lift))
                    .collect()
            }
            Fiber::Sphere => {
                let pz = sphere_point(z);
                let px = sphere_point(x);
                let cosd: f64 = pz.iter().zip(&px).map(|(a, b)| a * b).sum();
                let w: Vec<f64> = px.iter().zip(&pz).map(|(a, b)| a - cosd * b).collect();
                let sind = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                let d = sind.atan2(cosd);
                if d < 1e-12 {
                    return vec![FiberGeodesic {
                        length: 0.0,
                        dir: vec![0.0, 0.0],
                    }];
                }
                let (st, ct) = z[0].sin_cos();
                let (sp, cp) = z[1].sin_cos();
                let e_theta = [ct * cp, ct * sp, -st];
                let e_phi = [-sp, cp, 0.0];
                let u: Vec<f64> = if sind > 1e-12 {
                    w.iter().map(|v| v / sind).collect()
                } else {
                    // antipodal: any direction, take the meridian
                    e_theta.to_vec()
                };
                let a = u.iter().zip(&e_theta).map(|(p, q)| p * q).sum::<f64>();
                let b = u.iter().zip(&e_phi).map(|(p, q)| p * q).sum::<f64>();
                let dir = vec![a, b / st];
                let back = vec![-a, -b / st];
                let mut out = Vec::new();
                for k in 0..=max_winding {
                    let k = k as f64 * 2.0 * PI;
                    out.push(FiberGeodesic {
                        length: d + k,
                        dir: dir.clone(),
                    });
                    out.push(FiberGeodesic {
                        length: 2.0 * PI - d + k,
                        dir: back.clone(),
                    });
                }
                out.sort_by(|p, q| p.length.total_cmp(&q.length));
                out
            }
        }
    }

    /// Distance-like mismatch between chart points, modulo the fiber's
    /// identifications.
    pub fn discrepancy(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Fiber::Euclidean { .. } => a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt(),
            Fiber::Torus { period, .. } => a
                .iter()
                .zip(b)
                .map(|(p, q)| {
                    let d = (p - q).rem_euclid(*period);
                    d.min(period - d).powi(2)
                })
                .sum::<f64>()
                .sqrt(),
            Fiber::Sphere => {
                let pa = sphere_point(a);
                let pb = sphere_point(b);
                pa.iter().zip(&pb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
            }
        }
    }
}

fn sphere_point(x: &[f64]) -> [f64; 3] {
    let (st, ct) = x[0].sin_cos();
    let (sp, cp) = x[1].sin_cos();
    [st * cp, st * sp, ct]
}

/// Names accepted by [`MultiwarpedModel::preset`].
pub const PRESETS: [&str; 4] = ["static-product", "grw-exp", "circle-product", "schwarzschild-interior"];

/// `-dt² + Σ f_i(t)² g_i` on `]a,b[ × F₁ × … × F_m`, in chart coordinates
/// `(t, x₁, …, x_m)` with the fiber charts concatenated.
#[derive(Debug, Clone)]
pub struct MultiwarpedModel {
    interval: (f64, f64),
    warps: Vec<Warp>,
    fibers: Vec<Fiber>,
    offsets: Vec<usize>,
}

impl MultiwarpedModel {
    pub fn new(interval: (f64, f64), warps: Vec<Warp>, fibers: Vec<Fiber>) -> Result<Self> {
        if warps.is_empty() || warps.len() != fibers.len() {
            return Err(Error::InvalidParams(
                "need one warping function per fiber and at least one fiber".into(),
            ));
        }
        if !(interval.0 < interval.1) || interval.0.is_nan() || interval.1.is_nan() {
            return Err(Error::InvalidParams("interval must satisfy a < b".into()));
        }
        for w in &warps {
            if let Warp::Spline(s) = w {
                let (lo, hi) = s.range();
                if interval.0 < lo || interval.1 > hi {
                    return Err(Error::InvalidParams(
                        "interval extends beyond the spline samples".into(),
                    ));
                }
            }
        }
        let mut offsets = Vec::with_capacity(fibers.len());
        let mut at = 1;
        for f in &fibers {
            f.validate()?;
            offsets.push(at);
            at += f.dim();
        }
        Ok(MultiwarpedModel {
            interval,
            warps,
            fibers,
            offsets,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        match name {
            "static-product" => Self::new(
                all,
                vec![Warp::expr("1")?, Warp::expr("1")?],
                vec![Fiber::Euclidean { dim: 1 }, Fiber::Euclidean { dim: 1 }],
            ),
            "grw-exp" => Self::new(all, vec![Warp::expr("exp(t)")?], vec![Fiber::Euclidean { dim: 1 }]),
            "circle-product" => Self::new(
                all,
                vec![Warp::expr("1")?, Warp::expr("1 + 0.25*sin(t)")?],
                vec![
                    Fiber::Euclidean { dim: 1 },
                    Fiber::Torus {
                        dim: 1,
                        period: 2.0 * PI,
                    },
                ],
            ),
            "schwarzschild-interior" => {
                // cycloid r = 1 + cos η, τ = η + sin η (unit mass), radial
                // factor sqrt(2/r - 1) and areal factor r
                let n = 41;
                let (mut ts, mut f1, mut f2) = (Vec::new(), Vec::new(), Vec::new());
                for k in 0..n {
                    let eta = 0.3 + (PI - 0.6) * k as f64 / (n - 1) as f64;
                    let r = 1.0 + eta.cos();
                    ts.push(eta + eta.sin());
                    f1.push((2.0 / r - 1.0).sqrt());
                    f2.push(r);
                }
                let range = (ts[0], ts[n - 1]);
                Self::new(
                    range,
                    vec![
                        Warp::Spline(CubicSpline::natural(ts.clone(), f1)?),
                        Warp::Spline(CubicSpline::natural(ts, f2)?),
                    ],
                    vec![Fiber::Euclidean { dim: 1 }, Fiber::Sphere],
                )
            }
            other => Err(Error::InvalidParams(format!(
                "unknown multiwarped preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Parameters `{preset}` or `{interval?, warps, fibers}`; a warp is an
    /// expression in `t` or `{"t": [...], "f": [...]}` spline samples, and
    /// `null` interval ends are infinite.
    pub fn from_params(p: &Map<String, Value>) -> Result<Self> {
        for k in p.keys() {
            if !["preset", "interval", "warps", "fibers"].contains(&k.as_str()) {
                return Err(Error::InvalidParams(format!("unknown parameter '{k}'")));
            }
        }
        if let Some(name) = opt_str(p, "preset")? {
            if p.len() > 1 {
                return Err(Error::InvalidParams("preset excludes other parameters".into()));
            }
            return Self::preset(name);
        }
        let bad = |what: &str| Error::InvalidParams(what.to_string());
        let warps_v = p
            .get("warps")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("warps: expected an array"))?;
        let mut warps = Vec::new();
        let mut span = (f64::NEG_INFINITY, f64::INFINITY);
        for w in warps_v {
            warps.push(match w {
                Value::String(s) => Warp::expr(s)?,
                Value::Object(o) => {
                    let nums = |k: &str| -> Result<Vec<f64>> {
                        serde_json::from_value(o.get(k).cloned().unwrap_or(Value::Null))
                            .map_err(|e| Error::InvalidParams(format!("warp spline {k}: {e}")))
                    };
                    let s = CubicSpline::natural(nums("t")?, nums("f")?)?;
                    let (lo, hi) = s.range();
                    span = (span.0.max(lo), span.1.min(hi));
                    Warp::Spline(s)
                }
                _ => return Err(bad("warps: entries must be strings or spline objects")),
            });
        }
        let fibers: Vec<Fiber> =
            serde_json::from_value(p.get("fibers").cloned().ok_or_else(|| bad("fibers: missing"))?)
                .map_err(|e| Error::InvalidParams(format!("fibers: {e}")))?;
        let interval = match p.get("interval") {
            None | Some(Value::Null) => span,
            Some(v) => {
                let ends: [Option<f64>; 2] =
                    serde_json::from_value(v.clone()).map_err(|e| Error::InvalidParams(format!("interval: {e}")))?;
                (ends[0].unwrap_or(f64::NEG_INFINITY), ends[1].unwrap_or(f64::INFINITY))
            }
        };
        Self::new(interval, warps, fibers)
    }

    pub fn m(&self) -> usize {
        self.fibers.len()
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn warp(&self, i: usize) -> &Warp {
        &self.warps[i]
    }

    pub fn fiber(&self, i: usize) -> &Fiber {
        &self.fibers[i]
    }

    /// Chart slice of fiber `i` inside a full coordinate vector.
    pub fn fiber_part<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[self.offsets[i]..self.offsets[i] + self.fibers[i].dim()]
    }

    fn in_interval(&self, t: f64) -> bool {
        t > self.interval.0 && t < self.interval.1
    }

    /// `Σ c_i² / f_i(t)²`.
    fn weighted(&self, c: &[f64], t: f64) -> f64 {
        c.iter()
            .zip(&self.warps)
            .filter(|(ci, _)| **ci != 0.0)
            .map(|(ci, w)| {
                let f = w.value(t);
                ci * ci / (f * f)
            })
            .sum()
    }

    /// Minimum of `Σ c_i²/f_i²` over `[lo, hi]` by sampling and golden-section refinement.
    fn min_weighted(&self, c: &[f64], lo: f64, hi: f64) -> f64 {
        let n = 256;
        let at = |k: usize| lo + (hi - lo) * k as f64 / n as f64;
        let (mut best, mut kb) = (f64::INFINITY, 0);
        for k in 0..=n {
            let v = self.weighted(c, at(k));
            if v < best {
                best = v;
                kb = k;
            }
        }
        let (mut a, mut b) = (at(kb.saturating_sub(1)), at((kb + 1).min(n)));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if self.weighted(c, x1) < self.weighted(c, x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        best.min(self.weighted(c, 0.5 * (a + b)))
    }
}

impl Geometry for MultiwarpedModel {
    fn dim(&self) -> usize {
        1 + self.fibers.iter().map(Fiber::dim).sum::<usize>()
    }

    fn index(&self) -> usize {
        1
    }

    fn has_metric(&self) -> bool {
        true
    }

    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        g[(0, 0)] = -1.0;
        for (i, fib) in self.fibers.iter().enumerate() {
            let f = self.warps[i].value(x[0]);
            for (k, gk) in fib.metric_diag(self.fiber_part(x, i)).iter().enumerate() {
                let j = self.offsets[i] + k;
                g[(j, j)] = f * f * gk;
            }
        }
        Some(g)
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self.in_interval(x[0])
            && self.warps.iter().all(|w| {
                let f = w.value(x[0]);
                f > 0.0 && f.is_finite()
            })
            && self
                .fibers
                .iter()
                .enumerate()
                .all(|(i, fib)| fib.contains(self.fiber_part(x, i)))
    }

    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        let t = x[0];
        let mut tt = 0.0;
        for (i, fib) in self.fibers.iter().enumerate() {
            let f = self.warps[i].value(t);
            let df = self.warps[i].deriv(t);
            let (o, d) = (self.offsets[i], fib.dim());
            let (xi, vi) = (&x[o..o + d], &v[o..o + d]);
            tt -= f * df * fib.norm2(xi, vi);
            fib.christoffel_term(xi, vi, &mut out[o..o + d]);
            for k in 0..d {
                out[o + k] = -out[o + k] - 2.0 * df / f * v[0] * vi[k];
            }
        }
        out[0] = tt;
        Ok(())
    }
}

/// Conserved fiber constants `c_i = f_i² |ẋ_i|_{g_i}` and `K = -g(γ',γ')`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionConstants {
    pub c: Vec<f64>,
    pub k: f64,
}

pub fn reduction_constants(model: &MultiwarpedModel, x: &[f64], v: &[f64]) -> ReductionConstants {
    let t = x[0];
    let mut k = v[0] * v[0];
    let c = (0..model.m())
        .map(|i| {
            let f = model.warps[i].value(t);
            let n2 = model.fibers[i].norm2(model.fiber_part(x, i), model.fiber_part(v, i));
            k -= f * f * n2;
            f * f * n2.sqrt()
        })
        .collect();
    ReductionConstants { c, k }
}

const QUAD_REL: f64 = 1e-12;
const QUAD_ABS: f64 = 1e-15;

fn check_range(model: &MultiwarpedModel, t_start: f64, t_end: f64) -> Result<(f64, f64)> {
    for t in [t_start, t_end] {
        if !model.in_interval(t) {
            return Err(Error::OutsideDomain(vec![t]));
        }
    }
    Ok((t_start.min(t_end), t_start.max(t_end)))
}

/// Fiber lengths `L_i(c, K) = ∫ (c_i/f_i²) / √(K + Σ_j c_j²/f_j²) dt` over the
/// traversed `t`-range; requires a positive radicand (no turning point).
pub fn fiber_lengths(model: &MultiwarpedModel, c: &[f64], k: f64, t_start: f64, t_end: f64) -> Result<Vec<f64>> {
    check_dim(model.m(), c.len())?;
    if c.iter().any(|ci| !(*ci >= 0.0)) {
        return Err(Error::InvalidParams("fiber constants must be nonnegative".into()));
    }
    let (lo, hi) = check_range(model, t_start, t_end)?;
    if lo == hi {
        return Ok(vec![0.0; c.len()]);
    }
    if k + model.min_weighted(c, lo, hi) <= 0.0 {
        return Err(Error::TurningPoint);
    }
    Ok((0..c.len()).map(|i| length_i(model, c, k, i, lo, hi)).collect())
}

fn length_i(model: &MultiwarpedModel, c: &[f64], k: f64, i: usize, lo: f64, hi: f64) -> f64 {
    if c[i] == 0.0 {
        return 0.0;
    }
    quadrature::integrate(
        |t| {
            let f = model.warps[i].value(t);
            c[i] / (f * f) / (k + model.weighted(c, t)).sqrt()
        },
        lo,
        hi,
        QUAD_ABS,
        QUAD_REL,
    )
    .value
}

fn total_length(model: &MultiwarpedModel, c: &[f64], k: f64, lo: f64, hi: f64) -> f64 {
    quadrature::integrate(
        |t| {
            let num: f64 = c
                .iter()
                .zip(&model.warps)
                .filter(|(ci, _)| **ci != 0.0)
                .map(|(ci, w)| ci / w.value(t).powi(2))
                .sum();
            num / (k + model.weighted(c, t)).sqrt()
        },
        lo,
        hi,
        QUAD_ABS,
        QUAD_REL,
    )
    .value
}

/// Target fiber lengths `D` between two slices `t_start`, `t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberTarget {
    pub lengths: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mubar {
    /// `L_i D_{i+1} − L_{i+1} D_i`, length `m − 1`.
    pub residuals: Vec<f64>,
    /// `Σ L_i − Σ D_i`.
    pub total: f64,
    pub lengths: Vec<f64>,
}

/// The shooting residuals at `(c, K)`.
pub fn mubar(model: &MultiwarpedModel, c: &[f64], k: f64, target: &FiberTarget) -> Result<Mubar> {
    check_dim(model.m(), target.lengths.len())?;
    if target.lengths.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidParams("target lengths must be nonnegative".into()));
    }
    let l = fiber_lengths(model, c, k, target.t_start, target.t_end)?;
    let d = &target.lengths;
    Ok(Mubar {
        residuals: (0..l.len().saturating_sub(1))
            .map(|i| l[i] * d[i + 1] - l[i + 1] * d[i])
            .collect(),
        total: l.iter().sum::<f64>() - d.iter().sum::<f64>(),
        lengths: l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InnerFail {
    TurningPoint,
    BracketCap,
}

const K_CAP: f64 = 1e6;

/// Solves `Σ L_i(c, K) = Σ D_i` for `K` (decreasing in `K`).
fn solve_k(
    model: &MultiwarpedModel,
    c: &[f64],
    d_total: f64,
    lo: f64,
    hi: f64,
    causal: bool,
) -> std::result::Result<f64, InnerFail> {
    let k_adm = -model.min_weighted(c, lo, hi);
    let mut k_lo = k_adm + 1e-13 * k_adm.abs().max(1.0);
    if causal {
        k_lo = k_lo.max(0.0);
    }
    let g = |k: f64| total_length(model, c, k, lo, hi) - d_total;
    let g_lo = g(k_lo);
    if !(g_lo >= 0.0) {
        return Err(InnerFail::TurningPoint);
    }
    let mut step = k_lo.abs().max(1.0);
    let mut k_hi = k_lo + step;
    while g(k_hi) > 0.0 {
        step *= 4.0;
        k_hi = k_lo + step;
        if k_hi > K_CAP {
            return Err(InnerFail::BracketCap);
        }
    }
    bisect(|k| Some(g(k)), k_lo, k_hi, g_lo, 0.0).ok_or(InnerFail::BracketCap)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Winding bound for torus and sphere fibers.
    pub max_winding: u32,
    /// Restrict to `K ≥ 0`.
    pub causal: bool,
    pub tol_endpoint: f64,
    /// Simplex refinement levels: `8·2^j` subdivisions per edge for `j < levels`.
    pub levels: usize,
    pub cfg: IntegratorConfig,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_winding: 0,
            causal: false,
            tol_endpoint: 1e-6,
            levels: 3,
            cfg: IntegratorConfig {
                record_energy: false,
                ..Default::default()
            },
        }
    }
}

/// Reduction data of one assembled geodesic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedSolution {
    /// Fiber constants on the simplex `Σ c_i = 1` (zero for idle fibers).
    pub c: Vec<f64>,
    pub k: f64,
    /// Constants for the affine parameter running over `[0, 1]`.
    pub c_unit: Vec<f64>,
    pub k_unit: f64,
    /// Target fiber lengths `D`.
    pub lengths: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Index of the fiber geodesic used per fiber.
    pub combination: Vec<usize>,
    /// Largest relative drift of `c` and `K` on re-integration.
    pub conservation_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiwarpedReport {
    #[serde(flatten)]
    pub report: ConnectivityReport,
    pub reductions: Vec<ReducedSolution>,
}

#[derive(Debug, Clone)]
struct Zero {
    c: Vec<f64>,
    k: f64,
}

enum ComboOutcome {
    Zeros(Vec<Zero>),
    TurningPoint,
    NoZero,
}

struct Combo<'a> {
    model: &'a MultiwarpedModel,
    lengths: Vec<f64>,
    active: Vec<usize>,
    lo: f64,
    hi: f64,
    causal: bool,
}

impl Combo<'_> {
    fn full_c(&self, ca: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.model.m()];
        for (a, &i) in ca.iter().zip(&self.active) {
            c[i] = *a;
        }
        c
    }

    fn d_total(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Normalized ratio residuals with `K` from the inner solve.
    fn eval(&self, ca: &[f64]) -> std::result::Result<(f64, Vec<f64>), InnerFail> {
        let c = self.full_c(ca);
        let k = solve_k(self.model, &c, self.d_total(), self.lo, self.hi, self.causal)?;
        let l: Vec<f64> = self
            .active
            .iter()
            .map(|&i| length_i(self.model, &c, k, i, self.lo, self.hi))
            .collect();
        let d: Vec<f64> = self.active.iter().map(|&i| self.lengths[i]).collect();
        let s = self.d_total().powi(2);
        let r = (0..l.len() - 1)
            .map(|i| (l[i] * d[i + 1] - l[i + 1] * d[i]) / s)
            .collect();
        Ok((k, r))
    }

    fn solve(&self, levels: usize) -> ComboOutcome {
        match self.active.len() {
            0 => unreachable!("handled by the caller"),
            1 => match self.eval(&[1.0]) {
                Ok((k, _)) => ComboOutcome::Zeros(vec![Zero {
                    c: self.full_c(&[1.0]),
                    k,
                }]),
                Err(InnerFail::TurningPoint) => ComboOutcome::TurningPoint,
                Err(InnerFail::BracketCap) => ComboOutcome::NoZero,
            },
            _ => self.simplex_scan(levels),
        }
    }

    /// Kuhn triangulation of the simplex in cumulative coordinates
    /// `0 ≤ y₁ ≤ … ≤ y_d ≤ N`; cells whose residual images surround zero
    /// are polished and refined.
    fn simplex_scan(&self, levels: usize) -> ComboOutcome {
        let d = self.active.len() - 1;
        let finest = 8u32 << levels.saturating_sub(1);
        let mut cache: HashMap<Vec<u32>, Option<Vec<f64>>> = HashMap::new();
        let mut any_ok = false;
        let mut zeros: Vec<Zero> = Vec::new();
        let perms = permutations(d);
        let mut cubes: Vec<Vec<u32>> = Vec::new();
        for level in 0..levels.max(1) {
            let n = 8u32 << level;
            let scale = finest / n;
            if level == 0 {
                cubes = cube_corners(d, n);
            }
            let mut simplices: Vec<Vec<Vec<u32>>> = Vec::new();
            for b in &cubes {
                for p in &perms {
                    let mut v = b.clone();
                    let mut verts = vec![v.clone()];
                    for &axis in p {
                        v[axis] += 1;
                        verts.push(v.clone());
                    }
                    if verts.iter().all(|v| ordered(v, n)) {
                        simplices.push(verts);
                    }
                }
            }
            let needed: BTreeSet<Vec<u32>> = simplices
                .iter()
                .flatten()
                .map(|v| v.iter().map(|y| y * scale).collect::<Vec<u32>>())
                .filter(|key| !cache.contains_key(key))
                .collect();
            let fresh: Vec<(Vec<u32>, Option<Vec<f64>>)> = needed
                .into_par_iter()
                .map(|key| {
                    let c = cumulative_to_c(&key.iter().map(|y| *y as f64).collect::<Vec<_>>(), finest as f64);
                    let r = self.eval(&c).ok().map(|(_, r)| r);
                    (key, r)
                })
                .collect();
            cache.extend(fresh);
            any_ok |= cache.values().any(Option::is_some);

            let mut guesses: Vec<Vec<f64>> = Vec::new();
            let mut next: BTreeSet<Vec<u32>> = BTreeSet::new();
            for verts in &simplices {
                let vals: Option<Vec<&Vec<f64>>> = verts
                    .iter()
                    .map(|v| {
                        let key: Vec<u32> = v.iter().map(|y| y * scale).collect();
                        cache[&key].as_ref()
                    })
                    .collect();
                let Some(vals) = vals else { continue };
                if let Some(beta) = zero_in_hull(&vals) {
                    let mut y: Vec<f64> = verts[0].iter().map(|v| *v as f64).collect();
                    for (j, bj) in beta.iter().enumerate() {
                        for (yk, (a, b)) in y.iter_mut().zip(verts[j + 1].iter().zip(&verts[0])) {
                            *yk += bj * (*a as f64 - *b as f64);
                        }
                    }
                    guesses.push(cumulative_to_c(&y, n as f64));
                    next.insert(verts[0].clone());
                }
            }
            let polished: Vec<Option<Zero>> = guesses.par_iter().map(|g| self.polish(g)).collect();
            let all_ok = polished.iter().all(Option::is_some);
            for z in polished.into_iter().flatten() {
                let dup = zeros
                    .iter()
                    .any(|o| o.c.iter().zip(&z.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-7);
                if !dup {
                    zeros.push(z);
                }
            }
            if all_ok || next.is_empty() {
                break;
            }
            cubes = next
                .iter()
                .flat_map(|b| {
                    (0..1u32 << d).map(move |mask| {
                        b.iter()
                            .enumerate()
                            .map(|(k, y)| 2 * y + ((mask >> k) & 1))
                            .collect::<Vec<u32>>()
                    })
                })
                .collect();
        }
        zeros.sort_by(|a, b| {
            a.c.iter()
                .zip(&b.c)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if !zeros.is_empty() {
            ComboOutcome::Zeros(zeros)
        } else if any_ok {
            ComboOutcome::NoZero
        } else {
            ComboOutcome::TurningPoint
        }
    }

    fn polish(&self, guess: &[f64]) -> Option<Zero> {
        let u0: Vec<f64> = guess
            .iter()
            .take(guess.len() - 1)
            .scan(0.0, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        let to_c = |u: &[f64]| -> Option<Vec<f64>> {
            let mut prev = 0.0;
            let mut c = Vec::with_capacity(u.len() + 1);
            for &x in u {
                if !(x > prev) {
                    return None;
                }
                c.push(x - prev);
                prev = x;
            }
            if !(prev < 1.0) {
                return None;
            }
            c.push(1.0 - prev);
            Some(c)
        };
        let lm = levenberg_marquardt(|u| self.eval(&to_c(u)?).ok().map(|(_, r)| r), &u0, 1e-8, 60, 1e-15)?;
        if lm.residual_norm > 1e-10 {
            return None;
        }
        let ca = to_c(&lm.x)?;
        let (k, _) = self.eval(&ca).ok()?;
        Some(Zero { c: self.full_c(&ca), k })
    }
}

fn ordered(y: &[u32], n: u32) -> bool {
    y.windows(2).all(|w| w[0] <= w[1]) && y.last().is_none_or(|v| *v <= n)
}

fn cube_corners(d: usize, n: u32) -> Vec<Vec<u32>> {
    let total = (n as usize).pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let v = (idx % n as usize) as u32;
                    idx /= n as usize;
                    v
                })
                .collect()
        })
        .collect()
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

fn cumulative_to_c(y: &[f64], n: f64) -> Vec<f64> {
    let mut prev = 0.0;
    let mut c: Vec<f64> = y
        .iter()
        .map(|v| {
            let u = v / n;
            let ci = u - prev;
            prev = u;
            ci
        })
        .collect();
    c.push(1.0 - prev);
    c
}

/// Barycentric weights `β` (excluding vertex 0) if zero lies in the hull of
/// the `d + 1` points of `R^d`.
fn zero_in_hull(vals: &[&Vec<f64>]) -> Option<Vec<f64>> {
    let d = vals.len() - 1;
    if vals[0].iter().all(|v| *v == 0.0) {
        return Some(vec![0.0; d]);
    }
    let a = DMatrix::from_fn(d, d, |i, j| vals[j + 1][i] - vals[0][i]);
    let rhs = DVector::from_iterator(d, vals[0].iter().map(|v| -v));
    let beta = a.lu().solve(&rhs)?;
    let tol = 1e-9;
    if beta.iter().all(|b| *b >= -tol) && beta.sum() <= 1.0 + tol {
        Some(beta.iter().copied().collect())
    } else {
        None
    }
}

fn odometer(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if sizes.contains(&0) {
        return out;
    }
    let mut idx = vec![0; sizes.len()];
    loop {
        out.push(idx.clone());
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Connecting geodesics from `z` to `w` (full chart points) in the regime of
/// monotone `t`, one search per combination of fiber geodesics.
pub fn solve_connection(
    model: &MultiwarpedModel,
    z: &[f64],
    w: &[f64],
    opts: &SolveOptions,
) -> Result<MultiwarpedReport> {
    check_dim(model.dim(), z.len())?;
    check_dim(model.dim(), w.len())?;
    for x in [z, w] {
        if !model.contains(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
    }
    if !(opts.tol_endpoint > 0.0) {
        return Err(Error::InvalidParams("tol_endpoint must be positive".into()));
    }
    let (lo, hi) = (z[0].min(w[0]), z[0].max(w[0]));
    let enumerated: Vec<Vec<FiberGeodesic>> = (0..model.m())
        .map(|i| model.fibers[i].geodesics(model.fiber_part(z, i), model.fiber_part(w, i), opts.max_winding))
        .collect();
    let combos = odometer(&enumerated.iter().map(Vec::len).collect::<Vec<_>>());

    let outcomes: Vec<(Vec<usize>, ComboOutcome)> = combos
        .into_par_iter()
        .map(|combo| {
            let lengths: Vec<f64> = combo
                .iter()
                .enumerate()
                .map(|(i, &j)| enumerated[i][j].length)
                .collect();
            let active: Vec<usize> = (0..lengths.len()).filter(|&i| lengths[i] > 1e-14).collect();
            let outcome = if active.is_empty() {
                // vertical line, or the constant geodesic when z = w
                ComboOutcome::Zeros(vec![Zero {
                    c: vec![0.0; lengths.len()],
                    k: if lo < hi { 1.0 } else { 0.0 },
                }])
            } else if lo == hi {
                ComboOutcome::TurningPoint
            } else {
                Combo {
                    model,
                    lengths,
                    active,
                    lo,
                    hi,
                    causal: opts.causal,
                }
                .solve(opts.levels)
            };
            (combo, outcome)
        })
        .collect();

    let mut report = ConnectivityReport::new(Status::NotFound, VerdictSource::Reduction);
    let mut reductions = Vec::new();
    let (mut turning, mut empty) = (0, 0);
    for (combo, outcome) in outcomes {
        let zeros = match outcome {
            ComboOutcome::Zeros(z) => z,
            ComboOutcome::TurningPoint => {
                turning += 1;
                continue;
            }
            ComboOutcome::NoZero => {
                empty += 1;
                continue;
            }
        };
        let dirs: Vec<&FiberGeodesic> = combo.iter().enumerate().map(|(i, &j)| &enumerated[i][j]).collect();
        for zero in zeros {
            match assemble(model, z, w, &zero, &dirs, opts) {
                Ok(Some((sol, mut red))) => {
                    red.combination = combo.clone();
                    report.solutions.push(sol);
                    reductions.push(red);
                }
                Ok(None) => report
                    .diagnostics
                    .push(format!("combination {combo:?}: validation failed")),
                Err(e) => report.diagnostics.push(format!("combination {combo:?}: {e}")),
            }
        }
    }
    if opts.causal {
        let mut order: Vec<usize> = (0..reductions.len()).collect();
        order.sort_by(|&a, &b| reductions[b].k.total_cmp(&reductions[a].k));
        report.solutions = order.iter().map(|&i| report.solutions[i].clone()).collect();
        reductions = order.iter().map(|&i| reductions[i].clone()).collect();
    }
    report.diagnostics.push(format!(
        "{turning} combinations in the turning-point regime, {empty} without a zero"
    ));
    if report.solutions.is_empty() {
        report.reason = Some(if turning > 0 && empty == 0 {
            "turning-point regime".into()
        } else if opts.causal {
            "no causal solution; the points may not be causally related".into()
        } else {
            "no zero of the shooting map found".into()
        });
    } else {
        report.status = Status::Connected;
    }
    Ok(MultiwarpedReport { report, reductions })
}

/// Causal connection (`K ≥ 0`); solutions are ordered by decreasing `K`.
pub fn causal_connect(
    model: &MultiwarpedModel,
    z: &[f64],
    w: &[f64],
    opts: &SolveOptions,
) -> Result<MultiwarpedReport> {
    solve_connection(model, z, w, &SolveOptions { causal: true, ..*opts })
}

fn assemble(
    model: &MultiwarpedModel,
    z: &[f64],
    w: &[f64],
    zero: &Zero,
    dirs: &[&FiberGeodesic],
    opts: &SolveOptions,
) -> Result<Option<(Solution, ReducedSolution)>> {
    let (t0, t1) = (z[0], w[0]);
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    let c = &zero.c;
    let k = zero.k;
    let lengths: Vec<f64> = dirs.iter().map(|g| g.length).collect();
    let span = if lo == hi {
        0.0
    } else if c.iter().all(|v| *v == 0.0) {
        hi - lo
    } else {
        quadrature::integrate(|t| 1.0 / (k + model.weighted(c, t)).sqrt(), lo, hi, QUAD_ABS, QUAD_REL).value
    };
    let mut v = vec![0.0; model.dim()];
    if span > 0.0 {
        v[0] = (t1 - t0).signum() * (k + model.weighted(c, t0)).sqrt() * span;
        for (i, g) in dirs.iter().enumerate() {
            let f = model.warps[i].value(t0);
            let o = model.offsets[i];
            for (j, dj) in g.dir.iter().enumerate() {
                v[o + j] = c[i] / (f * f) * span * dj;
            }
        }
    }
    let residuals = if lo < hi && c.iter().any(|x| *x > 0.0) {
        let target = FiberTarget {
            lengths: lengths.clone(),
            t_start: t0,
            t_end: t1,
        };
        mubar(model, c, k, &target)?.residuals
    } else {
        vec![0.0; model.m() - 1]
    };
    let endpoint_error;
    let mut drift = 0.0;
    if span == 0.0 {
        endpoint_error = fiber_mismatch(model, z, w);
    } else {
        let st = crate::geometry::GeodesicState::new(z.to_vec(), v.clone(), 0.0);
        let tr = integrate_geodesic(model, &st, (0.0, 1.0), &opts.cfg)?;
        if tr.termination != Termination::SpanComplete {
            return Ok(None);
        }
        let end = tr.last();
        endpoint_error = ((end.pos[0] - t1).powi(2) + fiber_mismatch(model, &end.pos, w).powi(2)).sqrt();
        let r0 = reduction_constants(model, &st.pos, &st.vel);
        let c_scale = r0.c.iter().fold(0.0, |a: f64, b| a.max(*b));
        for s in &tr.samples {
            let r = reduction_constants(model, &s.pos, &s.vel);
            for (a, b) in r.c.iter().zip(&r0.c) {
                drift = f64::max(drift, (a - b).abs() / b.abs().max(1e-3 * c_scale).max(1e-300));
            }
            let k_scale = r0.k.abs().max(st.vel[0] * st.vel[0] * 1e-3).max(1e-300);
            drift = f64::max(drift, (r.k - r0.k).abs() / k_scale);
        }
    }
    if !(endpoint_error <= opts.tol_endpoint) {
        return Ok(None);
    }
    let k_unit = k * span * span;
    Ok(Some((
        Solution {
            initial_velocity: v,
            arrival_s: if span > 0.0 { 1.0 } else { 0.0 },
            endpoint_error,
            action: Some(-0.5 * k_unit),
        },
        ReducedSolution {
            c: c.clone(),
            k,
            c_unit: c.iter().map(|x| x * span).collect(),
            k_unit,
            lengths,
            residuals,
            combination: Vec::new(),
            conservation_drift: drift,
        },
    )))
}

fn fiber_mismatch(model: &MultiwarpedModel, a: &[f64], b: &[f64]) -> f64 {
    (0..model.m())
        .map(|i| {
            model.fibers[i]
                .discrepancy(model.fiber_part(a, i), model.fiber_part(b, i))
                .powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionVerdict {
    Divergent,
    Convergent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointCriterion {
    /// `null` in JSON when infinite.
    pub endpoint: f64,
    pub verdicts: Vec<CriterionVerdict>,
    /// Last partial integral per fiber.
    pub partial_integrals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub probe: f64,
    pub lower: EndpointCriterion,
    pub upper: EndpointCriterion,
    pub all_divergent: bool,
    pub note: &'static str,
}

const LADDER_STEPS: usize = 60;

/// Ladder test for `∫_probe^endpoint h`: partial integrals on dyadic pieces
/// approaching the endpoint. Divergent when the increments stop shrinking
/// over five consecutive pieces or the partial integral blows up;
/// convergent when the geometric tail estimate is below `1e-6` of the
/// running value.
pub fn ladder_verdict(h: impl Fn(f64) -> f64, probe: f64, endpoint: f64) -> (CriterionVerdict, f64) {
    let point = |k: usize| {
        if endpoint.is_finite() {
            endpoint + (probe - endpoint) * 0.5f64.powi(k as i32)
        } else {
            probe + endpoint.signum() * (2f64.powi(k as i32) - 1.0)
        }
    };
    let mut total = 0.0;
    let mut incs: Vec<f64> = Vec::new();
    for k in 1..=LADDER_STEPS {
        let (a, b) = (point(k - 1), point(k));
        let piece = quadrature::integrate(&h, a.min(b), a.max(b), 1e-15, 1e-10).value;
        total += piece;
        if !total.is_finite() || total.abs() > 1e12 {
            return (CriterionVerdict::Divergent, total);
        }
        incs.push(piece);
        let n = incs.len();
        if n >= 6 && (n - 5..n).all(|j| incs[j] >= 0.999 * incs[j - 1] && incs[j] > 0.0) {
            return (CriterionVerdict::Divergent, total);
        }
        if n >= 3 {
            let (prev, last) = (incs[n - 2], incs[n - 1]);
            if last == 0.0 && prev == 0.0 {
                return (CriterionVerdict::Convergent, total);
            }
            let rho = last / prev;
            if rho.is_finite() && (0.0..0.95).contains(&rho) && last * rho / (1.0 - rho) < 1e-6 * total.abs() {
                return (CriterionVerdict::Convergent, total);
            }
        }
    }
    (CriterionVerdict::Inconclusive, total)
}

/// The integrals `∫ f_i⁻² (Σ_j f_j⁻²)^{-1/2} dt` from `probe` toward each end
/// of the interval, per fiber. Numerical heuristic, not a proof.
pub fn check_integral_criterion(model: &MultiwarpedModel, probe: f64) -> Result<CriterionReport> {
    if !model.in_interval(probe) {
        return Err(Error::OutsideDomain(vec![probe]));
    }
    let integrand = |i: usize| {
        move |t: f64| {
            let mut sum = 0.0;
            for w in &model.warps {
                let f = w.value(t);
                if !(f > 0.0 && f.is_finite()) {
                    return f64::INFINITY;
                }
                sum += 1.0 / (f * f);
            }
            let fi = model.warps[i].value(t);
            1.0 / (fi * fi) / sum.sqrt()
        }
    };
    let side = |endpoint: f64| {
        let (verdicts, partial_integrals) = (0..model.m())
            .map(|i| ladder_verdict(integrand(i), probe, endpoint))
            .unzip();
        EndpointCriterion {
            endpoint,
            verdicts,
            partial_integrals,
        }
    };
    let lower = side(model.interval.0);
    let upper = side(model.interval.1);
    let all_divergent = lower
        .verdicts
        .iter()
        .chain(&upper.verdicts)
        .all(|v| *v == CriterionVerdict::Divergent);
    Ok(CriterionReport {
        probe,
        lower,
        upper,
        all_divergent,
        note: "numerical ladder heuristic; verdicts are not proofs",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{christoffel, GeodesicState};

    fn model(interval: (f64, f64), warps: &[&str], fibers: Vec<Fiber>) -> MultiwarpedModel {
        MultiwarpedModel::new(interval, warps.iter().map(|w| Warp::expr(w).unwrap()).collect(), fibers).unwrap()
    }

    #[test]
    fn spline_reproduces_a_cubic_interior_and_knots() {
        let t: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        let s = CubicSpline::natural(t.clone(), y.clone()).unwrap();
        for (a, b) in t.iter().zip(&y) {
            assert!((s.eval(*a) - b).abs() < 1e-14);
        }
        assert!((s.eval(1.05) - 1.05f64.sin()).abs() < 1e-5);
        assert!((s.derivative(1.05) - 1.05f64.cos()).abs() < 1e-3);
        assert!(CubicSpline::natural(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn acceleration_matches_levi_civita() {
        let m = model(
            (f64::NEG_INFINITY, f64::INFINITY),
            &["exp(0.3*t)", "2 + cos(t)"],
            vec![Fiber::Euclidean { dim: 1 }, Fiber::Sphere],
        );
        let x = [0.4, 1.0, 1.1, 0.3];
        let v = [1.2, 0.3, -0.4, 0.7];
        let mut a = vec![0.0; 4];
        m.geodesic_acceleration(&x, &v, &mut a).unwrap();
        let gam = christoffel(&m, &x).unwrap();
        let b = gam.contract(&v, &v);
        for k in 0..4 {
            assert!((a[k] + b[k]).abs() < 1e-7, "{k}: {} vs {}", a[k], -b[k]);
        }
    }

    #[test]
    fn conserved_quantities_along_the_flow() {
        let m = model(
            (f64::NEG_INFINITY, f64::INFINITY),
            &["1.5 + 0.5*sin(t)", "exp(0.2*t)"],
            vec![Fiber::Euclidean { dim: 2 }, Fiber::Sphere],
        );
        let st = GeodesicState::new(vec![0.1, 0.0, 0.0, 1.2, 0.4], vec![1.5, 0.2, -0.3, 0.1, 0.25], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 3.0), &IntegratorConfig::default()).unwrap();
        let r0 = reduction_constants(&m, &st.pos, &st.vel);
        for s in &tr.samples {
            let r = reduction_constants(&m, &s.pos, &s.vel);
            for (a, b) in r.c.iter().zip(&r0.c) {
                assert!((a - b).abs() / b < 1e-7);
            }
            assert!((r.k - r0.k).abs() / r0.k.abs() < 1e-7);
        }
    }

    #[test]
    fn static_lengths_closed_form() {
        let m = MultiwarpedModel::preset("grw-exp").unwrap();
        let one = model(
            (f64::NEG_INFINITY, f64::INFINITY),
            &["1"],
            vec![Fiber::Euclidean { dim: 1 }],
        );
        for k in [-0.5, 0.0, 2.0] {
            let l = fiber_lengths(&one, &[1.0], k, -1.0, 2.0).unwrap();
            assert!((l[0] - 3.0 / (k + 1.0f64).sqrt()).abs() < 1e-10);
        }
        assert!(matches!(
            fiber_lengths(&one, &[1.0], -1.0, 0.0, 1.0),
            Err(Error::TurningPoint)
        ));
        let l = fiber_lengths(&m, &[0.0], 1.0, 0.0, 1.0).unwrap();
        assert_eq!(l, vec![0.0]);
    }

    #[test]
    fn equal_warps_give_proportional_lengths() {
        let m = model(
            (0.0, 5.0),
            &["1 + t", "1 + t"],
            vec![Fiber::Euclidean { dim: 1 }, Fiber::Euclidean { dim: 1 }],
        );
        let l = fiber_lengths(&m, &[0.3, 0.7], 0.2, 1.0, 3.0).unwrap();
        assert!((l[0] / l[1] - 0.3 / 0.7).abs() < 1e-10);
        let mb = mubar(
            &m,
            &[1.0, 0.0],
            0.2,
            &FiberTarget {
                lengths: vec![1.0, 0.0],
                t_start: 1.0,
                t_end: 3.0,
            },
        )
        .unwrap();
        assert_eq!(mb.residuals, vec![0.0]);
    }

    #[test]
    fn product_solution_is_the_straight_line() {
        let m = MultiwarpedModel::preset("static-product").unwrap();
        let z = [0.0, 0.0, 0.0];
        let w = [2.0, 0.5, -1.5];
        let r = solve_connection(&m, &z, &w, &SolveOptions::default()).unwrap();
        assert_eq!(r.report.status, Status::Connected);
        assert_eq!(r.report.solutions.len(), 1);
        let v = &r.report.solutions[0].initial_velocity;
        for k in 0..3 {
            assert!((v[k] - w[k]).abs() < 1e-6, "{v:?}");
        }
        assert!(r.reductions[0].conservation_drift < 1e-7);
    }

    #[test]
    fn vertical_and_causal_flat_cases() {
        let m = model(
            (f64::NEG_INFINITY, f64::INFINITY),
            &["1"],
            vec![Fiber::Euclidean { dim: 1 }],
        );
        let opts = SolveOptions::default();
        let r = causal_connect(&m, &[0.0, 1.0], &[2.0, 1.0], &opts).unwrap();
        assert!(r.report.is_connected());
        assert_eq!(r.reductions[0].c, vec![0.0]);
        let r = causal_connect(&m, &[0.0, 0.0], &[2.0, 1.2], &opts).unwrap();
        assert!(r.report.is_connected());
        assert!((r.reductions[0].k_unit - (4.0 - 1.44)).abs() < 1e-6);
        let r = causal_connect(&m, &[0.0, 0.0], &[1.0, 1.5], &opts).unwrap();
        assert_eq!(r.report.status, Status::NotFound);
    }

    #[test]
    fn circle_windings_add_solutions() {
        let m = MultiwarpedModel::preset("circle-product").unwrap();
        let z = [0.0, 0.0, 0.5];
        let w = [3.0, 0.7, 1.5];
        let count = |k| {
            let o = SolveOptions {
                max_winding: k,
                ..Default::default()
            };
            solve_connection(&m, &z, &w, &o).unwrap().report.solutions.len()
        };
        let (a, b) = (count(0), count(1));
        assert!(a >= 1 && b > a, "{a} {b}");
    }

    #[test]
    fn criterion_closed_forms() {
        let one = model(
            (f64::NEG_INFINITY, f64::INFINITY),
            &["1"],
            vec![Fiber::Euclidean { dim: 1 }],
        );
        let r = check_integral_criterion(&one, 0.0).unwrap();
        assert!(r.all_divergent);
        let e = MultiwarpedModel::preset("grw-exp").unwrap();
        let r = check_integral_criterion(&e, 0.0).unwrap();
        assert_eq!(r.lower.verdicts, vec![CriterionVerdict::Divergent]);
        assert_eq!(r.upper.verdicts, vec![CriterionVerdict::Convergent]);
        assert!((r.upper.partial_integrals[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ladder_on_power_laws() {
        let (v, i) = ladder_verdict(|t: f64| 1.0 / t.sqrt(), 1.0, 0.0);
        assert_eq!(v, CriterionVerdict::Convergent);
        assert!((i - 2.0).abs() < 1e-5);
        assert_eq!(
            ladder_verdict(|t: f64| 1.0 / t, 1.0, 0.0).0,
            CriterionVerdict::Divergent
        );
        assert_eq!(ladder_verdict(|t: f64| t, 1.0, 0.0).0, CriterionVerdict::Convergent);
    }

    #[test]
    fn params_and_presets() {
        for name in PRESETS {
            let m = MultiwarpedModel::preset(name).unwrap();
            assert_eq!(m.dim(), 1 + (0..m.m()).map(|i| m.fiber(i).dim()).sum::<usize>());
        }
        let p: Map<String, Value> = serde_json::from_str(
            r#"{"interval":[0,null],"warps":["t",{"t":[0,1,2],"f":[1,2,3]}],
                "fibers":[{"kind":"euclidean","dim":1},{"kind":"torus","dim":1,"period":1}]}"#,
        )
        .unwrap();
        let m = MultiwarpedModel::from_params(&p).unwrap_err();
        assert!(matches!(m, Error::InvalidParams(_)));
        let p: Map<String, Value> = serde_json::from_str(
            r#"{"warps":["t",{"t":[0,1,2],"f":[1,2,3]}],
                "fibers":[{"kind":"euclidean","dim":1},{"kind":"sphere"}]}"#,
        )
        .unwrap();
        let m = MultiwarpedModel::from_params(&p).unwrap();
        assert_eq!(m.interval(), (0.0, 2.0));
        assert_eq!(m.dim(), 4);
    }

    #[test]
    fn sphere_fiber_enumeration() {
        let f = Fiber::Sphere;
        let z = [1.0, 0.2];
        let x = [1.4, 1.3];
        let gs = f.geodesics(&z, &x, 1);
        assert_eq!(gs.len(), 4);
        assert!(gs.windows(2).all(|w| w[0].length <= w[1].length));
        assert!((gs[0].length + gs[1].length - 2.0 * PI).abs() < 1e-12);
        assert!((f.norm2(&z, &gs[0].dir) - 1.0).abs() < 1e-12);
    }
}
