//! Standard stationary spacetimes `-β dt² + 2ω⊗dt + g₀` on `R × M₀`: the
//! action functional, its split along the Killing field `∂_t`, Killing-charge
//! checks and an audit of the sufficient conditions for connectedness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::expr::DiffExpr;
use crate::geometry::{bilinear, Geometry, Trajectory};
use crate::params::{opt_str, opt_usize};
use crate::{Error, Result};

const BASE_VARS: [&str; 3] = ["x", "y", "z"];

/// Names accepted by [`StationaryModel::preset`].
pub const PRESETS: [&str; 5] = ["minkowski", "static", "rotating", "drag", "growing-lapse"];

/// `-β dt² + 2ω⊗dt + g₀` in coordinates `(t, x, y, z)` (base dimension 1 to 3).
#[derive(Debug, Clone)]
pub struct StationaryModel {
    base_dim: usize,
    g0: Option<Vec<Vec<DiffExpr>>>,
    beta: DiffExpr,
    omega: Vec<DiffExpr>,
    /// User assertion that `g₀` is complete; never inferred.
    pub g0_complete: Option<bool>,
}

impl StationaryModel {
    /// `g0 = None` selects the Euclidean base metric.
    pub fn new(base_dim: usize, g0: Option<&[Vec<&str>]>, beta: &str, omega: Option<&[&str]>) -> Result<Self> {
        if !(1..=3).contains(&base_dim) {
            return Err(Error::InvalidParams(format!(
                "base_dim must be 1, 2 or 3 (got {base_dim})"
            )));
        }
        let vars = &BASE_VARS[..base_dim];
        let g0 = match g0 {
            None => None,
            Some(rows) => {
                if rows.len() != base_dim || rows.iter().any(|r| r.len() != base_dim) {
                    return Err(Error::InvalidParams(format!(
                        "g0 must be a {base_dim}x{base_dim} array of expressions"
                    )));
                }
                let mut m = Vec::with_capacity(base_dim);
                for (i, row) in rows.iter().enumerate() {
                    let mut r = Vec::with_capacity(base_dim);
                    for (j, src) in row.iter().enumerate() {
                        // lower triangle mirrors the upper one
                        let src = if j < i { rows[j][i] } else { src };
                        r.push(DiffExpr::parse(src, vars)?);
                    }
                    m.push(r);
                }
                Some(m)
            }
        };
        let omega = match omega {
            None => (0..base_dim)
                .map(|_| DiffExpr::parse("0", vars))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            Some(list) => {
                if list.len() != base_dim {
                    return Err(Error::InvalidParams(format!("omega must have {base_dim} components")));
                }
                list.iter()
                    .map(|s| DiffExpr::parse(s, vars))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
        };
        Ok(StationaryModel {
            base_dim,
            g0,
            beta: DiffExpr::parse(beta, vars)?,
            omega,
            g0_complete: None,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "minkowski" => Self::new(2, None, "1", None),
            "static" => Self::new(2, None, "2 + sin(x)*cos(y)", None),
            "rotating" => Self::new(2, None, "1 + 0.3*cos(x)", Some(&["0.4*sin(y)", "0.2*cos(x)"])),
            "drag" => Self::new(2, None, "1", Some(&["x", "0"])),
            "growing-lapse" => Self::new(2, None, "1 + x^2 + y^2", None),
            _ => Err(Error::InvalidParams(format!(
                "unknown stationary preset '{name}' (known: {})",
                PRESETS.join(", ")
            ))),
        }
        .map(|mut m| {
            // flat bases are complete
            m.g0_complete = Some(true);
            m
        })
    }

    /// Reads `{preset}` or `{base_dim, g0, beta, omega, g0_complete}`.
    pub fn from_params(p: &Map<String, Value>) -> Result<Self> {
        for k in p.keys() {
            if !["preset", "base_dim", "g0", "beta", "omega", "g0_complete"].contains(&k.as_str()) {
                return Err(Error::InvalidParams(format!("unknown parameter '{k}'")));
            }
        }
        let asserted = match p.get("g0_complete") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_bool()
                    .ok_or_else(|| Error::InvalidParams("g0_complete: expected a boolean".into()))?,
            ),
        };
        if let Some(name) = opt_str(p, "preset")? {
            let mut m = Self::preset(name)?;
            if asserted.is_some() {
                m.g0_complete = asserted;
            }
            return Ok(m);
        }
        let base_dim = opt_usize(p, "base_dim")?.unwrap_or(2);
        let beta = opt_str(p, "beta")?.ok_or_else(|| Error::InvalidParams("beta: required expression".into()))?;
        let strings = |key: &str| -> Result<Option<Vec<String>>> {
            match p.get(key) {
                None | Some(Value::Null) => Ok(None),
                Some(v) => serde_json::from_value(v.clone())
                    .map(Some)
                    .map_err(|_| Error::InvalidParams(format!("{key}: expected expressions"))),
            }
        };
        let omega = strings("omega")?;
        let g0: Option<Vec<Vec<String>>> = match p.get("g0") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v.clone())
                    .map_err(|_| Error::InvalidParams("g0: expected an array of rows".into()))?,
            ),
        };
        let g0_refs: Option<Vec<Vec<&str>>> = g0
            .as_ref()
            .map(|rows| rows.iter().map(|r| r.iter().map(|s| s.as_str()).collect()).collect());
        let omega_refs: Option<Vec<&str>> = omega.as_ref().map(|v| v.iter().map(|s| s.as_str()).collect());
        let mut m = Self::new(base_dim, g0_refs.as_deref(), beta, omega_refs.as_deref())?;
        m.g0_complete = asserted;
        Ok(m)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn beta(&self, x: &[f64]) -> f64 {
        self.beta.eval(x)
    }

    pub fn omega(&self, x: &[f64]) -> Vec<f64> {
        self.omega.iter().map(|w| w.eval(x)).collect()
    }

    pub fn g0(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.base_dim;
        match &self.g0 {
            None => DMatrix::identity(k, k),
            Some(rows) => DMatrix::from_fn(k, k, |i, j| rows[i][j].eval(x)),
        }
    }

    /// `|ω|₀ = √(ω g₀⁻¹ ω)`.
    pub fn omega_norm(&self, x: &[f64]) -> f64 {
        let w = nalgebra::DVector::from_vec(self.omega(x));
        match self.g0(x).try_inverse() {
            Some(inv) => (w.transpose() * inv * &w)[(0, 0)].max(0.0).sqrt(),
            None => f64::NAN,
        }
    }

    /// The Killing field `∂_t`.
    pub fn killing_field(&self) -> impl Fn(&[f64]) -> Vec<f64> {
        let n = self.base_dim + 1;
        move |_x: &[f64]| {
            let mut k = vec![0.0; n];
            k[0] = 1.0;
            k
        }
    }
}

impl Geometry for StationaryModel {
    fn dim(&self) -> usize {
        self.base_dim + 1
    }
    fn index(&self) -> usize {
        1
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let b = &x[1..];
        let n = self.base_dim + 1;
        let mut g = DMatrix::zeros(n, n);
        g[(0, 0)] = -self.beta(b);
        for (i, w) in self.omega(b).into_iter().enumerate() {
            g[(0, i + 1)] = w;
            g[(i + 1, 0)] = w;
        }
        g.view_mut((1, 1), (n - 1, n - 1)).copy_from(&self.g0(b));
        Some(g)
    }
    fn metric_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let b = &x[1..];
        let n = self.base_dim + 1;
        let mut out = vec![DMatrix::zeros(n, n)];
        let dbeta = self.beta.gradient(b);
        let domega: Vec<Vec<f64>> = self.omega.iter().map(|w| w.gradient(b)).collect();
        for a in 0..self.base_dim {
            let mut d = DMatrix::zeros(n, n);
            d[(0, 0)] = -dbeta[a];
            for i in 0..self.base_dim {
                d[(0, i + 1)] = domega[i][a];
                d[(i + 1, 0)] = domega[i][a];
            }
            if let Some(rows) = &self.g0 {
                for i in 0..self.base_dim {
                    for j in 0..self.base_dim {
                        d[(i + 1, j + 1)] = rows[i][j].grad[a].eval(b);
                    }
                }
            }
            out.push(d);
        }
        Some(out)
    }
}

/// Nodes of a curve on a uniform grid of `[0, 1]`, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteCurve {
    pub nodes: Vec<Vec<f64>>,
}

impl DiscreteCurve {
    pub fn new(nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParams("a curve needs at least two nodes".into()));
        }
        let n = nodes[0].len();
        if let Some(bad) = nodes.iter().find(|x| x.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        if nodes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("curve nodes must be finite".into()));
        }
        Ok(DiscreteCurve { nodes })
    }

    /// Samples `c` at `segments + 1` uniform parameters.
    pub fn sample(c: impl Fn(f64) -> Vec<f64>, segments: usize) -> Result<Self> {
        Self::new((0..=segments).map(|i| c(i as f64 / segments as f64)).collect())
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Applies `integrand(g, ż)` at both ends of every segment (constant
/// velocity per segment) and sums with trapezoid weights.
fn trapezoid<G, F>(model: &G, curve: &DiscreteCurve, mut integrand: F) -> Result<f64>
where
    G: Geometry + ?Sized,
    F: FnMut(&DMatrix<f64>, &[f64]) -> Result<f64>,
{
    crate::geometry::check_dim(model.dim(), curve.nodes[0].len())?;
    let m = curve.segments();
    let h = 1.0 / m as f64;
    let metrics = curve
        .nodes
        .iter()
        .map(|x| crate::geometry::metric_at(model, x))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for k in 0..m {
        let v: Vec<f64> = curve.nodes[k + 1]
            .iter()
            .zip(&curve.nodes[k])
            .map(|(b, a)| (b - a) / h)
            .collect();
        total += 0.5 * h * (integrand(&metrics[k], &v)? + integrand(&metrics[k + 1], &v)?);
    }
    Ok(total)
}

/// `f = ½∫⟨ż, ż⟩`.
pub fn action_f<G: Geometry + ?Sized>(model: &G, curve: &DiscreteCurve) -> Result<f64> {
    trapezoid(model, curve, |g, v| Ok(0.5 * bilinear(g, v, v)))
}

/// `(f₁, f₂)` with `f₂ = ½∫⟨ż,K⟩²/⟨K,K⟩` and `f₁ = f - f₂` integrand-wise,
/// for `K = ∂_t`.
pub fn split_f1_f2<G: Geometry + ?Sized>(model: &G, curve: &DiscreteCurve) -> Result<(f64, f64)> {
    let mut second = Vec::new();
    let f1 = trapezoid(model, curve, |g, v| {
        let kk = g[(0, 0)];
        if !(kk < 0.0) {
            return Err(Error::NotTimelike(kk));
        }
        let zk: f64 = (0..v.len()).map(|j| g[(0, j)] * v[j]).sum();
        let part = 0.5 * zk * zk / kk;
        second.push(part);
        Ok(0.5 * bilinear(g, v, v) - part)
    })?;
    let h = 1.0 / curve.segments() as f64;
    let f2 = second.chunks(2).map(|p| 0.5 * h * (p[0] + p[1])).sum();
    Ok((f1, f2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KillingCheck {
    pub mean: f64,
    pub max_deviation: f64,
    /// `max_deviation / |mean|`, or the absolute deviation when `|mean| < 1e-12`.
    pub drift: f64,
    pub relative: bool,
}

/// Mean and spread of `g(∂_t, γ')` along the samples of a trajectory.
pub fn verify_killing_constant<G: Geometry + ?Sized>(model: &G, tr: &Trajectory) -> Result<KillingCheck> {
    let n = model.dim();
    let mut k = vec![0.0; n];
    k[0] = 1.0;
    let charges = tr
        .samples
        .iter()
        .map(|s| crate::geometry::inner(model, &s.pos, &k, &s.vel))
        .collect::<Result<Vec<_>>>()?;
    let mean = charges.iter().sum::<f64>() / charges.len() as f64;
    let max_deviation = charges.iter().map(|c| (c - mean).abs()).fold(0.0, f64::max);
    let relative = mean.abs() >= 1e-12;
    Ok(KillingCheck {
        mean,
        max_deviation,
        drift: if relative {
            max_deviation / mean.abs()
        } else {
            max_deviation
        },
        relative,
    })
}

/// Largest `|∂φ/∂t|` over samples, by central differences in `t`.
pub fn t_invariance_defect(phi: impl Fn(&[f64]) -> f64, samples: &[Vec<f64>]) -> f64 {
    let h = 1e-5;
    samples
        .iter()
        .map(|x| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[0] += h;
            b[0] -= h;
            ((phi(&a) - phi(&b)) / (2.0 * h)).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFit {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    /// Mean absolute deviation of the binned medians from the fit.
    pub residual: f64,
    pub sublinear: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectednessAudit {
    pub completeness: String,
    pub completeness_asserted: Option<bool>,
    pub beta_inf: f64,
    pub beta_sup: f64,
    /// `(region scale, sup β)` over nested boxes around the base point.
    pub beta_sup_by_scale: Vec<(f64, f64)>,
    pub beta_bounds_hold: bool,
    pub omega_growth: GrowthFit,
    pub notes: Vec<String>,
}

/// Sampled audit of: complete base, `0 < inf β ≤ sup β < ∞`, and sublinear
/// growth of `|ω|₀` in the base distance from `p0`.
///
/// `lo`, `hi` bound a box in the base; `samples` points per axis.
pub fn audit_connectedness(
    model: &StationaryModel,
    lo: &[f64],
    hi: &[f64],
    p0: &[f64],
    samples: usize,
) -> Result<ConnectednessAudit> {
    let k = model.base_dim();
    for v in [lo, hi, p0] {
        crate::geometry::check_dim(k, v.len())?;
    }
    if samples < 3 || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::InvalidParams(
            "audit needs a nondegenerate box and at least 3 samples per axis".into(),
        ));
    }
    let grid = Grid::new(lo, hi, samples);
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let betas: Vec<f64> = points.iter().map(|x| model.beta(x)).collect();
    let beta_inf = betas.iter().copied().fold(f64::INFINITY, f64::min);
    let beta_sup = betas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut beta_sup_by_scale = Vec::new();
    for scale in [0.25, 0.5, 1.0] {
        let sup = points
            .iter()
            .zip(&betas)
            .filter(|(x, _)| {
                x.iter().enumerate().all(|(i, xi)| {
                    let c = p0[i].clamp(lo[i], hi[i]);
                    let half = 0.5 * (hi[i] - lo[i]) * scale;
                    (xi - c).abs() <= half + 1e-12 * (hi[i] - lo[i])
                })
            })
            .map(|(_, b)| *b)
            .fold(f64::NEG_INFINITY, f64::max);
        beta_sup_by_scale.push((scale, sup));
    }
    let half = beta_sup_by_scale[1].1;
    let grows = beta_sup > 1.05 * half.max(1e-300);
    let beta_bounds_hold = beta_inf > 0.0 && beta_sup.is_finite() && !grows;

    let dist = grid.geodesic_distances(model, p0);
    let norms: Vec<f64> = points.iter().map(|x| model.omega_norm(x)).collect();
    let omega_growth = fit_growth(&dist, &norms);

    let mut notes = vec![
        "bounds are sampled on a finite grid; they are evidence, not proof".to_string(),
        "base distance approximated by shortest paths on the sample grid".to_string(),
    ];
    if grows {
        notes.push("sup beta grows with the region size".to_string());
    }
    if beta_inf <= 0.0 {
        notes.push("beta is not positive on the sampled region".to_string());
    }
    Ok(ConnectednessAudit {
        completeness: "not decidable numerically; user assertion required".to_string(),
        completeness_asserted: model.g0_complete,
        beta_inf,
        beta_sup,
        beta_sup_by_scale,
        beta_bounds_hold,
        omega_growth,
        notes,
    })
}

struct Grid {
    lo: Vec<f64>,
    step: Vec<f64>,
    n: usize,
    k: usize,
}

impl Grid {
    fn new(lo: &[f64], hi: &[f64], n: usize) -> Self {
        Grid {
            lo: lo.to_vec(),
            step: lo.iter().zip(hi).map(|(a, b)| (b - a) / (n - 1) as f64).collect(),
            n,
            k: lo.len(),
        }
    }

    fn len(&self) -> usize {
        self.n.pow(self.k as u32)
    }

    fn index(&self, i: usize) -> Vec<usize> {
        let mut r = i;
        (0..self.k)
            .map(|_| {
                let d = r % self.n;
                r /= self.n;
                d
            })
            .collect()
    }

    fn point(&self, i: usize) -> Vec<f64> {
        self.index(i)
            .iter()
            .enumerate()
            .map(|(a, &d)| self.lo[a] + d as f64 * self.step[a])
            .collect()
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &d| acc * self.n + d)
    }

    /// Dijkstra over the grid with all `3^k - 1` neighbour moves, each move
    /// weighted by its `g₀`-length at the midpoint. The source is the grid
    /// node nearest to `p0` plus the straight offset to it.
    fn geodesic_distances(&self, model: &StationaryModel, p0: &[f64]) -> Vec<f64> {
        let total = self.len();
        let len = |a: &[f64], b: &[f64]| -> f64 {
            let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            bilinear(&model.g0(&mid), &d, &d).max(0.0).sqrt()
        };
        let src_idx: Vec<usize> = (0..self.k)
            .map(|a| (((p0[a] - self.lo[a]) / self.step[a]).round().max(0.0) as usize).min(self.n - 1))
            .collect();
        let src = self.flat(&src_idx);
        let mut dist = vec![f64::INFINITY; total];
        dist[src] = len(p0, &self.point(src));
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(dist[src], src));
        let moves: Vec<Vec<i64>> = (0..3usize.pow(self.k as u32))
            .map(|m| {
                let mut r = m;
                (0..self.k)
                    .map(|_| {
                        let d = (r % 3) as i64 - 1;
                        r /= 3;
                        d
                    })
                    .collect::<Vec<i64>>()
            })
            .filter(|m| m.iter().any(|d| *d != 0))
            .collect();
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            let ui = self.index(u);
            let up = self.point(u);
            for mv in &moves {
                let mut vi = Vec::with_capacity(self.k);
                let mut ok = true;
                for (a, m) in mv.iter().enumerate() {
                    let c = ui[a] as i64 + m;
                    if c < 0 || c >= self.n as i64 {
                        ok = false;
                        break;
                    }
                    vi.push(c as usize);
                }
                if !ok {
                    continue;
                }
                let v = self.flat(&vi);
                let nd = d + len(&up, &self.point(v));
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        dist
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-absolute-deviation fit of `y ≈ A d^α + B` over log-binned medians,
/// scanning `α ∈ [0, 3]`.
fn fit_growth(d: &[f64], y: &[f64]) -> GrowthFit {
    let pairs: Vec<(f64, f64)> = d
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && **a > 0.0 && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    let dmax = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let dmin = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    const BINS: usize = 12;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); BINS];
    let mut centres: Vec<Vec<f64>> = vec![Vec::new(); BINS];
    let span = (dmax / dmin).ln().max(1e-12);
    for (a, b) in &pairs {
        let t = ((a / dmin).ln() / span * BINS as f64).floor() as usize;
        let t = t.min(BINS - 1);
        bins[t].push(*b);
        centres[t].push(*a);
    }
    let pts: Vec<(f64, f64)> = bins
        .iter_mut()
        .zip(centres.iter_mut())
        .filter(|(b, _)| !b.is_empty())
        .map(|(b, c)| (median(c), median(b)))
        .collect();
    let scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1e-300);
    let mut best = GrowthFit {
        alpha: 0.0,
        a: 0.0,
        b: 0.0,
        residual: f64::INFINITY,
        sublinear: true,
    };
    for step in 0..=300 {
        let alpha = step as f64 * 0.01;
        let (a, b, r) = lad_line(&pts, alpha);
        // prefer the smallest exponent unless a larger one is clearly better
        if r < best.residual - 1e-9 * scale {
            best = GrowthFit {
                alpha,
                a,
                b,
                residual: r,
                sublinear: true,
            };
        }
    }
    if best.a.abs() <= 1e-9 * scale {
        best.alpha = 0.0;
    }
    best.sublinear = best.alpha < 0.9;
    best
}

/// LAD fit of `y ≈ A x^α + B` by iteratively reweighted least squares.
fn lad_line(pts: &[(f64, f64)], alpha: f64) -> (f64, f64, f64) {
    let xs: Vec<f64> = pts.iter().map(|p| p.0.powf(alpha)).collect();
    let mut w = vec![1.0; pts.len()];
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..30 {
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((x, p), wi) in xs.iter().zip(pts).zip(&w) {
            sw += wi;
            sx += wi * x;
            sy += wi * p.1;
            sxx += wi * x * x;
            sxy += wi * x * p.1;
        }
        let det = sw * sxx - sx * sx;
        if det.abs() < 1e-14 * (sw * sxx).abs().max(1e-300) {
            a = 0.0;
            b = sy / sw;
        } else {
            a = (sw * sxy - sx * sy) / det;
            b = (sy - a * sx) / sw;
        }
        for ((x, p), wi) in xs.iter().zip(pts).zip(w.iter_mut()) {
            *wi = 1.0 / (p.1 - a * x - b).abs().max(1e-9);
        }
    }
    let r = xs.iter().zip(pts).map(|(x, p)| (p.1 - a * x - b).abs()).sum::<f64>() / pts.len().max(1) as f64;
    (a, b, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{integrate_geodesic, GeodesicState, IntegratorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(a: Vec<f64>, b: Vec<f64>, n: usize) -> DiscreteCurve {
        DiscreteCurve::sample(|s| a.iter().zip(&b).map(|(x, y)| x + s * (y - x)).collect(), n).unwrap()
    }

    #[test]
    fn vertical_and_horizontal_chords() {
        let m = StationaryModel::preset("minkowski").unwrap();
        let v = line(vec![0.0, 0.3, 0.2], vec![1.0, 0.3, 0.2], 10);
        assert!((action_f(&m, &v).unwrap() + 0.5).abs() < 1e-15);
        let (f1, f2) = split_f1_f2(&m, &v).unwrap();
        assert!(f1.abs() < 1e-15 && (f2 + 0.5).abs() < 1e-15);

        let h = line(vec![0.0, 0.0, 0.0], vec![0.0, 3.0, 4.0], 10);
        assert!((action_f(&m, &h).unwrap() - 12.5).abs() < 1e-12);
        let (f1, f2) = split_f1_f2(&m, &h).unwrap();
        assert!((f1 - 12.5).abs() < 1e-12 && f2 == 0.0);
    }

    #[test]
    fn action_converges_under_refinement() {
        let m = StationaryModel::preset("rotating").unwrap();
        let c = |s: f64| vec![s * s, (3.0 * s).sin(), s - 0.5 * s * s * s];
        let a = action_f(&m, &DiscreteCurve::sample(c, 4000).unwrap()).unwrap();
        let b = action_f(&m, &DiscreteCurve::sample(c, 8000).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} {b}");
    }

    #[test]
    fn split_identity_and_sign_on_random_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for name in PRESETS {
            let m = StationaryModel::preset(name).unwrap();
            for _ in 0..10 {
                let nodes: Vec<Vec<f64>> = (0..20)
                    .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                let c = DiscreteCurve::new(nodes).unwrap();
                let f = action_f(&m, &c).unwrap();
                let (f1, f2) = split_f1_f2(&m, &c).unwrap();
                assert!((f - f1 - f2).abs() <= 1e-12 * (f1.abs() + f2.abs()));
                assert!(f2 <= 0.0 && f1 >= 0.0);
            }
        }
    }

    #[test]
    fn killing_charge_is_conserved() {
        let m = StationaryModel::preset("rotating").unwrap();
        let st = GeodesicState::new(vec![0.0, 0.3, -0.2], vec![1.5, 0.4, 0.7], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 10.0), &IntegratorConfig::default()).unwrap();
        let k = verify_killing_constant(&m, &tr).unwrap();
        assert!(k.relative && k.drift < 1e-7, "{k:?}");

        let s = StationaryModel::preset("static").unwrap();
        let st = GeodesicState::new(vec![0.0, 0.3, -0.2], vec![0.0, 0.4, 0.7], 0.0);
        let tr = integrate_geodesic(&s, &st, (0.0, 5.0), &IntegratorConfig::default()).unwrap();
        let k = verify_killing_constant(&s, &tr).unwrap();
        assert!(k.mean.abs() < 1e-9 && k.max_deviation < 1e-9);
    }

    #[test]
    fn perturbed_curve_has_large_drift() {
        let m = StationaryModel::preset("rotating").unwrap();
        let st = GeodesicState::new(vec![0.0, 0.3, -0.2], vec![1.5, 0.4, 0.7], 0.0);
        let mut tr = integrate_geodesic(&m, &st, (0.0, 3.0), &IntegratorConfig::default()).unwrap();
        for (i, s) in tr.samples.iter_mut().enumerate() {
            s.vel[0] += 0.1 * (i as f64).sin();
        }
        assert!(verify_killing_constant(&m, &tr).unwrap().drift > 1e-3);
    }

    #[test]
    fn spacelike_split_is_rejected() {
        let m = StationaryModel::new(1, None, "-1", None).unwrap();
        let c = line(vec![0.0, 0.0], vec![1.0, 1.0], 4);
        assert!(matches!(split_f1_f2(&m, &c), Err(Error::NotTimelike(_))));
    }

    #[test]
    fn audits_of_the_reference_models() {
        let lo = [-10.0, -10.0];
        let hi = [10.0, 10.0];
        let flat = StationaryModel::preset("minkowski").unwrap();
        let a = audit_connectedness(&flat, &lo, &hi, &[0.0, 0.0], 41).unwrap();
        assert_eq!((a.beta_inf, a.beta_sup), (1.0, 1.0));
        assert!(a.beta_bounds_hold);
        assert_eq!(a.omega_growth.alpha, 0.0);
        assert!(a.omega_growth.sublinear);

        let drag = StationaryModel::preset("drag").unwrap();
        let a = audit_connectedness(&drag, &lo, &hi, &[0.0, 0.0], 41).unwrap();
        assert!((a.omega_growth.alpha - 1.0).abs() < 0.15, "{:?}", a.omega_growth);
        assert!(!a.omega_growth.sublinear);

        let lapse = StationaryModel::preset("growing-lapse").unwrap();
        let a = audit_connectedness(&lapse, &lo, &hi, &[0.0, 0.0], 41).unwrap();
        assert!(!a.beta_bounds_hold);
        let sups: Vec<f64> = a.beta_sup_by_scale.iter().map(|p| p.1).collect();
        assert!(sups[0] < sups[1] && sups[1] < sups[2]);
    }

    #[test]
    fn from_params_round_trip() {
        let p: Map<String, Value> =
            serde_json::from_str(r#"{"base_dim":1,"beta":"1+x^2","omega":["0.5"],"g0":[["2"]],"g0_complete":true}"#)
                .unwrap();
        let m = StationaryModel::from_params(&p).unwrap();
        let g = m.metric(&[0.0, 1.0]).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, 2.0]));
        assert_eq!(m.g0_complete, Some(true));
        let bad: Map<String, Value> = serde_json::from_str(r#"{"beta":"1+q"}"#).unwrap();
        assert!(matches!(StationaryModel::from_params(&bad), Err(Error::Expr(_))));
    }

    #[test]
    fn t_invariance() {
        let pts = vec![vec![0.3, 0.1, 0.2], vec![-1.0, 2.0, 0.5]];
        assert!(t_invariance_defect(|x| 1.0 - x[1] * x[1] - x[2] * x[2], &pts) < 1e-12);
        assert!(t_invariance_defect(|x| 1.0 - x[0] * x[0], &pts) > 0.5);
    }
}
