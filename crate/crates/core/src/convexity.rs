//! Domains `D = {φ > 0}` in a chart: boundary convexity classes from the
//! Hessian of `φ`, a tangent-geodesic test for local convexity, the
//! penalized action `½∫|ẋ|² + ε∫φ⁻²` with a continuation connector, and a
//! sampled audit of the conditions on `φ` near the boundary.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::{ConnectivityReport, Solution, Status, VerdictSource};
use crate::expr::DiffExpr;
use crate::geometry::{
    bilinear, check_dim, christoffel, integrate_with, metric_at, metric_derivatives_fd, GeodesicState, Geometry,
    IntegratorConfig,
};
use crate::models::{make_model, ModelId, CHART_VARS};
use crate::{Error, Result};

type PhiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Phi {
    Expr(DiffExpr),
    Func(PhiFn),
}

/// A chart domain `{x : φ(x) > 0}` of an ambient geometry.
pub struct DomainSpec {
    pub ambient: Box<dyn Geometry>,
    phi: Phi,
    /// Chart box used by sampling audits.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

/// On-disk form: `{"model": {...}, "phi": "...", "bounds": [[lo], [hi]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub model: ModelId,
    pub phi: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[Vec<f64>; 2]>,
}

impl DomainSpec {
    /// `phi` is an expression in `x, y, z, w` (the first `dim` of them).
    pub fn from_expr(ambient: Box<dyn Geometry>, phi: &str) -> Result<Self> {
        let n = ambient.dim();
        if n > CHART_VARS.len() {
            return Err(Error::InvalidParams(format!(
                "expression domains support dimension <= {}",
                CHART_VARS.len()
            )));
        }
        Ok(DomainSpec {
            phi: Phi::Expr(DiffExpr::parse(phi, &CHART_VARS[..n])?),
            ambient,
            bounds: None,
        })
    }

    /// Derivatives of `phi` are taken by central differences.
    pub fn from_fn(ambient: Box<dyn Geometry>, phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        DomainSpec {
            ambient,
            phi: Phi::Func(Arc::new(phi)),
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn from_file(file: &DomainFile) -> Result<Self> {
        let ambient = make_model(&file.model)?;
        let mut d = Self::from_expr(ambient, &file.phi)?;
        if let Some([lo, hi]) = &file.bounds {
            check_dim(d.dim(), lo.len())?;
            check_dim(d.dim(), hi.len())?;
            d.bounds = Some((lo.clone(), hi.clone()));
        }
        Ok(d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DomainFile = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn dim(&self) -> usize {
        self.ambient.dim()
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        match &self.phi {
            Phi::Expr(e) => e.eval(x),
            Phi::Func(f) => f(x),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match &self.phi {
            Phi::Expr(e) => e.gradient(x),
            Phi::Func(f) => {
                let mut y = x.to_vec();
                (0..x.len())
                    .map(|k| {
                        let h = 1e-5f64.max(1e-5 * x[k].abs());
                        let mut at = |d: f64| {
                            y[k] = x[k] + d;
                            let v = f(&y);
                            y[k] = x[k];
                            v
                        };
                        (at(-2.0 * h) - at(2.0 * h) + 8.0 * (at(h) - at(-h))) / (12.0 * h)
                    })
                    .collect()
            }
        }
    }

    /// Coordinate Hessian of `φ`.
    pub fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        match &self.phi {
            Phi::Expr(e) => {
                let h = e.hessian(x);
                DMatrix::from_fn(n, n, |i, j| h[i][j])
            }
            Phi::Func(_) => {
                let mut m = DMatrix::zeros(n, n);
                let mut y = x.to_vec();
                for k in 0..n {
                    let h = 1e-4f64.max(1e-4 * x[k].abs());
                    y[k] = x[k] + h;
                    let gp = self.grad(&y);
                    y[k] = x[k] - h;
                    let gm = self.grad(&y);
                    y[k] = x[k];
                    for i in 0..n {
                        m[(i, k)] = (gp[i] - gm[i]) / (2.0 * h);
                    }
                }
                (&m + m.transpose()) * 0.5
            }
        }
    }

    /// Inside the ambient chart with `φ > 0`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.ambient.contains(x) && self.phi(x) > 0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const TANGENT_TOL: f64 = 1e-10;

/// Covariant Hessian `∇²φ(v, v) = ∂²φ(v,v) − Γᵏ(v,v) ∂ₖφ` with `v` projected
/// onto `ker dφ_p` when `|dφ_p(v)| > 1e-10`.
pub fn hessian_form(dom: &DomainSpec, p: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(dom.dim(), p.len())?;
    check_dim(dom.dim(), v.len())?;
    let g = dom.grad(p);
    let gn2 = dot(&g, &g);
    if !(gn2.sqrt() > 1e-12) {
        return Err(Error::ZeroGradient(p.to_vec()));
    }
    let dv = dot(&g, v);
    let v: Vec<f64> = if dv.abs() > TANGENT_TOL {
        v.iter().zip(&g).map(|(a, b)| a - dv / gn2 * b).collect()
    } else {
        v.to_vec()
    };
    covariant_hessian(dom, p, &v, &g)
}

fn covariant_hessian(dom: &DomainSpec, p: &[f64], v: &[f64], g: &[f64]) -> Result<f64> {
    let h = dom.hess(p);
    let gam = christoffel(&*dom.ambient, p)?;
    let corr = gam.contract(v, v);
    Ok(bilinear(&h, v, v) - dot(&corr, g))
}

/// Moves `x` onto `φ = level` by Newton steps along the gradient.
pub fn project_to_level(dom: &DomainSpec, x: &[f64], level: f64) -> Result<Vec<f64>> {
    check_dim(dom.dim(), x.len())?;
    let mut y = x.to_vec();
    for _ in 0..100 {
        let r = dom.phi(&y) - level;
        if r.abs() <= 1e-13 * level.abs().max(1.0) {
            return Ok(y);
        }
        let g = dom.grad(&y);
        let gn2 = dot(&g, &g);
        if !(gn2 > 1e-24) {
            return Err(Error::ZeroGradient(y));
        }
        for (yi, gi) in y.iter_mut().zip(&g) {
            *yi -= r / gn2 * gi;
        }
        if !y.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::InvalidParams(format!(
        "projection onto level {level} did not converge from {x:?}"
    )))
}

/// Unit vectors spanning `ker g` (Euclidean in the chart): an orthonormal
/// basis, then normalized pairwise sums and differences, then seeded random
/// combinations until `count` directions exist.
fn tangent_directions(g: &[f64], count: usize) -> Vec<Vec<f64>> {
    let n = g.len();
    let gn = norm(g);
    let unit: Vec<f64> = g.iter().map(|a| a / gn).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let mut v: Vec<f64> = e.iter().zip(&unit).map(|(a, u)| a - unit[k] * u).collect();
        for b in &basis {
            let c = dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let vn = norm(&v);
        if vn > 1e-8 {
            basis.push(v.iter().map(|a| a / vn).collect());
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    let mut out = basis.clone();
    for i in 0..basis.len() {
        for j in i + 1..basis.len() {
            for s in [1.0, -1.0] {
                out.push(
                    basis[i]
                        .iter()
                        .zip(&basis[j])
                        .map(|(a, b)| (a + s * b) / 2f64.sqrt())
                        .collect(),
                );
            }
        }
    }
    if basis.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        while out.len() < count {
            let w: Vec<f64> = basis.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut v = vec![0.0; n];
            for (c, b) in w.iter().zip(&basis) {
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi += c * bi;
                }
            }
            let vn = norm(&v);
            if vn > 1e-6 {
                out.push(v.iter().map(|a| a / vn).collect());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryClass {
    /// Strictly infinitesimally convex: negative on every tangent direction.
    Sic,
    Ic,
    NotIc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    /// The sample after projection onto `φ = 0`.
    pub point: Vec<f64>,
    pub class: BoundaryClass,
    /// Largest covariant Hessian over unit tangent directions.
    pub margin: f64,
    pub directions: usize,
}

/// Margins within this distance of zero classify as `ic`.
pub const CLASS_TOL: f64 = 1e-8;

/// Classifies boundary points by the sign of the tangent Hessian of `φ`.
pub fn classify_boundary(dom: &DomainSpec, samples: &[Vec<f64>], directions: usize) -> Result<Vec<BoundaryPoint>> {
    samples
        .par_iter()
        .map(|x| {
            let p = project_to_level(dom, x, 0.0)?;
            let g = dom.grad(&p);
            let dirs = tangent_directions(&g, directions);
            let mut margin = f64::NEG_INFINITY;
            for v in &dirs {
                margin = margin.max(covariant_hessian(dom, &p, v, &g)?);
            }
            let class = if margin < -CLASS_TOL {
                BoundaryClass::Sic
            } else if margin <= CLASS_TOL {
                BoundaryClass::Ic
            } else {
                BoundaryClass::NotIc
            };
            Ok(BoundaryPoint {
                point: p,
                class,
                margin,
                directions: dirs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LcVerdict {
    ConsistentWithLc,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcCheck {
    pub verdict: LcVerdict,
    /// Largest `φ` met by any boundary-tangent geodesic.
    pub max_phi: f64,
    pub directions: usize,
}

/// Values of `φ` above this count as entering the domain.
pub const LC_TOL: f64 = 1e-9;

/// Follows geodesics tangent to the boundary at `p`, both senses, until they
/// are `radius` away in the chart; a violation is any of them entering `D`.
pub fn check_lc(dom: &DomainSpec, p: &[f64], radius: f64, directions: usize) -> Result<LcCheck> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParams("radius must be positive".into()));
    }
    let p = project_to_level(dom, p, 0.0)?;
    let g = dom.grad(&p);
    let mut dirs = tangent_directions(&g, directions);
    let neg: Vec<Vec<f64>> = dirs.iter().map(|v| v.iter().map(|a| -a).collect()).collect();
    dirs.extend(neg);
    let cfg = IntegratorConfig {
        h_max: radius / 200.0,
        record_energy: false,
        ..Default::default()
    };
    let maxima: Vec<f64> = dirs
        .par_iter()
        .map(|v| {
            let mut best = f64::NEG_INFINITY;
            let st = GeodesicState::new(p.clone(), v.clone(), 0.0);
            let _ = integrate_with(&*dom.ambient, &st, 100.0 * radius, &cfg, |_, next| {
                let d: Vec<f64> = next.pos.iter().zip(&p).map(|(a, b)| a - b).collect();
                if norm(&d) > radius {
                    return false;
                }
                best = best.max(dom.phi(&next.pos));
                true
            });
            best
        })
        .collect();
    let max_phi = maxima.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(LcCheck {
        verdict: if max_phi > LC_TOL {
            LcVerdict::Violation
        } else {
            LcVerdict::ConsistentWithLc
        },
        max_phi,
        directions: dirs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionValue {
    /// `½∫⟨ẋ,ẋ⟩` by the trapezoid rule on each segment.
    pub f: f64,
    /// `∫φ⁻²` by the trapezoid rule (without the factor `ε`).
    pub penalty: f64,
    pub total: f64,
}

fn full_path(p: &[f64], nodes: &[Vec<f64>], q: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(nodes.len() + 2);
    out.push(p.to_vec());
    out.extend(nodes.iter().cloned());
    out.push(q.to_vec());
    out
}

fn check_path(dom: &DomainSpec, path: &[Vec<f64>]) -> Result<()> {
    for x in path {
        check_dim(dom.dim(), x.len())?;
        if !dom.contains(x) {
            return Err(Error::OutsideDomain(x.clone()));
        }
    }
    Ok(())
}

/// `f(x) + ε∫φ(x)⁻²` on the uniform grid through `p`, `nodes`, `q`.
pub fn penalized_action(dom: &DomainSpec, p: &[f64], q: &[f64], nodes: &[Vec<f64>], eps: f64) -> Result<ActionValue> {
    let path = full_path(p, nodes, q);
    check_path(dom, &path)?;
    let h = 1.0 / (path.len() - 1) as f64;
    let metrics: Vec<DMatrix<f64>> = path
        .iter()
        .map(|x| metric_at(&*dom.ambient, x))
        .collect::<Result<_>>()?;
    let mut f = 0.0;
    for k in 0..path.len() - 1 {
        let d: Vec<f64> = path[k + 1].iter().zip(&path[k]).map(|(a, b)| a - b).collect();
        f += (bilinear(&metrics[k], &d, &d) + bilinear(&metrics[k + 1], &d, &d)) / (4.0 * h);
    }
    let last = path.len() - 1;
    let penalty: f64 = path
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let w = if k == 0 || k == last { 0.5 } else { 1.0 };
            w * h / dom.phi(x).powi(2)
        })
        .sum();
    Ok(ActionValue {
        f,
        penalty,
        total: f + eps * penalty,
    })
}

/// Gradient of [`penalized_action`]'s total with respect to the interior nodes.
pub fn penalized_gradient(
    dom: &DomainSpec,
    p: &[f64],
    q: &[f64],
    nodes: &[Vec<f64>],
    eps: f64,
) -> Result<Vec<Vec<f64>>> {
    let path = full_path(p, nodes, q);
    check_path(dom, &path)?;
    let n = dom.dim();
    let h = 1.0 / (path.len() - 1) as f64;
    let amb = &*dom.ambient;
    let metrics: Vec<DMatrix<f64>> = path.iter().map(|x| metric_at(amb, x)).collect::<Result<_>>()?;
    let dmetrics: Vec<Vec<DMatrix<f64>>> = path[1..path.len() - 1]
        .iter()
        .map(|x| match amb.metric_derivatives(x) {
            Some(d) => Ok(d),
            None => metric_derivatives_fd(amb, x),
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![vec![0.0; n]; nodes.len()];
    for (k, gk) in grad.iter_mut().enumerate() {
        let i = k + 1;
        let dl: Vec<f64> = path[i].iter().zip(&path[i - 1]).map(|(a, b)| a - b).collect();
        let dr: Vec<f64> = path[i + 1].iter().zip(&path[i]).map(|(a, b)| a - b).collect();
        let sl = &metrics[i - 1] + &metrics[i];
        let sr = &metrics[i] + &metrics[i + 1];
        for a in 0..n {
            let mut v = 0.0;
            for b in 0..n {
                v += (sl[(a, b)] * dl[b] - sr[(a, b)] * dr[b]) / (2.0 * h);
            }
            v += (bilinear(&dmetrics[k][a], &dl, &dl) + bilinear(&dmetrics[k][a], &dr, &dr)) / (4.0 * h);
            gk[a] = v;
        }
        if eps != 0.0 {
            let phi = dom.phi(&path[i]);
            let g = dom.grad(&path[i]);
            for a in 0..n {
                gk[a] -= 2.0 * eps * h * g[a] / phi.powi(3);
            }
        }
    }
    Ok(grad)
}

#[derive(Clone)]
pub struct PenalizedProblem<'a> {
    pub domain: &'a DomainSpec,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Interior nodes.
    pub n_nodes: usize,
    /// First penalty weight; by default 10% of `f` relative to `∫φ⁻²` on the initial path.
    pub eps0: Option<f64>,
    /// `ε_k = ε₀·4^{−k}` for `k < eps_steps`.
    pub eps_steps: usize,
    pub max_iter: usize,
    /// Interior nodes to start from; the chord when `None`.
    pub initial: Option<Vec<Vec<f64>>>,
    /// Discrete geodesic residual tolerance, relative to the squared speed.
    pub residual_tol: f64,
}

impl<'a> PenalizedProblem<'a> {
    pub fn new(domain: &'a DomainSpec, p: Vec<f64>, q: Vec<f64>) -> Self {
        PenalizedProblem {
            domain,
            p,
            q,
            n_nodes: 300,
            eps0: None,
            eps_steps: 8,
            max_iter: 3000,
            initial: None,
            residual_tol: 1e-3,
        }
    }

    pub fn schedule(&self, eps0: f64) -> Vec<f64> {
        (0..self.eps_steps).map(|k| eps0 * 0.25f64.powi(k as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleStep {
    pub eps: f64,
    pub f: f64,
    pub penalty: f64,
    /// `min φ` over the interior nodes.
    pub margin: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenalizedReport {
    #[serde(flatten)]
    pub report: ConnectivityReport,
    /// Endpoints included.
    pub path: Vec<Vec<f64>>,
    pub f: f64,
    pub margin: f64,
    pub geodesic_residual: f64,
    pub schedule: Vec<ScheduleStep>,
}

impl PenalizedReport {
    /// Rows `s, x_0, …` over the uniform grid.
    pub fn path_csv(&self) -> String {
        let n = self.path.first().map_or(0, Vec::len);
        let mut out = String::from("s");
        for i in 0..n {
            out.push_str(&format!(",x_{i}"));
        }
        out.push('\n');
        let h = 1.0 / (self.path.len().max(2) - 1) as f64;
        for (k, x) in self.path.iter().enumerate() {
            out.push_str(&format!("{}", k as f64 * h));
            for v in x {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Chord from `p` to `q` in the chart with nodes pushed inside where needed.
fn initial_chord(prob: &PenalizedProblem<'_>) -> Result<Vec<Vec<f64>>> {
    let dom = prob.domain;
    let level = 0.1 * dom.phi(&prob.p).min(dom.phi(&prob.q));
    let m = prob.n_nodes;
    (1..=m)
        .map(|k| {
            let s = k as f64 / (m + 1) as f64;
            let x: Vec<f64> = prob.p.iter().zip(&prob.q).map(|(a, b)| a + s * (b - a)).collect();
            if dom.contains(&x) && dom.phi(&x) >= level {
                Ok(x)
            } else {
                project_to_level(dom, &x, level)
            }
        })
        .collect()
}

/// Interior nodes of a planar path turning `k` extra times around `center`
/// (polar interpolation); a start for the connector in each winding class.
pub fn winding_path(p: &[f64], q: &[f64], center: &[f64], k: i32, n_nodes: usize) -> Vec<Vec<f64>> {
    let polar = |x: &[f64]| {
        let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
        ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
    };
    let (r0, a0) = polar(p);
    let (r1, a1) = polar(q);
    let mut da = a1 - a0;
    if da <= -std::f64::consts::PI {
        da += 2.0 * std::f64::consts::PI;
    } else if da > std::f64::consts::PI {
        da -= 2.0 * std::f64::consts::PI;
    }
    let turn = da + 2.0 * std::f64::consts::PI * k as f64;
    (1..=n_nodes)
        .map(|j| {
            let s = j as f64 / (n_nodes + 1) as f64;
            let r = r0 + s * (r1 - r0);
            let a = a0 + s * turn;
            vec![center[0] + r * a.cos(), center[1] + r * a.sin()]
        })
        .collect()
}

/// Solves `A z = r` per coordinate for `A = (1/h)·tridiag(−1, 2, −1)`.
fn h1_precondition(grad: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let m = grad.len();
    let n = grad.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; n]; m];
    for a in 0..n {
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        let (diag, off) = (2.0 / h, -1.0 / h);
        for i in 0..m {
            let denom = diag - if i > 0 { off * c[i - 1] } else { 0.0 };
            c[i] = off / denom;
            d[i] = (grad[i][a] - if i > 0 { off * d[i - 1] } else { 0.0 }) / denom;
        }
        for i in (0..m).rev() {
            out[i][a] = d[i] - if i + 1 < m { c[i] * out[i + 1][a] } else { 0.0 };
        }
    }
    out
}

/// Preconditioned gradient descent with Armijo backtracking; candidates that
/// leave the domain are rejected.
fn minimize(
    dom: &DomainSpec,
    p: &[f64],
    q: &[f64],
    nodes: &mut Vec<Vec<f64>>,
    eps: f64,
    max_iter: usize,
) -> Result<usize> {
    let h = 1.0 / (nodes.len() + 1) as f64;
    let mut val = penalized_action(dom, p, q, nodes, eps)?.total;
    for it in 0..max_iter {
        let g = penalized_gradient(dom, p, q, nodes, eps)?;
        let d = h1_precondition(&g, h);
        let slope: f64 = -g.iter().zip(&d).map(|(a, b)| dot(a, b)).sum::<f64>();
        if -slope <= 1e-15 * val.abs().max(1e-300) {
            return Ok(it);
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand: Vec<Vec<f64>> = nodes
                .iter()
                .zip(&d)
                .map(|(x, dx)| x.iter().zip(dx).map(|(a, b)| a - t * b).collect())
                .collect();
            if cand.iter().all(|x| dom.contains(x)) {
                if let Ok(v) = penalized_action(dom, p, q, &cand, eps) {
                    if v.total <= val + 1e-4 * t * slope {
                        let gain = val - v.total;
                        *nodes = cand;
                        val = v.total;
                        accepted = true;
                        if gain <= 1e-15 * val.abs() {
                            return Ok(it + 1);
                        }
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(it);
        }
    }
    Ok(max_iter)
}

/// `max_k |x''_k + Γ(x'_k, x'_k)| / |x'_k|²` with central differences.
fn geodesic_residual(dom: &DomainSpec, path: &[Vec<f64>]) -> Result<f64> {
    let h = 1.0 / (path.len() - 1) as f64;
    let mut worst: f64 = 0.0;
    for k in 1..path.len() - 1 {
        let v: Vec<f64> = path[k + 1]
            .iter()
            .zip(&path[k - 1])
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let acc: Vec<f64> = (0..v.len())
            .map(|i| (path[k + 1][i] - 2.0 * path[k][i] + path[k - 1][i]) / (h * h))
            .collect();
        let gam = christoffel(&*dom.ambient, &path[k])?.contract(&v, &v);
        let r: Vec<f64> = acc.iter().zip(&gam).map(|(a, b)| a + b).collect();
        let speed2 = dot(&v, &v);
        if speed2 > 0.0 {
            worst = worst.max(norm(&r) / speed2);
        }
    }
    Ok(worst)
}

/// Minimizes the penalized action along a decreasing `ε` schedule, each
/// stage warm-started from the previous minimizer, and validates the limit
/// as a discrete geodesic inside `D`.
pub fn connect_in_domain(prob: &PenalizedProblem<'_>) -> Result<PenalizedReport> {
    let dom = prob.domain;
    if dom.ambient.index() != 0 {
        return Err(Error::InvalidParams(
            "the penalized connector needs a Riemannian ambient metric".into(),
        ));
    }
    check_path(dom, &[prob.p.clone(), prob.q.clone()])?;
    if prob.n_nodes < 2 || prob.eps_steps == 0 {
        return Err(Error::InvalidParams("need n_nodes >= 2 and eps_steps >= 1".into()));
    }
    let mut report = ConnectivityReport::new(Status::NotFound, VerdictSource::PenalizedAction);
    let chord_len = norm(&prob.p.iter().zip(&prob.q).map(|(a, b)| a - b).collect::<Vec<_>>());
    if chord_len == 0.0 {
        report.status = Status::Connected;
        report.solutions.push(Solution {
            initial_velocity: vec![0.0; dom.dim()],
            arrival_s: 1.0,
            endpoint_error: 0.0,
            action: Some(0.0),
        });
        report.diagnostics.push("p = q: constant path".into());
        return Ok(PenalizedReport {
            report,
            path: vec![prob.p.clone(); prob.n_nodes + 2],
            f: 0.0,
            margin: dom.phi(&prob.p),
            geodesic_residual: 0.0,
            schedule: Vec::new(),
        });
    }
    let mut nodes = match &prob.initial {
        Some(init) => {
            if init.len() != prob.n_nodes {
                return Err(Error::InvalidParams(format!(
                    "initial path has {} nodes, expected {}",
                    init.len(),
                    prob.n_nodes
                )));
            }
            check_path(dom, init)?;
            init.clone()
        }
        None => initial_chord(prob)?,
    };
    let start = penalized_action(dom, &prob.p, &prob.q, &nodes, 0.0)?;
    let eps0 = match prob.eps0 {
        Some(e) if e > 0.0 => e,
        Some(_) => return Err(Error::InvalidParams("eps0 must be positive".into())),
        None => 0.1 * start.f / start.penalty,
    };
    let margin_of = |nodes: &[Vec<f64>]| nodes.iter().map(|x| dom.phi(x)).fold(f64::INFINITY, f64::min);
    let mut schedule = Vec::new();
    for eps in prob.schedule(eps0) {
        let iterations = minimize(dom, &prob.p, &prob.q, &mut nodes, eps, prob.max_iter)?;
        let v = penalized_action(dom, &prob.p, &prob.q, &nodes, eps)?;
        schedule.push(ScheduleStep {
            eps,
            f: v.f,
            penalty: v.penalty,
            margin: margin_of(&nodes),
            iterations,
        });
    }
    let path = full_path(&prob.p, &nodes, &prob.q);
    let last = schedule.last().unwrap().clone();
    let residual = geodesic_residual(dom, &path)?;
    let h = 1.0 / (path.len() - 1) as f64;
    let v0: Vec<f64> = (0..dom.dim())
        .map(|i| (-3.0 * path[0][i] + 4.0 * path[1][i] - path[2][i]) / (2.0 * h))
        .collect();
    report
        .diagnostics
        .push(format!("eps0 = {eps0:.6e}, {} stages", schedule.len()));

    let scale = dom.phi(&prob.p).min(dom.phi(&prob.q));
    let k = schedule.len();
    let shrinking = k >= 3 && last.margin < 0.67 * schedule[k - 3].margin;
    if last.margin < 0.05 * scale && shrinking {
        report.reason = Some("loss of convexity".into());
        report
            .diagnostics
            .push(format!("margin fell to {:.3e} along the schedule", last.margin));
    } else if residual > prob.residual_tol {
        report.reason = Some(format!(
            "optimizer stall: geodesic residual {residual:.3e} above {:.1e}",
            prob.residual_tol
        ));
    } else {
        report.status = Status::Connected;
        report.solutions.push(Solution {
            initial_velocity: v0,
            arrival_s: 1.0,
            endpoint_error: 0.0,
            action: Some(last.f),
        });
    }
    Ok(PenalizedReport {
        report,
        path,
        f: last.f,
        margin: last.margin,
        geodesic_residual: residual,
        schedule,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditVerdict {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelAudit {
    pub level: f64,
    pub points: usize,
    /// Range of `|∇φ|_g` over the level set samples.
    pub grad_min: f64,
    pub grad_max: f64,
    /// `sup ∇²φ(v,v) / (g(v,v)·level)` over level-tangent `v`.
    pub m_tangent: f64,
    /// Same over all directions.
    pub m_all: f64,
    /// Largest Frobenius norm of the Jacobian of `∇φ / |∇φ|²`.
    pub flow_jacobian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub verdict: AuditVerdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionsAudit {
    pub levels: Vec<LevelAudit>,
    /// `φ > 0` on the sampled domain and `dφ ≠ 0` on the level sets.
    pub positivity: Condition,
    /// `0 < a ≤ |∇φ| ≤ b` uniformly on the ladder.
    pub gradient_bounds: Condition,
    /// Local bounds on derivatives of the normalized gradient flow (sampled only).
    pub flow_derivatives: Condition,
    /// `∇²φ(v,v) ≤ M g(v,v) φ` for level-tangent `v`.
    pub tangent_hessian_bound: Condition,
    /// The same bound for every direction.
    pub full_hessian_bound: Condition,
    pub m_tangent: f64,
    pub m_all: f64,
}

fn slope_loglog(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Samples `φ = a_m` for each level of a decreasing `ladder` (seeded points
/// of the domain box projected onto the levels) and estimates the
/// constants of the boundary conditions.
pub fn audit_conditions(dom: &DomainSpec, ladder: &[f64], samples: usize, seed: u64) -> Result<ConditionsAudit> {
    let (lo, hi) = dom
        .bounds
        .clone()
        .ok_or_else(|| Error::InvalidParams("audit needs chart bounds for sampling".into()))?;
    if ladder.is_empty() || ladder.iter().any(|a| !(*a > 0.0)) || ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParams(
            "ladder must be positive and strictly decreasing".into(),
        ));
    }
    let n = dom.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = Vec::new();
    let mut tries = 0;
    while seeds.len() < samples && tries < 200 * samples.max(1) {
        tries += 1;
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
        if dom.contains(&x) {
            seeds.push(x);
        }
    }
    let in_box = |x: &[f64]| x.iter().zip(lo.iter().zip(&hi)).all(|(v, (a, b))| *v >= *a && *v <= *b);
    let amb = &*dom.ambient;
    let levels: Vec<LevelAudit> = ladder
        .iter()
        .map(|&level| {
            let pts: Vec<Vec<f64>> = seeds
                .iter()
                .filter_map(|s| project_to_level(dom, s, level).ok())
                .filter(|x| in_box(x) && amb.contains(x))
                .collect();
            let per_point: Vec<Result<(f64, f64, f64, f64)>> = pts
                .par_iter()
                .map(|x| {
                    let g = metric_at(amb, x)?;
                    let ginv = g.clone().try_inverse().ok_or(Error::DegenerateMetric {
                        point: x.clone(),
                        rcond: 0.0,
                    })?;
                    let dphi = dom.grad(x);
                    let gn = bilinear(&ginv, &dphi, &dphi).max(0.0).sqrt();
                    let mut mt = f64::NEG_INFINITY;
                    for v in tangent_directions(&dphi, 8) {
                        mt = mt.max(covariant_hessian(dom, x, &v, &dphi)? / (bilinear(&g, &v, &v) * level));
                    }
                    let mut ma = mt;
                    let mut all: Vec<Vec<f64>> = Vec::new();
                    for k in 0..n {
                        let mut e = vec![0.0; n];
                        e[k] = 1.0;
                        all.push(e);
                        for j in k + 1..n {
                            for s in [1.0, -1.0] {
                                let mut e = vec![0.0; n];
                                e[k] = 1.0 / 2f64.sqrt();
                                e[j] = s / 2f64.sqrt();
                                all.push(e);
                            }
                        }
                    }
                    for v in &all {
                        ma = ma.max(covariant_hessian(dom, x, v, &dphi)? / (bilinear(&g, v, v) * level));
                    }
                    let field = |y: &[f64]| -> Vec<f64> {
                        let d = dom.grad(y);
                        let ginv_y = amb
                            .metric(y)
                            .and_then(|m| m.try_inverse())
                            .unwrap_or_else(|| DMatrix::identity(n, n));
                        let up = &ginv_y * nalgebra::DVector::from_column_slice(&d);
                        let nn = dot(up.as_slice(), &d);
                        up.iter().map(|a| a / nn).collect()
                    };
                    let mut jac2 = 0.0;
                    let mut y = x.clone();
                    for k in 0..n {
                        let hh = 1e-5f64.max(1e-5 * x[k].abs());
                        y[k] = x[k] + hh;
                        let fp = field(&y);
                        y[k] = x[k] - hh;
                        let fm = field(&y);
                        y[k] = x[k];
                        jac2 += fp
                            .iter()
                            .zip(&fm)
                            .map(|(a, b)| ((a - b) / (2.0 * hh)).powi(2))
                            .sum::<f64>();
                    }
                    Ok((gn, mt, ma, jac2.sqrt()))
                })
                .collect();
            let mut la = LevelAudit {
                level,
                points: 0,
                grad_min: f64::INFINITY,
                grad_max: 0.0,
                m_tangent: f64::NEG_INFINITY,
                m_all: f64::NEG_INFINITY,
                flow_jacobian: 0.0,
            };
            for (gn, mt, ma, fj) in per_point.into_iter().flatten() {
                la.points += 1;
                la.grad_min = la.grad_min.min(gn);
                la.grad_max = la.grad_max.max(gn);
                la.m_tangent = la.m_tangent.max(mt);
                la.m_all = la.m_all.max(ma);
                la.flow_jacobian = la.flow_jacobian.max(fj);
            }
            la
        })
        .collect();

    let sampled: Vec<&LevelAudit> = levels.iter().filter(|l| l.points > 0).collect();
    let inconclusive = |why: &str| Condition {
        verdict: AuditVerdict::Inconclusive,
        detail: why.to_string(),
    };
    if sampled.is_empty() {
        let c = inconclusive("no level-set samples");
        return Ok(ConditionsAudit {
            levels,
            positivity: c.clone(),
            gradient_bounds: c.clone(),
            flow_derivatives: c.clone(),
            tangent_hessian_bound: c.clone(),
            full_hessian_bound: c,
            m_tangent: f64::NAN,
            m_all: f64::NAN,
        });
    }
    let a = sampled.iter().map(|l| l.grad_min).fold(f64::INFINITY, f64::min);
    let b = sampled.iter().map(|l| l.grad_max).fold(0.0, f64::max);
    let positivity = if a > 1e-12 {
        Condition {
            verdict: AuditVerdict::Holds,
            detail: format!("phi > 0 at {} seeds, min |grad phi| = {a:.3e}", seeds.len()),
        }
    } else {
        Condition {
            verdict: AuditVerdict::Fails,
            detail: "grad phi vanishes on a sampled level set".into(),
        }
    };
    let lv: Vec<f64> = sampled.iter().map(|l| l.level).collect();
    let slope = slope_loglog(&lv, &sampled.iter().map(|l| l.grad_min).collect::<Vec<_>>());
    let gradient_bounds = match slope {
        _ if a <= 1e-8 => Condition {
            verdict: AuditVerdict::Fails,
            detail: format!("min |grad phi| = {a:.3e}"),
        },
        Some(s) if s > 0.25 => Condition {
            verdict: AuditVerdict::Fails,
            detail: format!("min |grad phi| shrinks like level^{s:.2} toward the boundary"),
        },
        _ => Condition {
            verdict: AuditVerdict::Holds,
            detail: format!("a = {a:.4}, b = {b:.4}"),
        },
    };
    let fj = sampled.iter().map(|l| l.flow_jacobian).fold(0.0, f64::max);
    let flow_derivatives = inconclusive(&format!(
        "sampled max |D(grad phi/|grad phi|^2)| = {fj:.4e} (no pass/fail rule)"
    ));
    let bound = |vals: Vec<f64>, what: &str| -> (Condition, f64) {
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let first = vals[0].max(0.0);
        let lastv = vals[vals.len() - 1].max(0.0);
        let growing = vals.len() >= 3 && vals.windows(2).all(|w| w[1] > w[0]) && lastv > 10.0 * first.max(1e-12);
        if growing {
            (
                Condition {
                    verdict: AuditVerdict::Fails,
                    detail: format!("{what}: required M grows along the ladder (last {lastv:.3e})"),
                },
                m,
            )
        } else {
            (
                Condition {
                    verdict: AuditVerdict::Holds,
                    detail: format!("{what}: holds with M = {m:.4e}"),
                },
                m,
            )
        }
    };
    let (tangent_hessian_bound, m_tangent) = bound(sampled.iter().map(|l| l.m_tangent).collect(), "tangent directions");
    let (full_hessian_bound, m_all) = bound(sampled.iter().map(|l| l.m_all).collect(), "all directions");
    Ok(ConditionsAudit {
        levels,
        positivity,
        gradient_bounds,
        flow_derivatives,
        tangent_hessian_bound,
        full_hessian_bound,
        m_tangent,
        m_all,
    })
}
