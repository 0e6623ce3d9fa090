//! Chart-level geometry: metrics, affine connections, Christoffel symbols,
//! geodesic integration and the exponential map.

mod integrate;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use integrate::{
    exp_map, integrate_geodesic, integrate_with, Drift, GeodesicState, IntegratorConfig, StepStats, Termination,
    Trajectory,
};

/// Connection coefficients `Γ^k_{ij}` stored as `data[k*n*n + i*n + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }

    /// Sets both `Γ^k_{ij}` and `Γ^k_{ji}`.
    pub fn set_sym(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.set(k, i, j, v);
        self.set(k, j, i, v);
    }

    /// `Γ^k_{ij} a^i b^j` for every `k`.
    pub fn contract(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += self.get(k, i, j) * a[i] * b[j];
                    }
                }
                s
            })
            .collect()
    }

    /// Largest `|Γ^k_{ij} - Γ^k_{ji}|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut m: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    m = m.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        m
    }

    /// Symmetric part `½(Γ^k_{ij} + Γ^k_{ji})`; it has the same geodesics.
    pub fn symmetrized(&self) -> Self {
        let n = self.n;
        let mut out = Christoffel::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    out.set(k, i, j, 0.5 * (self.get(k, i, j) + self.get(k, j, i)));
                }
            }
        }
        out
    }
}

/// A chart-level description of (a piece of) a manifold.
///
/// A model supplies a metric, an affine connection, or both. When only a
/// metric is given, the Levi-Civita connection is derived from it.
pub trait Geometry: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of negative eigenvalues of the metric (0 for connection-only models).
    fn index(&self) -> usize {
        0
    }

    fn has_metric(&self) -> bool {
        false
    }

    fn metric(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic `∂_k g` for every coordinate `k`; `None` selects finite differences.
    fn metric_derivatives(&self, _x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    /// Analytic connection coefficients; `None` derives Levi-Civita from the metric.
    fn connection(&self, _x: &[f64]) -> Option<Christoffel> {
        None
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite())
    }

    /// Writes `-Γ^k_{ij} v^i v^j` into `out`. Models override this when a
    /// closed form is cheaper than assembling the full coefficient array.
    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let gamma = christoffel(self, x)?;
        let n = self.dim();
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                let vi = v[i];
                if vi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    s += gamma.get(k, i, j) * vi * v[j];
                }
            }
            out[k] = -s;
        }
        Ok(())
    }
}

impl<G: Geometry + ?Sized> Geometry for Box<G> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn index(&self) -> usize {
        (**self).index()
    }
    fn has_metric(&self) -> bool {
        (**self).has_metric()
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        (**self).metric(x)
    }
    fn metric_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        (**self).metric_derivatives(x)
    }
    fn connection(&self, x: &[f64]) -> Option<Christoffel> {
        (**self).connection(x)
    }
    fn contains(&self, x: &[f64]) -> bool {
        (**self).contains(x)
    }
    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).geodesic_acceleration(x, v, out)
    }
}

impl<G: Geometry + ?Sized> Geometry for &G {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn index(&self) -> usize {
        (**self).index()
    }
    fn has_metric(&self) -> bool {
        (**self).has_metric()
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        (**self).metric(x)
    }
    fn metric_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        (**self).metric_derivatives(x)
    }
    fn connection(&self, x: &[f64]) -> Option<Christoffel> {
        (**self).connection(x)
    }
    fn contains(&self, x: &[f64]) -> bool {
        (**self).contains(x)
    }
    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).geodesic_acceleration(x, v, out)
    }
}

/// Reciprocal condition number below which a metric counts as degenerate.
pub const DEGENERATE_RCOND: f64 = 1e-12;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

/// Metric at `x` after checking the domain and nondegeneracy.
pub fn metric_at<G: Geometry + ?Sized>(model: &G, x: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(model.dim(), x.len())?;
    if !model.contains(x) {
        return Err(Error::OutsideDomain(x.to_vec()));
    }
    let g = model.metric(x).ok_or(Error::NoMetric)?;
    let rcond = reciprocal_condition(&g);
    if !(rcond >= DEGENERATE_RCOND) {
        return Err(Error::DegenerateMetric {
            point: x.to_vec(),
            rcond,
        });
    }
    Ok(g)
}

/// `min|λ| / max|λ|` over the eigenvalues of a symmetric matrix.
pub fn reciprocal_condition(g: &DMatrix<f64>) -> f64 {
    let eig = g.clone().symmetric_eigenvalues();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for l in eig.iter() {
        lo = lo.min(l.abs());
        hi = hi.max(l.abs());
    }
    if hi == 0.0 || !hi.is_finite() {
        0.0
    } else {
        lo / hi
    }
}

/// Number of negative eigenvalues of a symmetric matrix.
pub fn negative_eigenvalues(g: &DMatrix<f64>) -> usize {
    g.clone().symmetric_eigenvalues().iter().filter(|l| **l < 0.0).count()
}

/// Checks that the metric at `x` is nondegenerate with the model's index.
pub fn check_signature<G: Geometry + ?Sized>(model: &G, x: &[f64]) -> Result<()> {
    let g = metric_at(model, x)?;
    let found = negative_eigenvalues(&g);
    if found != model.index() {
        return Err(Error::WrongSignature {
            point: x.to_vec(),
            expected: model.index(),
            found,
        });
    }
    Ok(())
}

/// Fourth-order central-difference step for coordinate value `xk`.
fn fd_step(xk: f64) -> f64 {
    1e-5f64.max(1e-5 * xk.abs())
}

/// `∂_k g_{ij}` by fourth-order central differences.
pub fn metric_derivatives_fd<G: Geometry + ?Sized>(model: &G, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let n = model.dim();
    let mut out = Vec::with_capacity(n);
    let mut y = x.to_vec();
    for k in 0..n {
        let h = fd_step(x[k]);
        let mut eval = |d: f64| -> Result<DMatrix<f64>> {
            y[k] = x[k] + d;
            let g = model.metric(&y).ok_or(Error::NoMetric);
            y[k] = x[k];
            g
        };
        let gp2 = eval(2.0 * h)?;
        let gp1 = eval(h)?;
        let gm1 = eval(-h)?;
        let gm2 = eval(-2.0 * h)?;
        out.push((gm2 - gp2 + (gp1 - gm1) * 8.0) / (12.0 * h));
    }
    Ok(out)
}

/// Levi-Civita coefficients from a metric and its derivatives.
pub fn levi_civita(g: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Option<Christoffel> {
    let n = g.nrows();
    let ginv = g.clone().try_inverse()?;
    let mut gamma = Christoffel::zeros(n);
    // lowered[l][i][j] = ½(∂_i g_lj + ∂_j g_li - ∂_l g_ij)
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    let low = 0.5 * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
                    s += ginv[(k, l)] * low;
                }
                gamma.set_sym(k, i, j, s);
            }
        }
    }
    Some(gamma)
}

/// Connection coefficients at `x`: the analytic connection when the model
/// supplies one, otherwise Levi-Civita from the metric.
pub fn christoffel<G: Geometry + ?Sized>(model: &G, x: &[f64]) -> Result<Christoffel> {
    check_dim(model.dim(), x.len())?;
    if !model.contains(x) {
        return Err(Error::OutsideDomain(x.to_vec()));
    }
    if let Some(c) = model.connection(x) {
        return Ok(c);
    }
    if !model.has_metric() {
        return Err(Error::NoConnection);
    }
    let g = metric_at(model, x)?;
    let dg = match model.metric_derivatives(x) {
        Some(d) => d,
        None => metric_derivatives_fd(model, x)?,
    };
    levi_civita(&g, &dg).ok_or_else(|| Error::DegenerateMetric {
        point: x.to_vec(),
        rcond: 0.0,
    })
}

/// `g_p(v, w)`.
pub fn inner<G: Geometry + ?Sized>(model: &G, x: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    check_dim(model.dim(), v.len())?;
    check_dim(model.dim(), w.len())?;
    if !model.has_metric() {
        return Err(Error::NoMetric);
    }
    let g = model.metric(x).ok_or(Error::NoMetric)?;
    Ok(bilinear(&g, v, w))
}

pub(crate) fn bilinear(g: &DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[(i, j)] * v[i] * w[j];
        }
    }
    s
}

/// `g(γ', γ')` at a state.
pub fn energy<G: Geometry + ?Sized>(model: &G, st: &GeodesicState) -> Result<f64> {
    inner(model, &st.pos, &st.vel, &st.vel)
}

/// `g(K(pos), vel)` for a vector field `K`.
pub fn killing_charge<G, K>(model: &G, field: K, st: &GeodesicState) -> Result<f64>
where
    G: Geometry + ?Sized,
    K: Fn(&[f64]) -> Vec<f64>,
{
    let k = field(&st.pos);
    inner(model, &st.pos, &k, &st.vel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Flat, RoundSphere};

    #[test]
    fn flat_christoffels_vanish() {
        let m = Flat::new(3, 1);
        let g = christoffel(&m, &[0.3, -1.0, 2.0]).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sphere_christoffels_match_closed_form() {
        // g = dθ² + sin²θ dφ²: Γ^θ_φφ = -sinθ cosθ, Γ^φ_θφ = cotθ
        let m = RoundSphere;
        for &th in &[std::f64::consts::FRAC_PI_2, 0.4, 2.1] {
            let g = christoffel(&m, &[th, 0.3]).unwrap();
            let want_t = -th.sin() * th.cos();
            let want_p = th.cos() / th.sin();
            assert!((g.get(0, 1, 1) - want_t).abs() < 1e-9, "{}", g.get(0, 1, 1));
            assert!((g.get(1, 0, 1) - want_p).abs() < 1e-9);
            assert!((g.get(1, 1, 0) - want_p).abs() < 1e-9);
            assert!(g.get(0, 0, 0).abs() < 1e-9);
            assert!(g.get(1, 1, 1).abs() < 1e-9);
        }
        let eq = christoffel(&m, &[std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        assert!(eq.get(0, 1, 1).abs() < 1e-10);
        assert!(eq.get(1, 0, 1).abs() < 1e-10);
    }

    struct Degenerate;
    impl Geometry for Degenerate {
        fn dim(&self) -> usize {
            2
        }
        fn has_metric(&self) -> bool {
            true
        }
        fn metric(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
            Some(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]))
        }
    }

    #[test]
    fn degenerate_metric_is_an_error() {
        assert!(matches!(
            christoffel(&Degenerate, &[0.0, 0.0]),
            Err(Error::DegenerateMetric { .. })
        ));
    }

    struct HalfPlane;
    impl Geometry for HalfPlane {
        fn dim(&self) -> usize {
            2
        }
        fn has_metric(&self) -> bool {
            true
        }
        fn metric(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
            Some(DMatrix::identity(2, 2))
        }
        fn contains(&self, x: &[f64]) -> bool {
            x[1] > 0.0
        }
    }

    #[test]
    fn outside_domain_is_an_error() {
        assert!(matches!(
            christoffel(&HalfPlane, &[0.0, -1.0]),
            Err(Error::OutsideDomain(_))
        ));
        assert!(matches!(christoffel(&HalfPlane, &[0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn energy_and_charge_on_flat_lorentzian_plane() {
        let m = Flat::new(2, 1);
        let st = |v: [f64; 2]| GeodesicState::new(vec![0.0, 0.0], v.to_vec(), 0.0);
        assert_eq!(energy(&m, &st([1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(energy(&m, &st([1.0, 0.0])).unwrap(), -1.0);
        let dt = |_: &[f64]| vec![1.0, 0.0];
        assert_eq!(killing_charge(&m, dt, &st([2.0, 1.0])).unwrap(), -2.0);
        let zero = |_: &[f64]| vec![0.0, 0.0];
        assert_eq!(killing_charge(&m, zero, &st([2.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn energy_requires_a_metric() {
        let m = crate::models::BatesTorus::default();
        let st = GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        assert_eq!(energy(&m, &st), Err(Error::NoMetric));
    }

    #[test]
    fn symmetrization_keeps_the_quadratic_form() {
        let mut c = Christoffel::zeros(2);
        c.set(0, 0, 1, 1.0);
        c.set(1, 0, 0, -1.0);
        let s = c.symmetrized();
        assert_eq!(s.asymmetry(), 0.0);
        let v = [0.3, -0.8];
        assert_eq!(c.contract(&v, &v), s.contract(&v, &v));
    }
}
