use nalgebra::DMatrix;

use crate::geometry::{Christoffel, Geometry};
use crate::{Error, Result};

/// `⟨a, b⟩_ν = -Σ_{i<ν} a_i b_i + Σ_{i≥ν} a_i b_i`.
pub fn minkowski_inner(nu: usize, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| if i < nu { -x * y } else { x * y })
        .sum()
}

/// `S^n_ν` in an intrinsic chart.
///
/// Coordinates are `(u_1..u_ν, θ_1..θ_{k-1}, φ)` with `k = n - ν`:
/// `P = (u, r·ω)` where `r = √(1 + |u|²)` and `ω ∈ S^k` in polar angles.
/// The polar angles live in `(0, π)`; `φ` is unwrapped. For `k = 0` there
/// are no angles and the chart covers the sheet with `ω = +1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pseudosphere {
    n: usize,
    nu: usize,
}

impl Pseudosphere {
    pub fn new(n: usize, nu: usize) -> Result<Self> {
        if n < 2 || nu > n {
            return Err(Error::InvalidParams(format!(
                "pseudosphere needs n >= 2 and 0 <= nu <= n (got n={n}, nu={nu})"
            )));
        }
        Ok(Pseudosphere { n, nu })
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    fn k(&self) -> usize {
        self.n - self.nu
    }

    /// Unit vector of `S^k` from the angular chart coordinates.
    fn omega(&self, ang: &[f64]) -> Vec<f64> {
        let k = self.k();
        if k == 0 {
            return vec![1.0];
        }
        let mut w = vec![0.0; k + 1];
        let mut prod = 1.0;
        for j in 0..k - 1 {
            w[j] = prod * ang[j].cos();
            prod *= ang[j].sin();
        }
        let phi = ang[k - 1];
        w[k - 1] = prod * phi.cos();
        w[k] = prod * phi.sin();
        w
    }

    /// Point of `R^{n+1}_ν` on the quadric `⟨P, P⟩_ν = 1`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::geometry::check_dim(self.n, x.len())?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        let u = &x[..self.nu];
        let r = (1.0 + u.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let mut p = u.to_vec();
        p.extend(self.omega(&x[self.nu..]).into_iter().map(|w| r * w));
        Ok(p)
    }

    /// Differential of `embed`, by fourth-order differences with step 1e-3.
    pub fn embed_velocity(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-3;
        let at = |d: f64| -> Result<Vec<f64>> {
            let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + d * b).collect();
            self.embed(&y)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        Ok((0..p1.len())
            .map(|i| (m2[i] - p2[i] + 8.0 * (p1[i] - m1[i])) / (12.0 * h))
            .collect())
    }

    /// Chart coordinates of an on-quadric point.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        crate::geometry::check_dim(self.n + 1, p.len())?;
        let res = minkowski_inner(self.nu, p, p) - 1.0;
        if res.abs() > 1e-9 {
            return Err(Error::OffQuadric(res));
        }
        let k = self.k();
        let mut x = p[..self.nu].to_vec();
        let sp = &p[self.nu..];
        if k == 0 {
            if sp[0] <= 0.0 {
                return Err(Error::ChartSingularity(
                    "point lies on the sheet not covered by the chart".into(),
                ));
            }
            return Ok(x);
        }
        let norm = sp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w: Vec<f64> = sp.iter().map(|v| v / norm).collect();
        for j in 0..k - 1 {
            let tail = w[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if tail < 1e-12 || (w[j] / tail).abs() >= 1.0 - 1e-15 {
                return Err(Error::ChartSingularity(format!("polar angle {} is at 0 or pi", j + 1)));
            }
            x.push((w[j] / tail).acos());
        }
        if w[k - 1].hypot(w[k]) < 1e-12 {
            return Err(Error::ChartSingularity("azimuth undefined".into()));
        }
        x.push(w[k].atan2(w[k - 1]));
        Ok(x)
    }
}

impl Geometry for Pseudosphere {
    fn dim(&self) -> usize {
        self.n
    }
    fn index(&self) -> usize {
        self.nu
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let (n, nu) = (self.n, self.nu);
        let u = &x[..nu];
        let r2 = 1.0 + u.iter().map(|v| v * v).sum::<f64>();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..nu {
            for j in 0..nu {
                g[(i, j)] = u[i] * u[j] / r2 - if i == j { 1.0 } else { 0.0 };
            }
        }
        let mut h = r2;
        for j in nu..n {
            g[(j, j)] = h;
            if j + 1 < n {
                let s = x[j].sin();
                h *= s * s;
            }
        }
        Some(g)
    }
    fn contains(&self, x: &[f64]) -> bool {
        if !x.iter().all(|v| v.is_finite()) {
            return false;
        }
        let k = self.k();
        if k < 2 {
            return true;
        }
        x[self.nu..self.n - 1]
            .iter()
            .all(|t| *t > 0.0 && *t < std::f64::consts::PI)
    }
}

/// `S^n_ν` as the quadric `⟨P, P⟩_ν = 1` in ambient coordinates of `R^{n+1}_ν`.
///
/// The connection `Γ^k_{ij} = η_{ij} P^k` restricts to the Levi-Civita
/// connection of the quadric; the ambient metric `η` measures energies.
/// Geodesics started on the quadric with tangent velocity stay on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddedPseudosphere {
    n: usize,
    nu: usize,
}

impl EmbeddedPseudosphere {
    pub fn new(n: usize, nu: usize) -> Result<Self> {
        Pseudosphere::new(n, nu)?;
        Ok(EmbeddedPseudosphere { n, nu })
    }

    /// de Sitter space `S^n_1`.
    pub fn de_sitter(n: usize) -> Result<Self> {
        Self::new(n, 1)
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        minkowski_inner(self.nu, a, b)
    }

    /// `⟨P, P⟩_ν - 1`.
    pub fn quadric_residual(&self, p: &[f64]) -> f64 {
        self.inner(p, p) - 1.0
    }

    /// Removes the normal component of `v` at the on-quadric point `p`.
    pub fn tangent_part(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        let c = self.inner(p, v);
        v.iter().zip(p).map(|(a, b)| a - c * b).collect()
    }

    /// `η`-orthonormal basis of `T_pS`, spacelike vectors last.
    pub fn tangent_frame(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let m = self.n + 1;
        let mut candidates: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                e
            })
            .collect();
        for i in 0..m {
            for j in i + 1..m {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                e[j] = 0.5;
                candidates.push(e);
            }
        }
        let mut frame: Vec<(f64, Vec<f64>)> = Vec::new();
        for c in candidates {
            if frame.len() == self.n {
                break;
            }
            let mut w = self.tangent_part(p, &c);
            for (sign, f) in &frame {
                let a = self.inner(&w, f) * sign;
                for (wi, fi) in w.iter_mut().zip(f) {
                    *wi -= a * fi;
                }
            }
            let nn = self.inner(&w, &w);
            let scale = w.iter().map(|v| v * v).sum::<f64>();
            if nn.abs() < 1e-6 * scale.max(1e-300) || scale < 1e-20 {
                continue;
            }
            let s = nn.abs().sqrt();
            frame.push((nn.signum(), w.into_iter().map(|v| v / s).collect()));
        }
        frame.sort_by(|a, b| a.0.total_cmp(&b.0));
        frame.into_iter().map(|(_, f)| f).collect()
    }

    /// Coefficients in [`tangent_frame`](Self::tangent_frame) of the tangent
    /// part of the chord `q - p`, scaled to unit length unless it is null.
    /// The geodesic in the plane of `p` and `q` leaves `p` in this direction.
    pub fn chord_direction(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let chord: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
        let w = self.tangent_part(p, &chord);
        let nn = self.inner(&w, &w).abs();
        let scale = if nn > 1e-12 { nn.sqrt() } else { 1.0 };
        self.tangent_frame(p)
            .iter()
            .map(|e| self.inner(&w, e) / self.inner(e, e) / scale)
            .collect()
    }
}

impl Geometry for EmbeddedPseudosphere {
    fn dim(&self) -> usize {
        self.n + 1
    }
    fn index(&self) -> usize {
        self.nu
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        let m = self.n + 1;
        Some(DMatrix::from_fn(m, m, |i, j| {
            if i != j {
                0.0
            } else if i < self.nu {
                -1.0
            } else {
                1.0
            }
        }))
    }
    fn connection(&self, x: &[f64]) -> Option<Christoffel> {
        let m = self.n + 1;
        let mut c = Christoffel::zeros(m);
        for i in 0..m {
            let eta = if i < self.nu { -1.0 } else { 1.0 };
            for (k, xk) in x.iter().enumerate() {
                c.set(k, i, i, eta * xk);
            }
        }
        Some(c)
    }
    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let vv = self.inner(v, v);
        for (o, xk) in out.iter_mut().zip(x) {
            *o = -vv * xk;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{integrate_geodesic, GeodesicState, IntegratorConfig};
    use std::f64::consts::PI;

    #[test]
    fn embed_lands_on_the_quadric_and_projects_back() {
        for (n, nu) in [(2, 0), (2, 1), (3, 1), (3, 2), (2, 2), (4, 1)] {
            let m = Pseudosphere::new(n, nu).unwrap();
            let x: Vec<f64> = (0..n).map(|i| 0.3 + 0.4 * i as f64).collect();
            let p = m.embed(&x).unwrap();
            assert!((minkowski_inner(nu, &p, &p) - 1.0).abs() < 1e-12);
            let back = m.project(&p).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12, "{n} {nu}: {back:?} vs {x:?}");
            }
        }
    }

    #[test]
    fn chart_singularity_is_reported() {
        let m = Pseudosphere::new(2, 0).unwrap();
        assert!(matches!(m.project(&[1.0, 0.0, 0.0]), Err(Error::ChartSingularity(_))));
        assert!(matches!(m.project(&[1.0, 1.0, 0.0]), Err(Error::OffQuadric(_))));
        assert!(Pseudosphere::new(1, 0).is_err());
        assert!(Pseudosphere::new(2, 3).is_err());
    }

    #[test]
    fn chart_metric_is_the_pullback() {
        let m = Pseudosphere::new(3, 1).unwrap();
        let x = [0.4, 1.1, -0.7];
        let g = m.metric(&x).unwrap();
        let e: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 3];
                v[i] = 1.0;
                m.embed_velocity(&x, &v).unwrap()
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let pull = minkowski_inner(1, &e[i], &e[j]);
                assert!((pull - g[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn de_sitter_geodesic_through_pole_stays_on_quadric() {
        let ds = EmbeddedPseudosphere::de_sitter(2).unwrap();
        let p = [0.0, 1.0, 0.0];
        let v = [0.6, 0.0, 0.5];
        let tr = integrate_geodesic(
            &ds,
            &GeodesicState::new(p.to_vec(), v.to_vec(), 0.0),
            (0.0, 10.0),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let worst = tr
            .samples
            .iter()
            .map(|s| ds.quadric_residual(&s.pos).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn round_sphere_closes_after_two_pi() {
        let s2 = EmbeddedPseudosphere::new(2, 0).unwrap();
        let p = vec![0.0, 0.0, 1.0];
        let v = vec![0.6, 0.8, 0.0];
        let tr = integrate_geodesic(
            &s2,
            &GeodesicState::new(p.clone(), v.clone(), 0.0),
            (0.0, 2.0 * PI),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let end = tr.last();
        for i in 0..3 {
            assert!((end.pos[i] - p[i]).abs() < 1e-6);
            assert!((end.vel[i] - v[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn spacelike_geodesic_matches_trigonometric_form() {
        let ds = EmbeddedPseudosphere::de_sitter(2).unwrap();
        let p = [0.0, 1.0, 0.0];
        let v = [0.0, 0.0, 1.0];
        let tr = integrate_geodesic(
            &ds,
            &GeodesicState::new(p.to_vec(), v.to_vec(), 0.0),
            (0.0, PI),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let end = tr.last();
        for i in 0..3 {
            let exact = PI.cos() * p[i] + PI.sin() * v[i];
            assert!((end.pos[i] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn chord_direction_spans_the_connecting_plane() {
        let ds = EmbeddedPseudosphere::de_sitter(2).unwrap();
        let p = [0.0, 1.0, 0.0];
        let q = [0.0, 0.6f64.cos(), 0.6f64.sin()];
        let a = ds.chord_direction(&p, &q);
        let f = ds.tangent_frame(&p);
        let v: Vec<f64> = (0..3).map(|i| a.iter().zip(&f).map(|(c, e)| c * e[i]).sum()).collect();
        for i in 0..3 {
            assert!((v[i] - [0.0, 0.0, 1.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_frame_is_orthonormal() {
        let ds = EmbeddedPseudosphere::de_sitter(3).unwrap();
        let u: f64 = 0.7;
        let r = (1.0 + u * u).sqrt();
        let p = [u, r * 0.6, 0.0, r * 0.8];
        let f = ds.tangent_frame(&p);
        assert_eq!(f.len(), 3);
        for i in 0..3 {
            assert!(ds.inner(&f[i], &p).abs() < 1e-12);
            for j in 0..3 {
                let want = if i != j {
                    0.0
                } else if i == 0 {
                    -1.0
                } else {
                    1.0
                };
                assert!((ds.inner(&f[i], &f[j]) - want).abs() < 1e-12);
            }
        }
    }
}
