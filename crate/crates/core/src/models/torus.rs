use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::geometry::{Christoffel, Geometry};
use crate::Result;

use super::LatticeQuotient;

/// Affine torus `R²/4πZ²` whose connection makes the moving frame
/// `X₁ = cos x ∂_x + sin x ∂_y`, `X₂ = -sin x ∂_x + cos x ∂_y` parallel.
///
/// The frame connection has torsion; the model uses its symmetrization,
/// which has the same geodesics: `ẍ = -ẋẏ`, `ÿ = ẋ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatesTorus {
    pub period: f64,
}

impl Default for BatesTorus {
    fn default() -> Self {
        BatesTorus { period: 4.0 * PI }
    }
}

impl BatesTorus {
    pub fn frames(x: &[f64]) -> [[f64; 2]; 2] {
        let (s, c) = x[0].sin_cos();
        [[c, s], [-s, c]]
    }

    /// The (non-symmetric) frame-parallel connection.
    pub fn frame_connection() -> Christoffel {
        let mut g = Christoffel::zeros(2);
        g.set(0, 0, 1, 1.0);
        g.set(1, 0, 0, -1.0);
        g
    }

    /// Frame coefficients `(a, b)` of `v = a X₁ + b X₂` at `x`.
    pub fn frame_coefficients(x: &[f64], v: &[f64]) -> (f64, f64) {
        let (s, c) = x[0].sin_cos();
        (c * v[0] + s * v[1], -s * v[0] + c * v[1])
    }

    /// Velocity `a X₁ + b X₂` at `x`.
    pub fn frame_velocity(x: &[f64], a: f64, b: f64) -> Vec<f64> {
        let (s, c) = x[0].sin_cos();
        vec![a * c - b * s, a * s + b * c]
    }

    pub fn lattice(&self) -> LatticeQuotient {
        LatticeQuotient::uniform(2, self.period)
    }
}

impl Geometry for BatesTorus {
    fn dim(&self) -> usize {
        2
    }
    fn connection(&self, _x: &[f64]) -> Option<Christoffel> {
        Some(Self::frame_connection().symmetrized())
    }
    fn geodesic_acceleration(&self, _x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = -v[0] * v[1];
        out[1] = v[0] * v[0];
        Ok(())
    }
}

/// Lorentzian torus `R²/4πZ²` with
/// `g = sin 2x dx² - 2 cos 2x dx dy - sin 2x dy²`.
///
/// The frame `X₁ = cos x ∂_x + sin x ∂_y`, `X₂ = -sin x ∂_x + cos x ∂_y`
/// is null with `g(X₁, X₂) = -1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmithTorus {
    pub period: f64,
}

impl Default for SmithTorus {
    fn default() -> Self {
        SmithTorus { period: 4.0 * PI }
    }
}

impl SmithTorus {
    pub fn lattice(&self) -> LatticeQuotient {
        LatticeQuotient::uniform(2, self.period)
    }
}

impl Geometry for SmithTorus {
    fn dim(&self) -> usize {
        2
    }
    fn index(&self) -> usize {
        1
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let (s, c) = (2.0 * x[0]).sin_cos();
        Some(DMatrix::from_row_slice(2, 2, &[s, -c, -c, -s]))
    }
    fn metric_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let (s, c) = (2.0 * x[0]).sin_cos();
        Some(vec![
            DMatrix::from_row_slice(2, 2, &[2.0 * c, 2.0 * s, 2.0 * s, -2.0 * c]),
            DMatrix::zeros(2, 2),
        ])
    }
    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        // g is its own inverse and only depends on x.
        let (s, c) = (2.0 * x[0]).sin_cos();
        let (dx, dy) = (v[0], v[1]);
        // lowered Γ_l = ½(2 v^i v^j ∂_i g_lj - v^i v^j ∂_l g_ij), only ∂_x g ≠ 0
        let dg = [[2.0 * c, 2.0 * s], [2.0 * s, -2.0 * c]];
        let quad = dg[0][0] * dx * dx + 2.0 * dg[0][1] * dx * dy + dg[1][1] * dy * dy;
        let low0 = dx * (dg[0][0] * dx + dg[0][1] * dy) - 0.5 * quad;
        let low1 = dx * (dg[1][0] * dx + dg[1][1] * dy);
        out[0] = -(s * low0 - c * low1);
        out[1] = -(-c * low0 - s * low1);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{christoffel, energy, integrate_geodesic, levi_civita, GeodesicState, IntegratorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frames_are_parallel_along_random_curves() {
        let gamma = BatesTorus::frame_connection();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            // c(t) = c0 + t d + t² e, evaluated at t
            let c0 = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let d = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let e = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let t: f64 = rng.random_range(0.0..1.0);
            let pos = [c0[0] + t * d[0] + t * t * e[0], c0[1] + t * d[1] + t * t * e[1]];
            let vel = [d[0] + 2.0 * t * e[0], d[1] + 2.0 * t * e[1]];
            for which in 0..2 {
                let frame = |x: &[f64]| BatesTorus::frames(x)[which];
                let h = 1e-4;
                let at = |dt: f64| {
                    frame(&[
                        c0[0] + (t + dt) * d[0] + (t + dt) * (t + dt) * e[0],
                        c0[1] + (t + dt) * d[1] + (t + dt) * (t + dt) * e[1],
                    ])
                };
                let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
                let x = frame(&pos);
                let g = gamma.contract(&vel, &x);
                for k in 0..2 {
                    let dxdt = (m2[k] - p2[k] + 8.0 * (p1[k] - m1[k])) / (12.0 * h);
                    assert!((dxdt + g[k]).abs() < 1e-8, "{}", dxdt + g[k]);
                }
            }
        }
    }

    #[test]
    fn x_approaches_half_pi_along_x1() {
        let cfg = IntegratorConfig::default();
        let tr = integrate_geodesic(
            &BatesTorus::default(),
            &GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0),
            (0.0, 100.0),
            &cfg,
        )
        .unwrap();
        let mut prev = -1.0;
        for s in &tr.samples {
            // ẋ = cos x gives x = 2 atan(tanh(s/2))
            let exact = 2.0 * (s.s / 2.0).tanh().atan();
            assert!((s.pos[0] - exact).abs() < 1e-8);
            assert!(s.pos[0] >= prev - 1e-12 && s.pos[0] < PI / 2.0 + 1e-12);
            prev = s.pos[0];
        }
    }

    #[test]
    fn frame_coefficients_are_constant_along_geodesics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            let x0 = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let v0 = BatesTorus::frame_velocity(&x0, a, b);
            let tr = integrate_geodesic(
                &BatesTorus::default(),
                &GeodesicState::new(x0, v0, 0.0),
                (0.0, 20.0),
                &IntegratorConfig::default(),
            )
            .unwrap();
            for s in &tr.samples {
                let (aa, bb) = BatesTorus::frame_coefficients(&s.pos, &s.vel);
                assert!((aa - a).abs() < 1e-8 && (bb - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smith_metric_at_origin_and_frame_nullity() {
        let m = SmithTorus::default();
        let g = m.metric(&[0.0, 0.0]).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let g = m.metric(&x).unwrap();
            assert!((g.determinant() + 1.0).abs() < 1e-12);
            let [x1, x2] = BatesTorus::frames(&x);
            let q = |a: &[f64; 2], b: &[f64; 2]| crate::geometry::bilinear(&g, a, b);
            assert!(q(&x1, &x1).abs() < 1e-12);
            assert!(q(&x2, &x2).abs() < 1e-12);
            assert!((q(&x1, &x2) + 1.0).abs() < 1e-12);
        }
        let st = GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        assert_eq!(energy(&m, &st).unwrap(), 0.0);
    }

    struct MetricOnly(SmithTorus);

    impl Geometry for MetricOnly {
        fn dim(&self) -> usize {
            2
        }
        fn has_metric(&self) -> bool {
            true
        }
        fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
            self.0.metric(x)
        }
    }

    #[test]
    fn smith_closed_form_acceleration_matches_levi_civita() {
        let m = SmithTorus::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = [rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0)];
            let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let gamma = levi_civita(&m.metric(&x).unwrap(), &m.metric_derivatives(&x).unwrap()).unwrap();
            let fd = christoffel(&MetricOnly(m), &x).unwrap();
            let a = gamma.contract(&v, &v);
            let b = fd.contract(&v, &v);
            let mut out = [0.0; 2];
            m.geodesic_acceleration(&x, &v, &mut out).unwrap();
            for k in 0..2 {
                assert!((out[k] + a[k]).abs() < 1e-12);
                assert!((out[k] + b[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smith_metric_is_lattice_periodic() {
        let m = SmithTorus::default();
        for x in [0.1, 1.3, -2.2] {
            let g0 = m.metric(&[x, 0.4]).unwrap();
            let g1 = m.metric(&[x + 4.0 * PI, 0.4 + 4.0 * PI]).unwrap();
            assert!((g0 - g1).abs().max() < 1e-12);
        }
    }
}
