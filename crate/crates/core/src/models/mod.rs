//! Built-in geometries: flat spaces, pseudospheres, the affine and Lorentzian
//! tori, and lattice quotients of flat charts.

mod catalog;
mod conformal;
mod pseudosphere;
mod torus;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::{Christoffel, Geometry};

pub use catalog::{make_model, stationary_preset, ModelId, ModelName};
pub use conformal::{ConformallyFlat, CHART_VARS};
pub use pseudosphere::{minkowski_inner, EmbeddedPseudosphere, Pseudosphere};
pub use torus::{BatesTorus, SmithTorus};

/// `R^n_ν`: the flat metric `diag(-1 ×ν, +1 ×(n-ν))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flat {
    n: usize,
    nu: usize,
}

impl Flat {
    pub fn new(n: usize, nu: usize) -> Self {
        assert!(nu <= n && n > 0, "flat model needs 0 <= nu <= n, n > 0");
        Flat { n, nu }
    }

    pub fn euclidean(n: usize) -> Self {
        Flat::new(n, 0)
    }

    pub fn signs(&self) -> Vec<f64> {
        (0..self.n).map(|i| if i < self.nu { -1.0 } else { 1.0 }).collect()
    }
}

impl Geometry for Flat {
    fn dim(&self) -> usize {
        self.n
    }
    fn index(&self) -> usize {
        self.nu
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.signs())))
    }
    fn metric_derivatives(&self, _x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(self.n, self.n); self.n])
    }
    fn connection(&self, _x: &[f64]) -> Option<Christoffel> {
        Some(Christoffel::zeros(self.n))
    }
    fn geodesic_acceleration(&self, _x: &[f64], _v: &[f64], out: &mut [f64]) -> crate::Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// Unit 2-sphere in polar coordinates `(θ, φ)`, `g = dθ² + sin²θ dφ²`.
///
/// The chart excludes the poles; `φ` is not wrapped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundSphere;

impl Geometry for RoundSphere {
    fn dim(&self) -> usize {
        2
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let s = x[0].sin();
        Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s * s]))
    }
    fn contains(&self, x: &[f64]) -> bool {
        x[0] > 0.0 && x[0] < std::f64::consts::PI && x[1].is_finite()
    }
}

/// Per-coordinate periods used to pose connectivity on a torus via its cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeQuotient {
    pub periods: Vec<Option<f64>>,
}

impl LatticeQuotient {
    pub fn new(periods: Vec<Option<f64>>) -> Self {
        assert!(
            periods.iter().flatten().all(|p| *p > 0.0),
            "lattice periods must be positive"
        );
        LatticeQuotient { periods }
    }

    /// Same period on every coordinate.
    pub fn uniform(n: usize, period: f64) -> Self {
        LatticeQuotient::new(vec![Some(period); n])
    }

    /// Wraps `x` into the fundamental domain `[0, period)` per periodic coordinate.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.periods)
            .map(|(v, p)| match p {
                Some(p) => v.rem_euclid(*p),
                None => *v,
            })
            .collect()
    }
}

/// All lifts `b + k·periods` with `|k_i| ≤ max_winding` on periodic
/// coordinates, sorted by Euclidean chart distance from `a` (ties broken by
/// the winding vector).
pub fn quotient_displacement(q: &LatticeQuotient, a: &[f64], b: &[f64], max_winding: u32) -> Vec<Vec<f64>> {
    let w = max_winding as i64;
    let periodic: Vec<usize> = q.periods.iter().enumerate().filter_map(|(i, p)| p.map(|_| i)).collect();
    let mut lifts: Vec<(f64, Vec<i64>, Vec<f64>)> = Vec::new();
    let mut k = vec![-w; periodic.len()];
    loop {
        let mut lift = b.to_vec();
        for (slot, &i) in periodic.iter().enumerate() {
            lift[i] += k[slot] as f64 * q.periods[i].unwrap();
        }
        let d2: f64 = lift.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
        lifts.push((d2, k.clone(), lift));
        // odometer increment
        let mut slot = 0;
        loop {
            if slot == k.len() {
                lifts.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
                return lifts.into_iter().map(|(_, _, l)| l).collect();
            }
            k[slot] += 1;
            if k[slot] > w {
                k[slot] = -w;
                slot += 1;
            } else {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_lorentzian_plane_metric() {
        let g = Flat::new(2, 1).metric(&[0.0, 0.0]).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn nine_lifts_of_the_origin() {
        let q = LatticeQuotient::uniform(2, 4.0 * PI);
        let lifts = quotient_displacement(&q, &[0.0, 0.0], &[0.0, 0.0], 1);
        assert_eq!(lifts.len(), 9);
        assert_eq!(lifts[0], vec![0.0, 0.0]);
        assert!(lifts.contains(&vec![4.0 * PI, 0.0]));
        assert!(lifts.contains(&vec![-4.0 * PI, 0.0]));
        assert!(lifts.contains(&vec![-4.0 * PI, 4.0 * PI]));
    }

    #[test]
    fn zero_winding_is_the_point_itself() {
        let q = LatticeQuotient::uniform(2, 4.0 * PI);
        let lifts = quotient_displacement(&q, &[0.0, 0.0], &[2.0 * PI, 0.0], 0);
        assert_eq!(lifts, vec![vec![2.0 * PI, 0.0]]);
    }

    #[test]
    fn non_periodic_coordinates_are_untouched() {
        let q = LatticeQuotient::new(vec![None, Some(2.0 * PI)]);
        let lifts = quotient_displacement(&q, &[0.0, 0.0], &[1.0, 0.5], 2);
        assert_eq!(lifts.len(), 5);
        assert!(lifts.iter().all(|l| l[0] == 1.0));
        assert_eq!(q.wrap(&[-1.0, -0.5]), vec![-1.0, 2.0 * PI - 0.5]);
    }
}
