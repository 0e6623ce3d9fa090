use nalgebra::DMatrix;

use crate::expr::DiffExpr;
use crate::geometry::{check_dim, Geometry};
use crate::{Error, Result};

/// Coordinate names of expression-defined chart functions, by position.
pub const CHART_VARS: [&str; 4] = ["x", "y", "z", "w"];

/// `e^{2σ(x)} |dx|²` on the part of `R^n` where `σ` is finite.
#[derive(Debug, Clone)]
pub struct ConformallyFlat {
    n: usize,
    sigma: DiffExpr,
}

impl ConformallyFlat {
    /// `sigma` is an expression in `x, y, z, w` (first `n` of them).
    pub fn new(n: usize, sigma: &str) -> Result<Self> {
        if !(1..=CHART_VARS.len()).contains(&n) {
            return Err(Error::InvalidParams(format!(
                "conformal factor needs 1 <= n <= {} (got {n})",
                CHART_VARS.len()
            )));
        }
        Ok(ConformallyFlat {
            n,
            sigma: DiffExpr::parse(sigma, &CHART_VARS[..n])?,
        })
    }

    pub fn sigma(&self, x: &[f64]) -> f64 {
        self.sigma.eval(x)
    }
}

impl Geometry for ConformallyFlat {
    fn dim(&self) -> usize {
        self.n
    }
    fn has_metric(&self) -> bool {
        true
    }
    fn metric(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.n, self.n) * (2.0 * self.sigma.eval(x)).exp())
    }
    fn metric_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let e = (2.0 * self.sigma.eval(x)).exp();
        Some(
            self.sigma
                .gradient(x)
                .iter()
                .map(|s| DMatrix::identity(self.n, self.n) * (2.0 * s * e))
                .collect(),
        )
    }
    fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && self.sigma.eval(x).is_finite()
    }
    fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.n, x.len())?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        let ds = self.sigma.gradient(x);
        let sv: f64 = ds.iter().zip(v).map(|(a, b)| a * b).sum();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        for k in 0..self.n {
            out[k] = vv * ds[k] - 2.0 * sv * v[k];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::christoffel;

    #[test]
    fn acceleration_matches_levi_civita() {
        let m = ConformallyFlat::new(2, "-0.5*log(x^2 + y^2)").unwrap();
        let x = [1.2, -0.4];
        let v = [0.3, 0.9];
        let mut a = [0.0; 2];
        m.geodesic_acceleration(&x, &v, &mut a).unwrap();
        let b = christoffel(&m, &x).unwrap().contract(&v, &v);
        assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        assert!(!m.contains(&[0.0, 0.0]));
    }
}
