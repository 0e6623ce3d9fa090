use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct LmResult {
    pub x: Vec<f64>,
    pub residual_norm: f64,
}

/// Levenberg–Marquardt on `f: R^n → R^m` (`m ≥ n` not required) with
/// forward-difference Jacobians. `f` returns `None` where it is undefined.
pub(crate) fn levenberg_marquardt<F>(f: F, x0: &[f64], fd_step: f64, max_iter: usize, tol: f64) -> Option<LmResult>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::from_vec(f(&x)?);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        if cost.sqrt() <= tol {
            break;
        }
        let m = r.len();
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let rp = match f(&xp) {
                Some(v) => DVector::from_vec(v),
                None => {
                    xp[j] = x[j] - h;
                    let rm = DVector::from_vec(f(&xp)?);
                    jac.set_column(j, &((&r - rm) / h));
                    continue;
                }
            };
            jac.set_column(j, &((rp - &r) / h));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        let mut stalled = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (jtj[(i, i)].max(1e-12));
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rc) = f(&cand) {
                let rc = DVector::from_vec(rc);
                let c = rc.norm_squared();
                if c < cost {
                    stalled = c > (1.0 - 1e-3) * cost;
                    x = cand;
                    r = rc;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        // a nonzero local minimum: further progress is negligible
        if !improved || (stalled && cost.sqrt() > tol) {
            break;
        }
    }
    Some(LmResult {
        x,
        residual_norm: cost.sqrt(),
    })
}

/// Root of a continuous `f` on `[lo, hi]` with `f(lo)·f(hi) ≤ 0`, by bisection.
pub(crate) fn bisect<F: FnMut(f64) -> Option<f64>>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    x_tol: f64,
) -> Option<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= x_tol || mid == lo || mid == hi {
            return Some(mid);
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Some(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
