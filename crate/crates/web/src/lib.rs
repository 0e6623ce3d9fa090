//! Browser bindings: Bates torus geodesics, the de Sitter closed-form test
//! and the penalized connector on an annulus.

use geoconn::connectivity::desitter_report;
use geoconn::convexity::{connect_in_domain, winding_path, DomainSpec, PenalizedProblem};
use geoconn::geometry::{integrate_geodesic, GeodesicState, IntegratorConfig};
use geoconn::models::{BatesTorus, ConformallyFlat};
use wasm_bindgen::prelude::*;

/// Geodesic of the Bates torus from `(x, y)` with frame coefficients
/// `(a, b)`, sampled as interleaved `[x0, y0, x1, y1, …]` over `[0, s_max]`.
#[wasm_bindgen]
pub fn bates_geodesic(x: f64, y: f64, a: f64, b: f64, s_max: f64) -> Vec<f64> {
    let m = BatesTorus::default();
    let v = BatesTorus::frame_velocity(&[x, y], a, b);
    let cfg = IntegratorConfig {
        h_max: 0.05,
        record_energy: false,
        ..Default::default()
    };
    match integrate_geodesic(&m, &GeodesicState::new(vec![x, y], v, 0.0), (0.0, s_max.max(0.0)), &cfg) {
        Ok(tr) => tr.samples.iter().flat_map(|s| [s.pos[0], s.pos[1]]).collect(),
        Err(_) => vec![x, y],
    }
}

/// Point of de Sitter space `S²₁` at time coordinate `t` and angle `theta`.
#[wasm_bindgen]
pub fn desitter_point(t: f64, theta: f64) -> Vec<f64> {
    let r = (1.0 + t * t).sqrt();
    vec![t, r * theta.cos(), r * theta.sin()]
}

/// Closed-form connectivity report for two points given as `(t, θ)`.
#[wasm_bindgen]
pub fn desitter_verdict(t1: f64, th1: f64, t2: f64, th2: f64) -> String {
    let p = desitter_point(t1, th1);
    let q = desitter_point(t2, th2);
    match desitter_report(&p, &q) {
        Ok(r) => serde_json::to_string(&r).unwrap_or_default(),
        Err(e) => format!("{{\"error\":\"{e}\"}}"),
    }
}

/// Penalized-action geodesic of the flat cylinder metric `|dx|²/|x|²` in the
/// annulus `1 < |x| < 2`, started with `winding` extra turns. Returns
/// `[f, x0, y0, x1, y1, …]`, or `[NaN]` when no geodesic was validated
/// (geodesic residual tolerance `2e-2`, looser than the library default).
#[wasm_bindgen]
pub fn annulus_connect(px: f64, py: f64, qx: f64, qy: f64, winding: i32, n_nodes: usize) -> Vec<f64> {
    let Ok(amb) = ConformallyFlat::new(2, "-0.5*log(x^2 + y^2)") else {
        return vec![f64::NAN];
    };
    let Ok(dom) = DomainSpec::from_expr(Box::new(amb), "(x^2 + y^2 - 1)*(4 - x^2 - y^2)") else {
        return vec![f64::NAN];
    };
    let (p, q) = (vec![px, py], vec![qx, qy]);
    if !dom.contains(&p) || !dom.contains(&q) {
        return vec![f64::NAN];
    }
    let n = n_nodes.clamp(10, 400);
    let prob = PenalizedProblem {
        n_nodes: n,
        initial: Some(winding_path(&p, &q, &[0.0, 0.0], winding, n)),
        // coarse paths for interactivity; the residual is O(h²)
        residual_tol: 2e-2,
        ..PenalizedProblem::new(&dom, p.clone(), q.clone())
    };
    match connect_in_domain(&prob) {
        Ok(r) if r.report.is_connected() => std::iter::once(r.f)
            .chain(r.path.iter().flat_map(|x| [x[0], x[1]]))
            .collect(),
        _ => vec![f64::NAN],
    }
}
