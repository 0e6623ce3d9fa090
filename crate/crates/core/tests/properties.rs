use std::f64::consts::PI;

use geoconn::connectivity::desitter_connectable;
use geoconn::convexity::{classify_boundary, hessian_form, BoundaryClass, DomainSpec};
use geoconn::expr::DiffExpr;
use geoconn::geometry::{integrate_geodesic, GeodesicState, IntegratorConfig};
use geoconn::models::{quotient_displacement, Flat, LatticeQuotient, RoundSphere};
use geoconn::multiwarped::{fiber_lengths, Fiber, MultiwarpedModel, Warp};
use geoconn::stationary::{action_f, split_f1_f2, DiscreteCurve, StationaryModel, PRESETS};
use proptest::prelude::*;

fn on_quadric(t: f64, angle: f64) -> Vec<f64> {
    let r = (1.0 + t * t).sqrt();
    vec![t, r * angle.cos(), r * angle.sin()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbolic_gradient_matches_differences(x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let e = DiffExpr::parse("sin(x)*y^2 + exp(0.5*x*y) - x/(2 + y^2)", &["x", "y"]).unwrap();
        let g = e.gradient(&[x, y]);
        let h = 1e-6;
        let fd = [
            (e.eval(&[x + h, y]) - e.eval(&[x - h, y])) / (2.0 * h),
            (e.eval(&[x, y + h]) - e.eval(&[x, y - h])) / (2.0 * h),
        ];
        for k in 0..2 {
            prop_assert!((g[k] - fd[k]).abs() < 1e-6 * g[k].abs().max(1.0));
        }
    }

    #[test]
    fn stationary_split_is_exact(
        preset in 0usize..PRESETS.len(),
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        wiggle in -0.3f64..0.3,
    ) {
        let m = StationaryModel::preset(PRESETS[preset]).unwrap();
        let c = DiscreteCurve::sample(
            |s| (0..3).map(|i| a[i] + (b[i] - a[i]) * s + wiggle * (PI * s * (i + 1) as f64).sin()).collect(),
            32,
        )
        .unwrap();
        let f = action_f(&m, &c).unwrap();
        let (f1, f2) = split_f1_f2(&m, &c).unwrap();
        prop_assert!((f - f1 - f2).abs() <= 1e-12 * f.abs().max(f1.abs() + f2.abs()));
        prop_assert!(f2 <= 0.0);
    }

    #[test]
    fn fiber_lengths_are_scale_invariant(
        c0 in 0.05f64..1.0,
        c1 in 0.05f64..1.0,
        k in 0.0f64..2.0,
        lambda in 0.1f64..10.0,
    ) {
        let m = MultiwarpedModel::new(
            (f64::NEG_INFINITY, f64::INFINITY),
            vec![Warp::expr("2 + cos(t)").unwrap(), Warp::expr("exp(0.2*t)").unwrap()],
            vec![Fiber::Euclidean { dim: 1 }, Fiber::Sphere],
        )
        .unwrap();
        let a = fiber_lengths(&m, &[c0, c1], k, -0.5, 1.5).unwrap();
        let b = fiber_lengths(&m, &[lambda * c0, lambda * c1], lambda * lambda * k, -0.5, 1.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs());
        }
    }

    #[test]
    fn disk_boundary_is_strictly_convex(r in 0.2f64..3.0, angle in 0.0f64..(2.0 * PI)) {
        let phi = format!("{} - x^2 - y^2", r * r);
        let dom = DomainSpec::from_expr(Box::new(Flat::euclidean(2)), &phi).unwrap();
        let b = classify_boundary(&dom, &[vec![angle.cos(), angle.sin()]], 6).unwrap();
        prop_assert_eq!(b[0].class, BoundaryClass::Sic);
        let p = &b[0].point;
        prop_assert!((p[0].hypot(p[1]) - r).abs() < 1e-10);
        // tangent direction: Hess φ = -2 I
        let h = hessian_form(&dom, p, &[-p[1], p[0]]).unwrap();
        prop_assert!((h + 2.0 * r * r).abs() < 1e-9 * r * r);
    }

    #[test]
    fn de_sitter_criterion_is_symmetric(
        t1 in -2.0f64..2.0, a1 in 0.0f64..(2.0 * PI),
        t2 in -2.0f64..2.0, a2 in 0.0f64..(2.0 * PI),
    ) {
        let (p, q) = (on_quadric(t1, a1), on_quadric(t2, a2));
        let pq = desitter_connectable(&p, &q).unwrap();
        let qp = desitter_connectable(&q, &p).unwrap();
        prop_assert_eq!(pq.connectable, qp.connectable);
        prop_assert_eq!(pq.connectable, pq.inner > -1.0);
    }

    #[test]
    fn lifts_are_sorted_and_complete(
        a in prop::array::uniform2(-5.0f64..5.0),
        b in prop::array::uniform2(-5.0f64..5.0),
        w in 0u32..3,
    ) {
        let lat = LatticeQuotient::uniform(2, 4.0 * PI);
        let lifts = quotient_displacement(&lat, &a, &b, w);
        prop_assert_eq!(lifts.len(), ((2 * w + 1) * (2 * w + 1)) as usize);
        let d = |x: &Vec<f64>| (x[0] - a[0]).hypot(x[1] - a[1]);
        prop_assert!(lifts.windows(2).all(|p| d(&p[0]) <= d(&p[1])));
    }

    #[test]
    fn sphere_geodesics_reverse(
        th in 0.3f64..2.8, ph in 0.0f64..6.0,
        v in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let cfg = IntegratorConfig::default();
        let st = GeodesicState::new(vec![th, ph], v.to_vec(), 0.0);
        let fwd = integrate_geodesic(&RoundSphere, &st, (0.0, 1.0), &cfg).unwrap();
        let end = fwd.last();
        let back = GeodesicState::new(end.pos.clone(), end.vel.iter().map(|x| -x).collect(), 0.0);
        let rev = integrate_geodesic(&RoundSphere, &back, (0.0, 1.0), &cfg).unwrap();
        for (x, y) in rev.last().pos.iter().zip(&st.pos) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
