use serde::{Deserialize, Serialize};

use super::{check_dim, Geometry};
use crate::error::{Error, Result};

/// Position and coordinate velocity at affine parameter `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub s: f64,
}

impl GeodesicState {
    pub fn new(pos: Vec<f64>, vel: Vec<f64>, s: f64) -> Self {
        GeodesicState { pos, vel, s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    SpanComplete,
    LeftDomain,
    StepUnderflow,
    MaxSteps,
    /// The per-step observer asked to stop.
    Stopped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Fixed-step classical RK4 instead of the adaptive pair.
    pub fixed_step: Option<f64>,
    /// Record `g(γ',γ')` per sample for metric models.
    pub record_energy: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            abs_tol: 1e-11,
            rel_tol: 1e-11,
            h_min: 1e-12,
            h_max: 1.0,
            max_steps: 1_000_000,
            fixed_step: None,
            record_energy: true,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tol(tol: f64) -> Self {
        IntegratorConfig {
            abs_tol: tol,
            rel_tol: tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return Err(Error::Config("require 0 < h_min <= h_max".into()));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0) {
                return Err(Error::Config("fixed step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Resolution, in affine parameter, of the domain-exit location.
const EXIT_RESOLUTION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<GeodesicState>,
    pub energy_series: Option<Vec<f64>>,
    pub step_stats: StepStats,
    pub termination: Termination,
}

/// Largest deviation of a conserved series from its initial value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub initial: f64,
    pub max_abs: f64,
}

impl Drift {
    pub fn of(series: &[f64]) -> Option<Drift> {
        let first = *series.first()?;
        let max_abs = series.iter().map(|e| (e - first).abs()).fold(0.0, f64::max);
        Some(Drift {
            initial: first,
            max_abs,
        })
    }

    /// Relative drift when `|initial| ≥ 1e-12`, else the absolute drift.
    pub fn relative_or_abs(&self) -> f64 {
        if self.initial.abs() < 1e-12 {
            self.max_abs
        } else {
            self.max_abs / self.initial.abs()
        }
    }

    /// True if within `rel` (relative) or, for vanishing initial values, `abs`.
    pub fn within(&self, rel: f64, abs: f64) -> bool {
        if self.initial.abs() < 1e-12 {
            self.max_abs <= abs
        } else {
            self.max_abs <= rel * self.initial.abs()
        }
    }
}

impl Trajectory {
    pub fn last(&self) -> &GeodesicState {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn span(&self) -> f64 {
        (self.last().s - self.samples[0].s).abs()
    }

    pub fn energy_drift(&self) -> Option<Drift> {
        self.energy_series.as_deref().and_then(Drift::of)
    }

    /// CSV with columns `s, x_0..x_{n-1}, v_0..v_{n-1}, energy`.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.pos.len());
        let mut out = String::from("s");
        for i in 0..n {
            out.push_str(&format!(",x_{i}"));
        }
        for i in 0..n {
            out.push_str(&format!(",v_{i}"));
        }
        out.push_str(",energy\n");
        for (k, st) in self.samples.iter().enumerate() {
            out.push_str(&format!("{:.17e}", st.s));
            for x in st.pos.iter().chain(st.vel.iter()) {
                out.push_str(&format!(",{x:.17e}"));
            }
            match &self.energy_series {
                Some(e) => out.push_str(&format!(",{:.17e}\n", e[k])),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

// Dormand–Prince 5(4) tableau; the geodesic system is autonomous so the
// node row is not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rhs<'a, G: ?Sized> {
    model: &'a G,
    n: usize,
}

enum EvalFail {
    Domain,
    Hard(Error),
}

impl<G: Geometry + ?Sized> Rhs<'_, G> {
    fn eval(&self, y: &[f64], dy: &mut [f64]) -> std::result::Result<(), EvalFail> {
        let n = self.n;
        let (x, v) = y.split_at(n);
        if !self.model.contains(x) || v.iter().any(|c| !c.is_finite()) {
            return Err(EvalFail::Domain);
        }
        dy[..n].copy_from_slice(v);
        match self.model.geodesic_acceleration(x, v, &mut dy[n..]) {
            Ok(()) => {
                if dy[n..].iter().all(|a| a.is_finite()) {
                    Ok(())
                } else {
                    Err(EvalFail::Domain)
                }
            }
            Err(Error::OutsideDomain(_)) => Err(EvalFail::Domain),
            Err(e) => Err(EvalFail::Hard(e)),
        }
    }
}

/// Integrates the geodesic equation from `state0` toward `s_end`, calling
/// `on_step(previous, current)` after every accepted step. Returning `false`
/// from the observer stops the integration with [`Termination::Stopped`].
pub fn integrate_with<G, F>(
    model: &G,
    state0: &GeodesicState,
    s_end: f64,
    cfg: &IntegratorConfig,
    mut on_step: F,
) -> Result<(GeodesicState, StepStats, Termination)>
where
    G: Geometry + ?Sized,
    F: FnMut(&GeodesicState, &GeodesicState) -> bool,
{
    cfg.validate()?;
    let n = model.dim();
    check_dim(n, state0.pos.len())?;
    check_dim(n, state0.vel.len())?;
    if !model.contains(&state0.pos) {
        return Err(Error::OutsideDomain(state0.pos.clone()));
    }
    let rhs = Rhs { model, n };
    let m = 2 * n;
    let mut y: Vec<f64> = state0.pos.iter().chain(state0.vel.iter()).copied().collect();
    let mut s = state0.s;
    let dir = if s_end >= s { 1.0 } else { -1.0 };
    let mut stats = StepStats::default();
    let mut current = state0.clone();

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    let mut tmp = vec![0.0; m];
    let mut ynew = vec![0.0; m];

    match rhs.eval(&y, &mut k[0]) {
        Ok(()) => {}
        Err(EvalFail::Domain) => return Err(Error::OutsideDomain(state0.pos.clone())),
        Err(EvalFail::Hard(e)) => return Err(e),
    }
    if (s_end - s).abs() == 0.0 {
        return Ok((current, stats, Termination::SpanComplete));
    }

    if let Some(hfix) = cfg.fixed_step {
        return integrate_rk4(&rhs, current, s_end, hfix, cfg.max_steps, on_step);
    }

    let mut h = dir * initial_step(&y, &k[0], cfg).min((s_end - s).abs());
    let mut err_old: f64 = 1e-4;
    let mut rejected_last = false;

    loop {
        if stats.accepted >= cfg.max_steps {
            return Ok((current, stats, Termination::MaxSteps));
        }
        let remaining = s_end - s;
        if remaining * dir <= 0.0 {
            return Ok((current, stats, Termination::SpanComplete));
        }
        let mut last = false;
        if (h.abs()) >= remaining.abs() {
            h = remaining;
            last = true;
        }

        // stages 2..7
        let mut failed: Option<EvalFail> = None;
        for st in 1..7 {
            for i in 0..m {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(st) {
                    acc += A[st][j] * kj[i];
                }
                tmp[i] = y[i] + h * acc;
            }
            let (_, tail) = k.split_at_mut(st);
            if let Err(e) = rhs.eval(&tmp, &mut tail[0]) {
                failed = Some(e);
                break;
            }
            if st == 6 {
                ynew.copy_from_slice(&tmp);
            }
        }

        if let Some(fail) = failed {
            match fail {
                EvalFail::Hard(e) => return Err(e),
                EvalFail::Domain => {
                    stats.rejected += 1;
                    if h.abs() <= EXIT_RESOLUTION {
                        return Ok((current, stats, Termination::LeftDomain));
                    }
                    h *= 0.5;
                    rejected_last = true;
                    continue;
                }
            }
        }

        // error estimate
        let mut err: f64 = 0.0;
        for i in 0..m {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(ynew[i].abs());
            err = err.max((h * e).abs() / sc);
        }
        if !err.is_finite() {
            stats.rejected += 1;
            if h.abs() <= EXIT_RESOLUTION {
                return Ok((current, stats, Termination::LeftDomain));
            }
            h *= 0.5;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            let s_new = if last { s_end } else { s + h };
            let next = GeodesicState {
                pos: ynew[..n].to_vec(),
                vel: ynew[n..].to_vec(),
                s: s_new,
            };
            stats.accepted += 1;
            let keep_going = on_step(&current, &next);
            y.copy_from_slice(&ynew);
            s = s_new;
            current = next;
            // FSAL
            let (first, rest) = k.split_at_mut(6);
            first[0].copy_from_slice(&rest[0]);
            if !keep_going {
                return Ok((current, stats, Termination::Stopped));
            }
            if last {
                return Ok((current, stats, Termination::SpanComplete));
            }
            // PI controller
            let beta = 0.04;
            let alpha = 0.2 - 0.75 * beta;
            let mut fac = 0.9 * err.max(1e-10).powf(-alpha) * err_old.powf(beta);
            let fac_max = if rejected_last { 1.0 } else { 10.0 };
            fac = fac.clamp(0.2, fac_max);
            err_old = err.max(1e-4);
            h = dir * (h.abs() * fac).min(cfg.h_max);
            rejected_last = false;
        } else {
            stats.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            rejected_last = true;
        }
        if h.abs() < cfg.h_min {
            return Ok((current, stats, Termination::StepUnderflow));
        }
    }
}

fn initial_step(y: &[f64], f0: &[f64], cfg: &IntegratorConfig) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for (yi, fi) in y.iter().zip(f0) {
        let sc = cfg.abs_tol + cfg.rel_tol * yi.abs();
        d0 = d0.max(yi.abs() / sc);
        d1 = d1.max(fi.abs() / sc);
    }
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    // fifth-order method: scale toward the tolerance
    let h = h0.min(0.1 * (cfg.abs_tol.max(cfg.rel_tol)).powf(0.2));
    h.clamp(cfg.h_min, cfg.h_max)
}

fn integrate_rk4<G, F>(
    rhs: &Rhs<'_, G>,
    mut current: GeodesicState,
    s_end: f64,
    hfix: f64,
    max_steps: usize,
    mut on_step: F,
) -> Result<(GeodesicState, StepStats, Termination)>
where
    G: Geometry + ?Sized,
    F: FnMut(&GeodesicState, &GeodesicState) -> bool,
{
    let n = rhs.n;
    let m = 2 * n;
    let dir = if s_end >= current.s { 1.0 } else { -1.0 };
    let mut stats = StepStats::default();
    let mut y: Vec<f64> = current.pos.iter().chain(current.vel.iter()).copied().collect();
    let mut k = vec![vec![0.0; m]; 4];
    let mut tmp = vec![0.0; m];
    let fail = |e: EvalFail, cur: GeodesicState, stats| match e {
        EvalFail::Domain => Ok((cur, stats, Termination::LeftDomain)),
        EvalFail::Hard(err) => Err(err),
    };
    loop {
        let remaining = s_end - current.s;
        if remaining * dir <= 0.0 {
            return Ok((current, stats, Termination::SpanComplete));
        }
        if stats.accepted >= max_steps {
            return Ok((current, stats, Termination::MaxSteps));
        }
        let h = if hfix >= remaining.abs() { remaining } else { dir * hfix };
        if let Err(e) = rhs.eval(&y, &mut k[0]) {
            return fail(e, current, stats);
        }
        for (st, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..m {
                tmp[i] = y[i] + c * h * k[st - 1][i];
            }
            let (_, tail) = k.split_at_mut(st);
            if let Err(e) = rhs.eval(&tmp, &mut tail[0]) {
                return fail(e, current, stats);
            }
        }
        for i in 0..m {
            y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        let s_new = if h == remaining { s_end } else { current.s + h };
        let next = GeodesicState {
            pos: y[..n].to_vec(),
            vel: y[n..].to_vec(),
            s: s_new,
        };
        if !rhs.model.contains(&next.pos) {
            return Ok((current, stats, Termination::LeftDomain));
        }
        stats.accepted += 1;
        let go = on_step(&current, &next);
        current = next;
        if !go {
            return Ok((current, stats, Termination::Stopped));
        }
    }
}

/// Integrates the geodesic through `state0` over `s_span = (s_start, s_end)`.
///
/// `state0.s` is overwritten with `s_span.0`.
pub fn integrate_geodesic<G: Geometry + ?Sized>(
    model: &G,
    state0: &GeodesicState,
    s_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let mut start = state0.clone();
    start.s = s_span.0;
    let record = cfg.record_energy && model.has_metric();
    let energy_of = |st: &GeodesicState| -> f64 {
        model
            .metric(&st.pos)
            .map(|g| super::bilinear(&g, &st.vel, &st.vel))
            .unwrap_or(f64::NAN)
    };
    let mut samples = vec![start.clone()];
    let mut energies = if record { vec![energy_of(&start)] } else { Vec::new() };
    let (_, stats, termination) = integrate_with(model, &start, s_span.1, cfg, |_, next| {
        if record {
            energies.push(energy_of(next));
        }
        samples.push(next.clone());
        true
    })?;
    Ok(Trajectory {
        samples,
        energy_series: record.then_some(energies),
        step_stats: stats,
        termination,
    })
}

/// `exp_p(s·v)`: the point at parameter `s` on the geodesic with `γ(0)=p`, `γ'(0)=v`.
pub fn exp_map<G: Geometry + ?Sized>(
    model: &G,
    p: &[f64],
    v: &[f64],
    s: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let st = GeodesicState::new(p.to_vec(), v.to_vec(), 0.0);
    let (end, _, term) = integrate_with(model, &st, s, cfg, |_, _| true)?;
    match term {
        Termination::SpanComplete => Ok(end.pos),
        t => Err(Error::Incomplete(t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::energy;
    use crate::models::{Flat, RoundSphere};
    use std::f64::consts::PI;

    #[test]
    fn straight_line_in_the_plane() {
        let m = Flat::euclidean(2);
        let st = GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 1.0), &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.termination, Termination::SpanComplete);
        let end = tr.last();
        assert!((end.pos[0] - 1.0).abs() < 1e-14 && end.pos[1].abs() < 1e-14);
        assert_eq!(tr.energy_drift().unwrap().max_abs, 0.0);
        assert!(tr.samples.windows(2).all(|w| w[1].s > w[0].s));
    }

    #[test]
    fn exp_map_flat_and_zero_velocity() {
        let m = Flat::euclidean(3);
        let cfg = IntegratorConfig::default();
        let q = exp_map(&m, &[0.0; 3], &[1.0, 2.0, 3.0], 2.0, &cfg).unwrap();
        for (a, b) in q.iter().zip([2.0, 4.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = RoundSphere;
        let p = [1.0, 0.5];
        assert_eq!(exp_map(&s, &p, &[0.0, 0.0], 3.0, &cfg).unwrap(), p.to_vec());
    }

    #[test]
    fn backward_integration_and_reversibility() {
        let m = RoundSphere;
        let cfg = IntegratorConfig::default();
        let st = GeodesicState::new(vec![1.2, 0.1], vec![0.3, 0.7], 0.0);
        let fwd = integrate_geodesic(&m, &st, (0.0, 2.0), &cfg).unwrap();
        let end = fwd.last();
        let back = GeodesicState::new(end.pos.clone(), end.vel.iter().map(|v| -v).collect(), 0.0);
        let rev = integrate_geodesic(&m, &back, (0.0, 2.0), &cfg).unwrap();
        for (a, b) in rev.last().pos.iter().zip(&st.pos) {
            assert!((a - b).abs() < 1e-8);
        }
        let neg = integrate_geodesic(&m, &st, (0.0, -2.0), &cfg).unwrap();
        assert_eq!(neg.termination, Termination::SpanComplete);
        assert!(neg.samples.windows(2).all(|w| w[1].s < w[0].s));
    }

    #[test]
    fn leaves_domain_at_the_boundary() {
        // unit disk as domain of the flat plane
        struct Disk(Flat);
        impl Geometry for Disk {
            fn dim(&self) -> usize {
                2
            }
            fn has_metric(&self) -> bool {
                true
            }
            fn metric(&self, x: &[f64]) -> Option<nalgebra::DMatrix<f64>> {
                self.0.metric(x)
            }
            fn contains(&self, x: &[f64]) -> bool {
                x[0] * x[0] + x[1] * x[1] < 1.0
            }
        }
        let m = Disk(Flat::euclidean(2));
        let st = GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 5.0), &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.termination, Termination::LeftDomain);
        assert!((tr.last().s - 1.0).abs() < 1e-9, "{}", tr.last().s);
    }

    #[test]
    fn great_circle_closes_and_conserves_energy() {
        let m = RoundSphere;
        let st = GeodesicState::new(vec![PI / 2.0, 0.0], vec![0.0, 1.0], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 2.0 * PI), &IntegratorConfig::default()).unwrap();
        let end = tr.last();
        assert!((end.pos[0] - PI / 2.0).abs() < 1e-6);
        assert!((end.pos[1] - 2.0 * PI).abs() < 1e-6);
        let d = tr.energy_drift().unwrap();
        assert!(d.within(1e-7 * 2.0 * PI, 1e-9));
        assert!((energy(&m, end).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fixed_step_rk4_matches_adaptive() {
        let m = RoundSphere;
        let st = GeodesicState::new(vec![1.0, 0.0], vec![0.2, 0.9], 0.0);
        let cfg = IntegratorConfig::default();
        let fixed = IntegratorConfig {
            fixed_step: Some(1e-3),
            ..cfg
        };
        let a = integrate_geodesic(&m, &st, (0.0, 1.5), &cfg).unwrap();
        let b = integrate_geodesic(&m, &st, (0.0, 1.5), &fixed).unwrap();
        assert_eq!(b.termination, Termination::SpanComplete);
        assert_eq!(b.last().s, 1.5);
        for (x, y) in a.last().pos.iter().zip(&b.last().pos) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_config_and_start() {
        let m = Flat::euclidean(2);
        let st = GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        let bad = IntegratorConfig {
            h_min: 2.0,
            h_max: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            integrate_geodesic(&m, &st, (0.0, 1.0), &bad),
            Err(Error::Config(_))
        ));
        let tiny = IntegratorConfig {
            max_steps: 3,
            h_max: 1e-3,
            ..Default::default()
        };
        let tr = integrate_geodesic(&m, &st, (0.0, 1.0), &tiny).unwrap();
        assert_eq!(tr.termination, Termination::MaxSteps);
        assert!(matches!(
            exp_map(&m, &[0.0, 0.0], &[1.0, 0.0], 1.0, &tiny),
            Err(Error::Incomplete(Termination::MaxSteps))
        ));
    }

    #[test]
    fn geodesic_residual_is_small() {
        // finite-difference acceleration of the sampled velocity against -Γ(v,v)
        let m = RoundSphere;
        let cfg = IntegratorConfig {
            h_max: 0.01,
            ..Default::default()
        };
        let st = GeodesicState::new(vec![1.0, 0.0], vec![0.4, 0.9], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 1.0), &cfg).unwrap();
        let mut acc = [0.0; 2];
        for w in tr.samples.windows(3) {
            let (a, b, c) = (&w[0], &w[1], &w[2]);
            let h1 = b.s - a.s;
            let h2 = c.s - b.s;
            m.geodesic_acceleration(&b.pos, &b.vel, &mut acc).unwrap();
            for k in 0..2 {
                // second-order non-uniform central difference of velocity
                let dv = (c.vel[k] - b.vel[k]) / h2 * h1 / (h1 + h2) + (b.vel[k] - a.vel[k]) / h1 * h2 / (h1 + h2);
                let bound =
                    10.0 * (cfg.abs_tol + cfg.rel_tol * b.vel[k].abs()) / h1.min(h2) + 10.0 * h1.max(h2).powi(2);
                assert!((dv - acc[k]).abs() < bound, "{} vs {}", dv, acc[k]);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let m = Flat::euclidean(2);
        let st = GeodesicState::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0);
        let tr = integrate_geodesic(&m, &st, (0.0, 1.0), &IntegratorConfig::default()).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "s,x_0,x_1,v_0,v_1,energy");
        assert_eq!(lines.count(), tr.samples.len());
    }
}
