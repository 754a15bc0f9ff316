//! Monte Carlo value estimation under a boundary rule.
//!
//! * stopped: `E ∫_0^τ e^{−Λ_t} H(α_t, X_t) dt` with `τ` the first grid time at
//!   which `X² ≥ b_α(X¹)`;
//! * free: `E ∫_0^∞ e^{−λ0 t} H(α_t, X_t) 1{X_t ∈ C_{α_t}} dt` for constant λ;
//! * Snell check: the value-plus-running-cost process stopped at `τ` has
//!   constant expectation.

use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;
use crate::rng::CounterRng;
use crate::simulate::{par_paths, Step, Stepper};
use crate::stats::{combined_se, Summary, Welford};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub n_paths: u64,
    pub dt: f64,
    pub seed: u64,
    /// Truncation error allowed in the free representation.
    pub tail_eps: f64,
    /// Stopped estimator: largest tolerated fraction of paths still running at `T_cap`.
    pub max_unstopped: f64,
    pub pilot_paths: u64,
    /// Overrides the pilot-based cap of the stopped estimator.
    pub t_cap: Option<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-3,
            seed: 20240601,
            tail_eps: 1e-3,
            max_unstopped: 0.01,
            pilot_paths: 1000,
            t_cap: None,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return invalid("n_paths must be at least 2");
        }
        if !(self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.tail_eps > 0.0) {
            return invalid("tail_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.max_unstopped) {
            return invalid("max_unstopped must lie in [0, 1]");
        }
        if let Some(t) = self.t_cap {
            if !(t > 0.0) {
                return invalid(format!("t_cap must be positive, got {t}"));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    /// Same configuration on an independent named substream.
    pub fn derived(&self, label: &str) -> Self {
        self.with_seed(CounterRng::derive_seed(self.seed, label))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub unstopped_fraction: f64,
    /// Bound on what the paths still running at the horizon could add.
    pub tail_bound: f64,
    /// `T_cap` (stopped) or `T_max` (free).
    pub horizon: f64,
}

impl ValueEstimate {
    pub fn exact(value: f64, n_paths: u64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n_paths,
            unstopped_fraction: 0.0,
            tail_bound: 0.0,
            horizon: 0.0,
        }
    }

    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.mean,
            std_error: self.std_error,
            n: self.n_paths,
        }
    }
}

fn check_point(m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary) -> Result<()> {
    m.validate_shape()?;
    if regime >= m.n_regimes() {
        return invalid(format!("regime {regime} out of range"));
    }
    if b.n_regimes() != m.n_regimes() {
        return invalid(format!("boundary has {} regimes, model {}", b.n_regimes(), m.n_regimes()));
    }
    if !(x[0] >= 0.0 && x[1] >= 0.0) || !x[0].is_finite() || !x[1].is_finite() {
        return invalid(format!("point must be finite and >= 0, got {x:?}"));
    }
    Ok(())
}

/// `sup |H|` over the continuation region `{x2 < b_ι(x1)}`, infinite when
/// the region is unbounded. Uses that H is increasing in both coordinates.
pub fn continuation_cost_bound(m: &ModelSpec, b: &Boundary) -> f64 {
    let mut sup = 0.0f64;
    for (r, c) in b.curves.iter().enumerate() {
        if c.b.iter().all(|&v| v == 0.0) {
            continue;
        }
        let x1 = match c.zero_from() {
            Some(x) => x,
            None => return f64::INFINITY,
        };
        let top = c.b.iter().copied().fold(0.0, f64::max);
        if !top.is_finite() {
            return f64::INFINITY;
        }
        sup = sup.max(m.cost.at(r, [0.0, 0.0]).abs()).max(m.cost.at(r, [x1, top]).abs());
    }
    sup
}

/// Outcome of one stopped path.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stopped {
    pub integral: f64,
    pub tau: Option<f64>,
    pub regime: usize,
    pub x: [f64; 2],
    pub lambda: f64,
}

#[inline]
fn trapezoid(m: &ModelSpec, s: &Step) -> f64 {
    let h = s.t1 - s.t0;
    0.5 * h * ((-s.lambda0).exp() * m.cost.at(s.regime, s.x0) + (-s.lambda1).exp() * m.cost.at(s.regime, s.x1))
}

/// Run until the rule fires or `t_stop`. `tau` is set only if the rule fired.
pub(crate) fn run_stopped(stepper: &mut Stepper<'_>, m: &ModelSpec, b: &Boundary, t_stop: f64) -> Stopped {
    let mut out = Stopped {
        integral: 0.0,
        tau: None,
        regime: stepper.regime(),
        x: stepper.x(),
        lambda: stepper.lambda(),
    };
    if b.stops(out.regime, out.x) {
        out.tau = Some(stepper.t());
        return out;
    }
    while stepper.t() < t_stop {
        let s = stepper.step_until(t_stop);
        out.integral += trapezoid(m, &s);
        out.regime = s.next_regime;
        out.x = s.x1;
        out.lambda = s.lambda1;
        if b.stops(s.next_regime, s.x1) {
            out.tau = Some(s.t1);
            break;
        }
    }
    out
}

/// `10 ×` the pilot mean of `τ`, where pilot paths still running at a long
/// horizon count at that horizon.
pub fn pilot_cap(m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> f64 {
    let long = 50.0 / m.lambda_min().max(1e-3);
    let seed = CounterRng::derive_seed(mc.seed, "pilot");
    let taus = par_paths(mc.pilot_paths.max(2), |i| {
        let mut s = Stepper::new(m, regime, x, mc.dt, seed, i);
        run_stopped(&mut s, m, b, long).tau.unwrap_or(long)
    });
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    (10.0 * mean).clamp(10.0 * mc.dt, long)
}

pub fn estimate_value_stopped(m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> Result<ValueEstimate> {
    check_point(m, regime, x, b)?;
    mc.validate()?;
    if b.stops(regime, x) {
        return Ok(ValueEstimate::exact(0.0, mc.n_paths));
    }
    let t_cap = match mc.t_cap {
        Some(t) => t,
        None => pilot_cap(m, regime, x, b, mc),
    };
    let runs = par_paths(mc.n_paths, |i| {
        let mut s = Stepper::new(m, regime, x, mc.dt, mc.seed, i);
        let out = run_stopped(&mut s, m, b, t_cap);
        (out.integral, out.tau.is_none(), out.lambda)
    });
    let w: Welford = runs.iter().map(|r| r.0).collect();
    let unstopped = runs.iter().filter(|r| r.1).count();
    let unstopped_fraction = unstopped as f64 / mc.n_paths as f64;
    let lam_cap = runs.iter().filter(|r| r.1).map(|r| r.2).fold(f64::INFINITY, f64::min);
    let tail_bound = if unstopped == 0 {
        0.0
    } else {
        unstopped_fraction * (-lam_cap).exp() * continuation_cost_bound(m, b) / m.lambda_min()
    };
    if unstopped_fraction > mc.max_unstopped {
        return Err(Error::Unstopped {
            fraction: unstopped_fraction,
            limit: mc.max_unstopped,
        });
    }
    Ok(ValueEstimate {
        mean: w.mean(),
        std_error: w.std_error(),
        n_paths: mc.n_paths,
        unstopped_fraction,
        tail_bound,
        horizon: t_cap,
    })
}

/// Horizon for the free representation: `sup_C|H| e^{−λ0 T} / λ0 < tail_eps`.
pub fn free_horizon(m: &ModelSpec, b: &Boundary, tail_eps: f64) -> Result<f64> {
    let lam = m.require_constant_lambda()?;
    let sup = continuation_cost_bound(m, b);
    if !sup.is_finite() {
        return invalid("continuation region is unbounded; the free representation needs a bounded boundary");
    }
    Ok((sup / (lam * tail_eps)).ln().max(0.0) / lam)
}

/// `∫_0^T e^{−λ0 t} H 1{X ∈ C} dt` along one path, trapezoid in time with
/// the regime in force on each step.
pub(crate) fn free_path(m: &ModelSpec, b: &Boundary, regime: usize, x: [f64; 2], dt: f64, seed: u64, substream: u64, lam: f64, t_max: f64) -> f64 {
    let f = |r: usize, y: [f64; 2], t: f64| {
        if b.stops(r, y) {
            0.0
        } else {
            (-lam * t).exp() * m.cost.at(r, y)
        }
    };
    let mut s = Stepper::new(m, regime, x, dt, seed, substream);
    let mut acc = 0.0;
    let mut f0 = f(regime, x, 0.0);
    while s.t() < t_max {
        let st = s.step_until(t_max);
        let f1 = f(st.regime, st.x1, st.t1);
        acc += 0.5 * (st.t1 - st.t0) * (f0 + f1);
        f0 = if st.next_regime == st.regime { f1 } else { f(st.next_regime, st.x1, st.t1) };
    }
    acc
}

pub fn estimate_value_free(m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> Result<ValueEstimate> {
    check_point(m, regime, x, b)?;
    mc.validate()?;
    let lam = m.require_constant_lambda()?;
    if b.is_zero() {
        return Ok(ValueEstimate::exact(0.0, mc.n_paths));
    }
    let t_max = free_horizon(m, b, mc.tail_eps)?;
    let w: Welford = par_paths(mc.n_paths, |i| free_path(m, b, regime, x, mc.dt, mc.seed, i, lam, t_max))
        .into_iter()
        .collect();
    Ok(ValueEstimate {
        mean: w.mean(),
        std_error: w.std_error(),
        n_paths: mc.n_paths,
        unstopped_fraction: 0.0,
        tail_bound: mc.tail_eps,
        horizon: t_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnellReport {
    pub start: Summary,
    /// `(t, estimate of E[e^{−Λ_{t∧τ}} V(t∧τ) + ∫_0^{t∧τ} e^{−Λ}H], deviation in SE units)`.
    pub checkpoints: Vec<(f64, Summary, f64)>,
    pub max_deviation: f64,
}

/// Nested Monte Carlo: `n_outer = mc.n_paths` outer paths run to `t ∧ τ`,
/// then `V` at the reached state is estimated by the stopped estimator with
/// `inner_paths` paths on a disjoint substream. The reference value at 0 is a
/// stopped estimate at `x` with `n_outer · inner_paths` paths.
pub fn snell_martingale_check(
    m: &ModelSpec,
    regime: usize,
    x: [f64; 2],
    b: &Boundary,
    checkpoints: &[f64],
    inner_paths: u64,
    mc: &McConfig,
) -> Result<SnellReport> {
    check_point(m, regime, x, b)?;
    mc.validate()?;
    if checkpoints.iter().any(|&t| !(t >= 0.0)) {
        return invalid("checkpoints must be nonnegative");
    }
    if b.stops(regime, x) {
        return Ok(SnellReport {
            start: Summary::exact(0.0, mc.n_paths),
            checkpoints: checkpoints.iter().map(|&t| (t, Summary::exact(0.0, mc.n_paths), 0.0)).collect(),
            max_deviation: 0.0,
        });
    }
    let t_cap = match mc.t_cap {
        Some(t) => t,
        None => pilot_cap(m, regime, x, b, mc),
    };
    let capped = McConfig {
        t_cap: Some(t_cap),
        max_unstopped: 1.0,
        ..*mc
    };
    let start = estimate_value_stopped(
        m,
        regime,
        x,
        b,
        &McConfig {
            n_paths: mc.n_paths * inner_paths.max(1),
            ..capped.derived("snell-start")
        },
    )?;
    let start = start.summary();

    let mut out = Vec::with_capacity(checkpoints.len());
    let mut max_dev = 0.0f64;
    for (c, &t) in checkpoints.iter().enumerate() {
        if t == 0.0 {
            out.push((t, start, 0.0));
            continue;
        }
        let outer_seed = CounterRng::derive_seed(mc.seed, &format!("snell-outer-{c}"));
        let samples = par_paths(mc.n_paths, |i| -> Result<f64> {
            let mut s = Stepper::new(m, regime, x, mc.dt, outer_seed, i);
            let o = run_stopped(&mut s, m, b, t);
            if o.tau.is_some() {
                return Ok(o.integral);
            }
            let inner = McConfig {
                n_paths: inner_paths,
                t_cap: Some((t_cap - t).max(t_cap * 0.5)),
                ..capped.derived(&format!("snell-inner-{c}-{i}"))
            };
            let v = estimate_value_stopped(m, o.regime, o.x, b, &inner)?;
            Ok((-o.lambda).exp() * v.mean + o.integral)
        });
        let mut w = Welford::new();
        for s in samples {
            w.push(s?);
        }
        let est = w.summary();
        let se = combined_se(est.std_error, start.std_error);
        let dev = if se > 0.0 { (est.mean - start.mean).abs() / se } else { 0.0 };
        max_dev = max_dev.max(dev);
        out.push((t, est, dev));
    }
    Ok(SnellReport {
        start,
        checkpoints: out,
        max_deviation: max_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::Curve;
    use crate::model::fixtures::detection_like;
    use crate::regimes::GeneratorMatrix;
    use crate::stats::z_gap;

    fn acceptance() -> ModelSpec {
        detection_like(GeneratorMatrix::two_state(1.0, 1.0), 1.0, 0.5, &[1.0, 2.0], [0.5, 0.5], 1.0)
    }

    /// A convex decreasing curve close to the solved boundary.
    fn rough_boundary() -> Boundary {
        let x1: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
        let curve = |top: f64, end: f64| {
            Curve::new(x1.clone(), x1.iter().map(|&z| if z < end { top * (1.0 - z / end).powf(1.3) } else { 0.0 }).collect()).unwrap()
        };
        Boundary {
            curves: vec![curve(5.2, 5.7), curve(7.8, 9.0)],
        }
    }

    fn mc(n: u64) -> McConfig {
        McConfig {
            n_paths: n,
            dt: 2e-3,
            seed: 7,
            pilot_paths: 200,
            ..McConfig::default()
        }
    }

    #[test]
    fn zero_boundary_is_exactly_zero() {
        let m = acceptance();
        let b = Boundary::zero(2);
        for f in [estimate_value_stopped, estimate_value_free] {
            let v = f(&m, 0, [1.0, 1.0], &b, &mc(100)).unwrap();
            assert_eq!((v.mean, v.std_error), (0.0, 0.0));
        }
        let s = snell_martingale_check(&m, 0, [1.0, 1.0], &b, &[0.0, 0.5], 10, &mc(10)).unwrap();
        assert_eq!(s.max_deviation, 0.0);
    }

    #[test]
    fn stopping_region_start_is_zero() {
        let m = acceptance();
        let b = rough_boundary();
        let v = estimate_value_stopped(&m, 1, [1.0, 8.0], &b, &mc(100)).unwrap();
        assert_eq!(v.mean, 0.0);
    }

    #[test]
    fn free_needs_constant_lambda() {
        let mut m = acceptance();
        m.lambda = vec![1.0, 2.0];
        assert!(matches!(
            estimate_value_free(&m, 0, [1.0, 1.0], &rough_boundary(), &mc(10)),
            Err(Error::NonConstantDiscount(_))
        ));
        // The stopped representation does not care.
        assert!(estimate_value_stopped(&m, 0, [1.0, 1.0], &rough_boundary(), &mc(200)).is_ok());
    }

    #[test]
    fn unstopped_paths_are_reported() {
        let m = acceptance();
        let never = Boundary::constant(2, f64::INFINITY);
        let cfg = McConfig {
            t_cap: Some(0.5),
            ..mc(100)
        };
        assert!(matches!(
            estimate_value_stopped(&m, 0, [1.0, 1.0], &never, &cfg),
            Err(Error::Unstopped { .. })
        ));
        let v = estimate_value_stopped(&m, 0, [1.0, 1.0], &never, &McConfig { max_unstopped: 1.0, ..cfg }).unwrap();
        assert_eq!(v.unstopped_fraction, 1.0);
        assert!(v.tail_bound.is_infinite());
    }

    fn hjb_boundary(m: &ModelSpec) -> Boundary {
        use crate::hjb::{extract_boundaries, solve_vi, Grid2D, MinEdge};
        use crate::onedim::{solve_axis_problem, AxisGridSpec, Cutoff, PsorParams};
        let p = PsorParams::default();
        let ax = [1, 2].map(|a| solve_axis_problem(m, a, Cutoff::Auto, &AxisGridSpec::default(), &p).unwrap());
        let g = Grid2D::from_axes([&ax[0], &ax[1]], 64, 64, 1e-3, 2.0).unwrap();
        let f = solve_vi(m, f64::INFINITY, &g, [&ax[0], &ax[1]], MinEdge::Natural, &p).unwrap();
        extract_boundaries(&f, p.value_tol)
    }

    #[test]
    fn stopped_and_free_agree_in_the_interior() {
        // The two representations coincide only on the optimal boundary; away
        // from it they differ by the discounted residual of the boundary equation.
        let m = acceptance();
        let b = hjb_boundary(&m);
        let cfg = mc(4000);
        let s = estimate_value_stopped(&m, 0, [0.5, 0.5], &b, &cfg).unwrap();
        let f = estimate_value_free(&m, 0, [0.5, 0.5], &b, &cfg.derived("free")).unwrap();
        assert!(s.mean < 0.0);
        assert!(s.unstopped_fraction <= cfg.max_unstopped);
        assert!(z_gap(s.summary(), f.summary()) <= 3.0, "{s:?} vs {f:?}");
    }

    #[test]
    fn monotone_and_concave_in_the_start() {
        let m = acceptance();
        let b = rough_boundary();
        let cfg = mc(3000);
        let v = |x: [f64; 2]| estimate_value_stopped(&m, 1, x, &b, &cfg).unwrap();
        let (lo, hi) = (v([0.5, 0.5]), v([1.0, 1.5]));
        assert!(lo.mean <= hi.mean + 3.0 * combined_se(lo.std_error, hi.std_error));
        let mid = v([0.75, 1.0]);
        let chord = 0.5 * (lo.mean + hi.mean);
        let se = (mid.std_error.powi(2) + 0.25 * (lo.std_error.powi(2) + hi.std_error.powi(2))).sqrt();
        assert!(mid.mean >= chord - 3.0 * se);
        for e in [lo, mid, hi] {
            assert!(e.mean <= 3.0 * e.std_error);
        }
    }

    #[test]
    fn snell_process_has_constant_mean() {
        let m = acceptance();
        let b = rough_boundary();
        let r = snell_martingale_check(&m, 0, [1.0, 1.0], &b, &[0.0, 0.25, 0.5], 40, &mc(300)).unwrap();
        assert_eq!(r.checkpoints[0].2, 0.0);
        assert!(r.max_deviation <= 4.0, "{r:?}");
    }

    #[test]
    fn fixed_seed_reproduces() {
        let m = acceptance();
        let b = rough_boundary();
        let a = estimate_value_stopped(&m, 0, [1.0, 1.0], &b, &mc(500)).unwrap();
        let c = estimate_value_stopped(&m, 0, [1.0, 1.0], &b, &mc(500)).unwrap();
        assert_eq!(a, c);
    }
}
