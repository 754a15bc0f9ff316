//! Per-regime stopping boundaries `x2 = b_ι(x1)` and the integral-equation
//! solver for them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;
use crate::onedim::{log_grid, AxisSolution};
use crate::value::{estimate_value_free, McConfig};

/// Piecewise-linear curve on increasing abscissae, extended by constants on
/// both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x1: Vec<f64>,
    pub b: Vec<f64>,
}

impl Curve {
    pub fn new(x1: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if x1.is_empty() || x1.len() != b.len() {
            return invalid(format!(
                "curve needs matching nonempty abscissae and ordinates ({} vs {})",
                x1.len(),
                b.len()
            ));
        }
        if x1.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("curve abscissae must be strictly increasing");
        }
        if b.iter().any(|&v| !(v >= 0.0)) {
            return invalid("curve ordinates must be >= 0");
        }
        Ok(Self { x1, b })
    }

    pub fn constant(level: f64) -> Self {
        Self {
            x1: vec![0.0],
            b: vec![level],
        }
    }

    #[inline]
    pub fn eval(&self, x1: f64) -> f64 {
        let n = self.x1.len();
        if x1 <= self.x1[0] {
            return self.b[0];
        }
        if x1 >= self.x1[n - 1] {
            return self.b[n - 1];
        }
        let k = self.x1.partition_point(|&s| s <= x1);
        let (xa, xb) = (self.x1[k - 1], self.x1[k]);
        let t = (x1 - xa) / (xb - xa);
        (1.0 - t) * self.b[k - 1] + t * self.b[k]
    }

    /// Least abscissa from which the curve is identically zero.
    pub fn zero_from(&self) -> Option<f64> {
        let k = self.b.iter().rposition(|&v| v > 0.0).map_or(0, |k| k + 1);
        self.x1.get(k).copied()
    }
}

/// One curve per regime. Stopping fires when `x2 >= b_ι(x1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub curves: Vec<Curve>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryReport {
    /// `(regime, index)` where an ordinate rises above its left neighbour.
    pub increases: Vec<(usize, usize)>,
    /// `(regime, x1, H)` where the cost on the curve is below `-tol`.
    pub inadmissible: Vec<(usize, f64, f64)>,
    /// `(regime, x1, b)` above the ceiling.
    pub above_ceiling: Vec<(usize, f64, f64)>,
}

impl BoundaryReport {
    pub fn passed(&self) -> bool {
        self.increases.is_empty() && self.inadmissible.is_empty() && self.above_ceiling.is_empty()
    }
}

impl Boundary {
    pub fn constant(n_regimes: usize, level: f64) -> Self {
        Self {
            curves: vec![Curve::constant(level); n_regimes],
        }
    }

    pub fn zero(n_regimes: usize) -> Self {
        Self::constant(n_regimes, 0.0)
    }

    pub fn n_regimes(&self) -> usize {
        self.curves.len()
    }

    #[inline]
    pub fn eval(&self, regime: usize, x1: f64) -> f64 {
        self.curves[regime].eval(x1)
    }

    #[inline]
    pub fn stops(&self, regime: usize, x: [f64; 2]) -> bool {
        x[1] >= self.curves[regime].eval(x[0])
    }

    /// Every ordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            curves: self
                .curves
                .iter()
                .map(|c| Curve {
                    x1: c.x1.clone(),
                    b: c.b.iter().map(|v| v * factor).collect(),
                })
                .collect(),
        }
    }

    /// True when every curve is identically zero.
    pub fn is_zero(&self) -> bool {
        self.curves.iter().all(|c| c.b.iter().all(|&v| v == 0.0))
    }

    pub fn check(&self, m: &ModelSpec, tol: f64, ceiling: f64) -> BoundaryReport {
        let mut rep = BoundaryReport {
            increases: Vec::new(),
            inadmissible: Vec::new(),
            above_ceiling: Vec::new(),
        };
        for (r, c) in self.curves.iter().enumerate() {
            for k in 0..c.b.len() {
                if k > 0 && c.b[k] > c.b[k - 1] {
                    rep.increases.push((r, k));
                }
                let h = m.cost.at(r, [c.x1[k], c.b[k]]);
                if h < -tol {
                    rep.inadmissible.push((r, c.x1[k], h));
                }
                if c.b[k] > ceiling {
                    rep.above_ceiling.push((r, c.x1[k], c.b[k]));
                }
            }
        }
        rep
    }

    /// CSV with columns `regime, x1, b`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "regime,x1,b")?;
        for (r, c) in self.curves.iter().enumerate() {
            for (x, b) in c.x1.iter().zip(&c.b) {
                writeln!(w, "{r},{x},{b}")?;
            }
        }
        Ok(())
    }
}

/// Affine-cost bracket for the ordinate at `x1`: the floor is the zero level
/// of `H(ι, x1, ·)` and the ceiling the largest axis-2 threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub ceiling: f64,
}

impl Bracket {
    pub fn floor(&self, m: &ModelSpec, regime: usize, x1: f64) -> f64 {
        m.zero_level_x2(regime, x1).unwrap_or(self.ceiling).min(self.ceiling)
    }
}

pub fn bracket_from_onedim(axis2: &AxisSolution) -> Bracket {
    Bracket {
        ceiling: axis2.max_threshold(),
    }
}

/// Monte Carlo estimate of
/// `G(ι, x; b) = E ∫_0^∞ e^{−λ0 t} H(α_t, X_t) 1{X²_t < b_{α_t}(X¹_t)} dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub truncation_horizon: f64,
}

pub fn eval_g(m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> Result<GEstimate> {
    let v = estimate_value_free(m, regime, x, b, mc)?;
    Ok(GEstimate {
        mean: v.mean,
        std_error: v.std_error,
        n_paths: v.n_paths,
        truncation_horizon: v.horizon,
    })
}

/// Starting boundary of the fixed-point iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IeInit {
    /// The constant bracket ceiling.
    #[default]
    Ceiling,
    /// The boundary extracted from the HJB field.
    Hjb,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IeParams {
    pub init: IeInit,
    pub n_abscissae: usize,
    pub x_min: f64,
    /// Last abscissa as a multiple of the largest axis-1 threshold.
    pub right_factor: f64,
    /// Damping of the fixed-point update.
    pub theta: f64,
    /// Sup-norm change between iterates at convergence.
    pub tol: f64,
    pub tol_g: f64,
    pub max_iter: usize,
    /// Width at which the shift bisection stops.
    pub bisect_tol: f64,
    /// Initial half-width of the shift search window.
    pub window: f64,
    /// Largest tolerated standard error of a root, from the G standard error
    /// and the local slope of G in the shift.
    pub noise_limit: f64,
    pub mc: McConfig,
}

impl Default for IeParams {
    fn default() -> Self {
        Self {
            init: IeInit::Ceiling,
            n_abscissae: 33,
            x_min: 1e-3,
            right_factor: 1.25,
            theta: 0.5,
            tol: 0.02,
            tol_g: 1e-3,
            max_iter: 40,
            bisect_tol: 0.01,
            window: 0.5,
            noise_limit: 0.25,
            mc: McConfig {
                n_paths: 2000,
                dt: 1e-2,
                ..McConfig::default()
            },
        }
    }
}

impl IeParams {
    pub fn validate(&self) -> Result<()> {
        self.mc.validate()?;
        if self.n_abscissae < 2 || !(self.x_min > 0.0) || !(self.right_factor > 1.0) {
            return invalid("abscissa grid needs >= 2 points, x_min > 0 and right_factor > 1");
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return invalid(format!("damping must lie in (0, 1], got {}", self.theta));
        }
        if !(self.tol > 0.0 && self.tol_g > 0.0 && self.bisect_tol > 0.0 && self.window > 0.0) {
            return invalid("integral-equation tolerances must be positive");
        }
        Ok(())
    }

    /// Log-spaced abscissae up to `right_factor · max x̄¹`.
    pub fn abscissae(&self, axis1: &AxisSolution) -> Vec<f64> {
        log_grid(self.x_min, self.right_factor * axis1.max_threshold().max(self.x_min * 2.0), self.n_abscissae)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sup_change: f64,
    /// Largest `|G|` on the iterate, when residuals were evaluated.
    pub max_abs_g: Option<f64>,
    pub max_root_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IeSolution {
    pub boundary: Boundary,
    pub log: Vec<IterationRecord>,
    /// `G` at every `(regime, abscissa)` of the returned boundary.
    pub residuals: Vec<Vec<GEstimate>>,
}

/// `b + s` clamped into `[floor, ceiling]` on every regime. The last
/// abscissa lies beyond the axis threshold, where the boundary is zero, and
/// stays pinned there.
fn shifted(m: &ModelSpec, b: &Boundary, s: f64, br: &Bracket) -> Boundary {
    let mut out = b.clone();
    for (r, c) in out.curves.iter_mut().enumerate() {
        let n = c.b.len();
        for k in 0..n - 1 {
            c.b[k] = (c.b[k] + s).clamp(br.floor(m, r, c.x1[k]), br.ceiling);
        }
        c.b[n - 1] = 0.0;
    }
    out
}

/// Running minimum from the left, raised to the zero level of H, with the
/// last ordinate pinned to zero.
fn project(m: &ModelSpec, b: &mut Boundary, br: &Bracket) {
    for (r, c) in b.curves.iter_mut().enumerate() {
        let mut run = f64::INFINITY;
        let n = c.b.len();
        for k in 0..n {
            run = run.min(c.b[k]);
            c.b[k] = run.max(br.floor(m, r, c.x1[k])).min(br.ceiling);
        }
        c.b[n - 1] = 0.0;
    }
}

struct Root {
    shift: f64,
    root_se: f64,
}

/// Root in `s` of `G(ι, (x1, b(x1)+s); b+s)`. The whole boundary moves with
/// the start point, so `s` sweeps from "everything stops" to "everything
/// continues" and the sign change is well defined even far from the fixed
/// point.
fn find_shift(m: &ModelSpec, r: usize, k: usize, b: &Boundary, br: &Bracket, p: &IeParams, warm: f64) -> Result<Root> {
    let x1 = b.curves[r].x1[k];
    let base = b.curves[r].b[k];
    if k + 1 == b.curves[r].x1.len() {
        return Ok(Root { shift: -base, root_se: 0.0 });
    }
    let lo_lim = br.floor(m, r, x1) - base;
    let hi_lim = br.ceiling - base;
    let g = |s: f64| -> Result<GEstimate> {
        let trial = shifted(m, b, s, br);
        eval_g(m, r, [x1, trial.curves[r].b[k]], &trial, &p.mc)
    };

    let mut lo = (warm - p.window).max(lo_lim);
    let mut hi = (warm + p.window).min(hi_lim);
    let mut g_lo = g(lo)?;
    let mut width = p.window;
    while g_lo.mean >= 0.0 && lo > lo_lim {
        hi = lo;
        width *= 2.0;
        lo = (lo - width).max(lo_lim);
        g_lo = g(lo)?;
    }
    if g_lo.mean >= 0.0 {
        return Ok(Root { shift: lo_lim, root_se: 0.0 });
    }
    let mut g_hi = g(hi)?;
    while g_hi.mean < 0.0 && hi < hi_lim {
        lo = hi;
        g_lo = g_hi;
        width *= 2.0;
        hi = (hi + width).min(hi_lim);
        g_hi = g(hi)?;
    }
    if g_hi.mean < 0.0 {
        if g_hi.mean > -3.0 * g_hi.std_error {
            return Ok(Root { shift: hi_lim, root_se: 0.0 });
        }
        return Err(Error::BracketFailure {
            regime: r,
            x1,
            g_low: g_lo.mean,
            g_high: g_hi.mean,
        });
    }
    let slope = (g_hi.mean - g_lo.mean) / (hi - lo);
    let root_se = if slope > 0.0 {
        g_lo.std_error.max(g_hi.std_error) / slope
    } else {
        f64::INFINITY
    };
    // Regula falsi with the Illinois weight halving.
    let (mut f_lo, mut f_hi) = (g_lo.mean, g_hi.mean);
    let mut side = 0i8;
    for _ in 0..60 {
        if hi - lo <= p.bisect_tol {
            break;
        }
        let mut s = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let guard = 0.05 * (hi - lo);
        if !(s > lo + guard && s < hi - guard) {
            s = 0.5 * (lo + hi);
        }
        let f = g(s)?.mean;
        if f < 0.0 {
            lo = s;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if f == 0.0 {
            return Ok(Root { shift: s, root_se });
        }
    }
    Ok(Root {
        shift: 0.5 * (lo + hi),
        root_se,
    })
}

/// `G` at every abscissa of every curve, evaluated on the boundary itself.
pub fn boundary_residuals(m: &ModelSpec, b: &Boundary, mc: &McConfig) -> Result<Vec<Vec<GEstimate>>> {
    let pairs: Vec<(usize, usize)> = b.curves.iter().enumerate().flat_map(|(r, c)| (0..c.x1.len()).map(move |k| (r, k))).collect();
    let flat: Vec<Result<GEstimate>> = pairs
        .par_iter()
        .map(|&(r, k)| {
            let c = &b.curves[r];
            eval_g(m, r, [c.x1[k], c.b[k]], b, mc)
        })
        .collect();
    let mut out: Vec<Vec<GEstimate>> = b.curves.iter().map(|c| Vec::with_capacity(c.x1.len())).collect();
    for ((r, _), g) in pairs.into_iter().zip(flat) {
        out[r].push(g?);
    }
    Ok(out)
}

pub fn residuals_pass(res: &[Vec<GEstimate>], tol_g: f64) -> bool {
    res.iter().flatten().all(|g| g.mean.abs() <= (3.0 * g.std_error).max(tol_g))
}

/// Damped fixed-point iteration on the boundary equation `G = 0` at the
/// abscissae of `b0`. Common random numbers: every evaluation uses the same
/// seed, so each sweep is a deterministic map of the current iterate.
pub fn solve_integral_equation(m: &ModelSpec, b0: &Boundary, br: &Bracket, p: &IeParams) -> Result<IeSolution> {
    p.validate()?;
    m.validate_shape()?;
    m.require_constant_lambda()?;
    let rep = m.check_assumptions();
    if !rep.all_pass() {
        return Err(Error::Assumption(format!("the boundary equation needs A1-A3 certified: {rep:?}")));
    }
    if b0.n_regimes() != m.n_regimes() {
        return invalid("initial boundary has the wrong number of regimes");
    }
    let mut b = b0.clone();
    project(m, &mut b, br);
    let pairs: Vec<(usize, usize)> = b.curves.iter().enumerate().flat_map(|(r, c)| (0..c.x1.len()).map(move |k| (r, k))).collect();
    let mut warm: Vec<f64> = vec![0.0; pairs.len()];
    let mut log = Vec::new();

    for it in 1..=p.max_iter {
        let roots: Vec<Result<Root>> = pairs
            .par_iter()
            .zip(&warm)
            .map(|(&(r, k), &w)| find_shift(m, r, k, &b, br, p, w))
            .collect();
        let mut next = b.clone();
        let mut max_root_se = 0.0f64;
        for (idx, (&(r, k), root)) in pairs.iter().zip(roots).enumerate() {
            let root = root?;
            let x1 = b.curves[r].x1[k];
            let target = (b.curves[r].b[k] + root.shift).clamp(br.floor(m, r, x1), br.ceiling);
            next.curves[r].b[k] = (1.0 - p.theta) * b.curves[r].b[k] + p.theta * target;
            // The remaining distance to the proposal, seen from the new iterate.
            warm[idx] = target - next.curves[r].b[k];
            max_root_se = max_root_se.max(root.root_se);
        }
        project(m, &mut next, br);
        let sup_change = b
            .curves
            .iter()
            .zip(&next.curves)
            .flat_map(|(a, c)| a.b.iter().zip(&c.b).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max);
        b = next;
        let mut rec = IterationRecord {
            iteration: it,
            sup_change,
            max_abs_g: None,
            max_root_se,
        };
        if max_root_se > p.noise_limit {
            log.push(rec);
            return Err(Error::NoiseFloor {
                noise: max_root_se,
                tol: p.noise_limit,
            });
        }
        if sup_change <= p.tol {
            let res = boundary_residuals(m, &b, &p.mc)?;
            rec.max_abs_g = Some(res.iter().flatten().map(|g| g.mean.abs()).fold(0.0, f64::max));
            log.push(rec);
            if residuals_pass(&res, p.tol_g) {
                return Ok(IeSolution {
                    boundary: b,
                    log,
                    residuals: res,
                });
            }
        } else {
            log.push(rec);
        }
    }
    Err(Error::NotConverged {
        solver: "integral equation",
        iterations: p.max_iter,
        residual: log.last().map_or(f64::NAN, |r| r.sup_change),
    })
}

/// Resample every curve of `b` onto `x1` (used to start the iteration from a
/// boundary given on another grid).
pub fn resample(b: &Boundary, x1: &[f64]) -> Boundary {
    Boundary {
        curves: b
            .curves
            .iter()
            .map(|c| Curve {
                x1: x1.to_vec(),
                b: x1.iter().map(|&x| c.eval(x)).collect(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::detection_like;
    use crate::model::CostSpec;
    use crate::regimes::GeneratorMatrix;
    use proptest::prelude::*;

    fn det() -> ModelSpec {
        detection_like(GeneratorMatrix::two_state(1.0, 1.0), 1.0, 0.5, &[1.0, 2.0], [0.5, 0.5], 1.0)
    }

    fn small_mc(seed: u64) -> McConfig {
        McConfig {
            n_paths: 400,
            dt: 0.02,
            seed,
            ..McConfig::default()
        }
    }

    #[test]
    fn curve_rejects_bad_input() {
        assert!(Curve::new(vec![], vec![]).is_err());
        assert!(Curve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(Curve::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        let c = Curve::new(vec![1.0, 2.0], vec![4.0, 2.0]).unwrap();
        assert_eq!(c.eval(0.0), 4.0);
        assert_eq!(c.eval(1.5), 3.0);
        assert_eq!(c.eval(9.0), 2.0);
    }

    #[test]
    fn floor_is_the_zero_level_of_the_cost() {
        // H = 0.5 x1 + 0.5 x2 - 1 vanishes on x2 = 2 - x1.
        let mut m = det();
        m.cost = CostSpec::uniform(2, 0.5, 0.5, 1.0);
        let br = Bracket { ceiling: 10.0 };
        assert!((br.floor(&m, 0, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(br.floor(&m, 1, 3.0), 0.0);
        assert_eq!(Bracket { ceiling: 1.0 }.floor(&m, 0, 0.5), 1.0);
    }

    #[test]
    fn zero_boundary_has_zero_residual() {
        let g = eval_g(&det(), 0, [0.5, 0.5], &Boundary::zero(2), &small_mc(1)).unwrap();
        assert_eq!(g.mean, 0.0);
        assert_eq!(g.std_error, 0.0);
    }

    #[test]
    fn far_boundary_matches_mean_dynamics() {
        // With B = 0 the mean path is x + a t, so with no stopping
        // G = sum_i p_i (x_i / λ + a_i / λ²) - κ / λ = -0.5 here.
        let mut m = det();
        m.b = vec![[[0.0; 2]; 2]; 2];
        m.sigma = vec![[0.2; 2]; 2];
        m.cost = CostSpec::uniform(2, 0.5, 0.5, 2.0);
        let mc = McConfig {
            n_paths: 20_000,
            dt: 5e-3,
            seed: 3,
            ..McConfig::default()
        };
        // Far enough that no path reaches it within the horizon.
        let far = Curve::new(vec![0.0, 1e3, 1e3 + 1.0], vec![1e3, 1e3, 0.0]).unwrap();
        let b = Boundary {
            curves: vec![far.clone(), far],
        };
        let g = eval_g(&m, 0, [0.5, 0.5], &b, &mc).unwrap();
        assert!((g.mean + 0.5).abs() < 4.0 * g.std_error + 5e-3, "{g:?}");
    }

    #[test]
    fn nonnegative_cost_gives_zero_boundary() {
        let mut m = det();
        m.cost = CostSpec::uniform(2, 0.5, 0.5, 0.0);
        let p = IeParams {
            n_abscissae: 6,
            theta: 1.0,
            mc: small_mc(5),
            ..IeParams::default()
        };
        let b0 = resample(&Boundary::constant(2, 3.0), &log_grid(1e-3, 4.0, 6));
        let sol = solve_integral_equation(&m, &b0, &Bracket { ceiling: 3.0 }, &p).unwrap();
        assert!(sol.boundary.is_zero());
        assert!(sol.log.len() <= 2, "{:?}", sol.log);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let m = det();
        let p = IeParams {
            n_abscissae: 5,
            max_iter: 3,
            tol: 10.0,
            tol_g: 10.0,
            mc: small_mc(9),
            ..IeParams::default()
        };
        let b0 = resample(&Boundary::constant(2, 6.0), &log_grid(1e-3, 8.0, 5));
        let br = Bracket { ceiling: 9.0 };
        let a = solve_integral_equation(&m, &b0, &br, &p).unwrap();
        let b = solve_integral_equation(&m, &b0, &br, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.boundary.check(&m, 1e-9, 9.0).passed());
    }

    #[test]
    fn varying_discount_is_rejected() {
        let mut m = det();
        m.lambda = vec![1.0, 2.0];
        let b0 = Boundary::constant(2, 1.0);
        let err = solve_integral_equation(&m, &b0, &Bracket { ceiling: 2.0 }, &IeParams::default()).unwrap_err();
        assert!(matches!(err, Error::NonConstantDiscount(_)));
    }

    proptest! {
        #[test]
        fn projection_is_monotone_and_bracketed(raw in proptest::collection::vec(0.0f64..12.0, 4..10)) {
            let m = det();
            let br = Bracket { ceiling: 9.0 };
            let x1 = log_grid(1e-2, 8.0, raw.len());
            let mut b = Boundary { curves: vec![Curve { x1: x1.clone(), b: raw.clone() }; 2] };
            project(&m, &mut b, &br);
            for (r, c) in b.curves.iter().enumerate() {
                prop_assert!(c.b.windows(2).all(|w| w[1] <= w[0]));
                prop_assert_eq!(*c.b.last().unwrap(), 0.0);
                for k in 0..c.b.len() - 1 {
                    prop_assert!(c.b[k] <= br.ceiling);
                    prop_assert!(c.b[k] >= br.floor(&m, r, c.x1[k]) - 1e-12);
                }
            }
        }
    }
}
