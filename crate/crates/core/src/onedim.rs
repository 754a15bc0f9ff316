//! Axis-restricted stopping problems.
//!
//! On axis `i` the other coordinate is frozen at zero and the state follows
//! `dX = (a^i + b^{ii} X) dt + σ^i X dW` with cost `H^N(ι, x e_i)`. The coupled
//! variational inequality `min(L w − λ w + H^N, −w) = 0` is solved by projected
//! SOR on a log-spaced grid. The resulting thresholds bracket the 2-D boundary
//! and the values feed the 2-D solver as optional edge data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;

/// Truncation level `N` of the running cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Start from `10·|H̲|` and double until the thresholds stop moving.
    Auto,
    Finite(f64),
    Infinite,
}

impl Cutoff {
    pub fn level(&self) -> Option<f64> {
        match *self {
            Cutoff::Finite(n) => Some(n),
            Cutoff::Infinite => Some(f64::INFINITY),
            Cutoff::Auto => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisGridSpec {
    pub x_min: f64,
    pub n: usize,
    /// Fixed right edge; disables the doubling search.
    pub x_max: Option<f64>,
    pub max_doublings: usize,
}

impl Default for AxisGridSpec {
    fn default() -> Self {
        Self {
            x_min: 1e-3,
            n: 401,
            x_max: None,
            max_doublings: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsorParams {
    pub omega: f64,
    /// Sup-norm complementarity residual at convergence.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Nodes with `w >= -value_tol` count as stopping nodes.
    pub value_tol: f64,
}

impl Default for PsorParams {
    fn default() -> Self {
        Self {
            omega: 1.7,
            tol: 1e-8,
            max_sweeps: 2_000_000,
            value_tol: 1e-8,
        }
    }
}

impl PsorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return invalid(format!("SOR relaxation must lie in (0, 2), got {}", self.omega));
        }
        if !(self.tol > 0.0) || !(self.value_tol > 0.0) {
            return invalid("solver tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSolution {
    /// 1 or 2.
    pub axis: usize,
    pub grid: Vec<f64>,
    /// `values[ι][k]` at `grid[k]`.
    pub values: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
    pub cutoff_n: f64,
    pub residual: f64,
    pub sweeps: usize,
}

pub fn log_grid(x_min: f64, x_max: f64, n: usize) -> Vec<f64> {
    let (l0, l1) = (x_min.ln(), x_max.ln());
    (0..n)
        .map(|k| {
            if k + 1 == n {
                x_max
            } else {
                (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Width of the grid cell containing `x` (the last cell beyond the grid).
pub fn cell_width(grid: &[f64], x: f64) -> f64 {
    let k = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1);
    grid[k] - grid[k - 1]
}

/// Upwind drift plus central diffusion on a nonuniform grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub cm: f64,
    pub cp: f64,
    /// Fraction of `cm + cp` contributed by diffusion.
    pub diffusive: f64,
}

impl Stencil {
    /// At the left edge the diffusion (which vanishes like `x²`) is dropped
    /// and the drift is differenced forward.
    #[inline]
    pub fn new(grid: &[f64], k: usize, drift: f64, diff: f64) -> Self {
        if k == 0 {
            return Self {
                cm: 0.0,
                cp: drift.max(0.0) / (grid[1] - grid[0]),
                diffusive: 0.0,
            };
        }
        let hm = grid[k] - grid[k - 1];
        let hp = grid[k + 1] - grid[k];
        let dm = 2.0 * diff / (hm * (hm + hp));
        let dp = 2.0 * diff / (hp * (hm + hp));
        let cm = dm + (-drift).max(0.0) / hm;
        let cp = dp + drift.max(0.0) / hp;
        let total = cm + cp;
        Self {
            cm,
            cp,
            diffusive: if total > 0.0 { (dm + dp) / total } else { 0.0 },
        }
    }

    /// Over-relaxation is only applied in proportion to the diffusive share:
    /// on drift-dominated chains SOR with `omega > 1` amplifies errors along
    /// the chain, while plain Gauss–Seidel in the upwind order is exact there.
    #[inline]
    pub fn relaxation(&self, omega: f64) -> f64 {
        1.0 + (omega - 1.0) * self.diffusive
    }
}

struct AxisProblem<'a> {
    m: &'a ModelSpec,
    i: usize,
    n_cut: f64,
    grid: &'a [f64],
    /// Per regime and node: (cm, cp, diag, H^N, relaxation).
    coef: Vec<Vec<(f64, f64, f64, f64, f64)>>,
}

impl<'a> AxisProblem<'a> {
    fn new(m: &'a ModelSpec, i: usize, n_cut: f64, grid: &'a [f64], omega: f64) -> Self {
        let coef = (0..m.n_regimes())
            .map(|r| {
                grid[..grid.len() - 1]
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        let drift = m.a[r][i] + m.b[r][i][i] * x;
                        let diff = 0.5 * (m.sigma[r][i] * x).powi(2);
                        let st = Stencil::new(grid, k, drift, diff);
                        let diag = st.cm + st.cp + m.q.exit_rate(r) + m.lambda[r];
                        (st.cm, st.cp, diag, cost_on_axis(m, r, i, x).min(n_cut), st.relaxation(omega))
                    })
                    .collect()
            })
            .collect();
        Self {
            m,
            i,
            n_cut,
            grid,
            coef,
        }
    }

    /// `L w − λ w + H^N` at node `k` of regime `r`.
    #[inline]
    fn operator(&self, w: &[Vec<f64>], r: usize, k: usize) -> f64 {
        let (cm, cp, diag, h, _) = self.coef[r][k];
        let left = if k == 0 { 0.0 } else { cm * w[r][k - 1] };
        let mut s = left + cp * w[r][k + 1] + h - diag * w[r][k];
        for j in 0..w.len() {
            if j != r {
                s += self.m.q.rate(r, j) * w[j][k];
            }
        }
        s
    }

    fn residual(&self, w: &[Vec<f64>]) -> f64 {
        let mut res = 0.0f64;
        for r in 0..w.len() {
            for k in 0..self.grid.len() - 1 {
                let v = self.operator(w, r, k).min(-w[r][k]);
                res = res.max(v.abs());
            }
        }
        res
    }

    fn solve(&self, psor: &PsorParams) -> Result<(Vec<Vec<f64>>, f64, usize)> {
        let n = self.grid.len();
        let nr = self.m.n_regimes();
        let mut w = vec![vec![0.0; n]; nr];
        let mut sweeps = 0;
        loop {
            let mut change = 0.0f64;
            for r in 0..nr {
                for k in (0..n - 1).rev() {
                    let (_, _, diag, _, omega) = self.coef[r][k];
                    let new = (w[r][k] + omega * self.operator(&w, r, k) / diag).min(0.0);
                    change = change.max((new - w[r][k]).abs());
                    w[r][k] = new;
                }
            }
            sweeps += 1;
            if change == 0.0 || (sweeps % 16 == 0 && change < psor.tol) {
                let res = self.residual(&w);
                if res <= psor.tol {
                    return Ok((w, res, sweeps));
                }
            }
            if sweeps >= psor.max_sweeps {
                return Err(Error::NotConverged {
                    solver: "axis PSOR",
                    iterations: sweeps,
                    residual: self.residual(&w),
                });
            }
        }
    }
}

#[inline]
fn cost_on_axis(m: &ModelSpec, r: usize, i: usize, x: f64) -> f64 {
    let mut p = [0.0; 2];
    p[i] = x;
    m.cost.at(r, p)
}

fn thresholds(grid: &[f64], values: &[Vec<f64>], value_tol: f64) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let k = v.iter().position(|&w| w >= -value_tol).unwrap_or(grid.len() - 1);
            grid[k]
        })
        .collect()
}

fn solve_fixed(m: &ModelSpec, axis: usize, n_cut: f64, grid: Vec<f64>, psor: &PsorParams) -> Result<AxisSolution> {
    let p = AxisProblem::new(m, axis - 1, n_cut, &grid, psor.omega);
    let (values, residual, sweeps) = p.solve(psor)?;
    debug_assert_eq!(p.i, axis - 1);
    let thresholds = thresholds(&grid, &values, psor.value_tol);
    Ok(AxisSolution {
        axis,
        thresholds,
        cutoff_n: p.n_cut,
        residual,
        sweeps,
        grid,
        values,
    })
}

/// Doubling search for the right edge, then a final solve on `[x_min, 4·B]`
/// where `B` is the first edge whose solved thresholds all lie in its lower half.
fn solve_with_search(m: &ModelSpec, axis: usize, n_cut: f64, spec: &AxisGridSpec, psor: &PsorParams) -> Result<AxisSolution> {
    if let Some(x_max) = spec.x_max {
        let sol = solve_fixed(m, axis, n_cut, log_grid(spec.x_min, x_max, spec.n), psor)?;
        let edge = sol.grid[sol.grid.len() - 2];
        if sol.thresholds.iter().any(|&t| t > edge) {
            return Err(no_stop(axis, n_cut, x_max));
        }
        return Ok(sol);
    }
    let i = axis - 1;
    let level = (0..m.n_regimes())
        .filter_map(|r| {
            let p = m.cost.p1[r].max(0.0) * (i == 0) as u8 as f64 + m.cost.p2[r].max(0.0) * (i == 1) as u8 as f64;
            let k = m.cost.kappa[r];
            (p > 0.0).then(|| (k / p).max(0.0))
        })
        .fold(0.0, f64::max);
    let mut b = (2.0 * level).max(1.0).max(16.0 * spec.x_min);
    for _ in 0..=spec.max_doublings {
        let sol = solve_fixed(m, axis, n_cut, log_grid(spec.x_min, b, spec.n), psor)?;
        if sol.thresholds.iter().all(|&t| t <= 0.5 * b) {
            return solve_fixed(m, axis, n_cut, log_grid(spec.x_min, 4.0 * b, spec.n), psor);
        }
        b *= 2.0;
    }
    Err(no_stop(axis, n_cut, b))
}

fn no_stop(axis: usize, n_cut: f64, x_max: f64) -> Error {
    Error::NoStoppingRegion {
        axis,
        reason: format!(
            "no interior threshold up to x_max = {x_max:e} with N = {n_cut:e}; \
             enlarge the grid, or raise N if the cutoff binds below x_max"
        ),
    }
}

pub fn solve_axis_problem(m: &ModelSpec, axis: usize, cutoff: Cutoff, spec: &AxisGridSpec, psor: &PsorParams) -> Result<AxisSolution> {
    if axis != 1 && axis != 2 {
        return invalid(format!("axis must be 1 or 2, got {axis}"));
    }
    m.validate_shape()?;
    m.require_a1()?;
    psor.validate()?;
    if !(spec.x_min > 0.0) || spec.n < 4 {
        return invalid("axis grid needs x_min > 0 and at least 4 nodes");
    }
    if let Some(x) = spec.x_max {
        if !(x > spec.x_min) {
            return invalid(format!("x_max {x} must exceed x_min {}", spec.x_min));
        }
    }
    match cutoff {
        Cutoff::Finite(n) if !(n > 0.0) => invalid(format!("cutoff N must be > 0, got {n}")),
        Cutoff::Finite(n) => solve_with_search(m, axis, n, spec, psor),
        Cutoff::Infinite => solve_with_search(m, axis, f64::INFINITY, spec, psor),
        Cutoff::Auto => {
            let mut n = 10.0 * m.h_min().abs().max(0.1);
            let mut prev = solve_with_search(m, axis, n, spec, psor)?;
            for _ in 0..30 {
                n *= 2.0;
                let next = solve_with_search(m, axis, n, spec, psor)?;
                let stable = prev
                    .thresholds
                    .iter()
                    .zip(&next.thresholds)
                    .all(|(&a, &b)| (a - b).abs() < cell_width(&next.grid, b));
                if stable {
                    return Ok(next);
                }
                prev = next;
            }
            Err(Error::NotConverged {
                solver: "cutoff doubling",
                iterations: 30,
                residual: n,
            })
        }
    }
}

impl AxisSolution {
    pub fn regimes(&self) -> usize {
        self.values.len()
    }

    pub fn max_threshold(&self) -> f64 {
        self.thresholds.iter().copied().fold(0.0, f64::max)
    }

    /// Piecewise-linear value profile, 0 from the threshold on.
    pub fn profile(&self, regime: usize) -> AxisProfile<'_> {
        AxisProfile { sol: self, regime }
    }

    /// CSV with columns `x, regime, value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,regime,value")?;
        for r in 0..self.regimes() {
            for (x, v) in self.grid.iter().zip(&self.values[r]) {
                writeln!(w, "{x},{r},{v}")?;
            }
        }
        Ok(())
    }
}

/// Edge data for the 2-D solver.
pub fn axis_dirichlet_data(sol: &AxisSolution, regime: usize) -> AxisProfile<'_> {
    sol.profile(regime)
}

#[derive(Clone, Copy)]
pub struct AxisProfile<'a> {
    sol: &'a AxisSolution,
    regime: usize,
}

impl AxisProfile<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.sol.grid;
        let v = &self.sol.values[self.regime];
        if x >= self.sol.thresholds[self.regime] || x >= g[g.len() - 1] {
            return 0.0;
        }
        if x <= g[0] {
            return v[0];
        }
        let k = g.partition_point(|&s| s <= x);
        let t = (x - g[k - 1]) / (g[k] - g[k - 1]);
        (1.0 - t) * v[k - 1] + t * v[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::detection_like;
    use crate::model::CostSpec;
    use crate::regimes::GeneratorMatrix;

    fn acceptance() -> ModelSpec {
        detection_like(GeneratorMatrix::two_state(1.0, 1.0), 1.0, 0.5, &[1.0, 2.0], [0.5, 0.5], 1.0)
    }

    fn single(mu: f64) -> ModelSpec {
        detection_like(GeneratorMatrix::zero(1), 1.0, 0.5, &[mu], [1.0, 1.0], 1.0)
    }

    #[test]
    fn nonnegative_cost_stops_at_once() {
        let mut m = acceptance();
        m.cost = CostSpec::uniform(2, 0.5, 0.5, 0.0);
        let s = solve_axis_problem(&m, 1, Cutoff::Finite(10.0), &AxisGridSpec::default(), &PsorParams::default()).unwrap();
        assert!(s.values.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(s.thresholds, vec![s.grid[0]; 2]);
        assert_eq!(s.sweeps, 1);
    }

    #[test]
    fn invariants_on_acceptance_config() {
        let m = acceptance();
        let s = solve_axis_problem(&m, 1, Cutoff::Auto, &AxisGridSpec::default(), &PsorParams::default()).unwrap();
        assert!(s.residual <= 1e-8);
        for r in 0..2 {
            let v = &s.values[r];
            assert!(v.iter().all(|&w| w <= 0.0));
            for k in 1..v.len() {
                assert!(v[k] >= v[k - 1] - 1e-9, "monotone at {k}");
            }
            for k in 1..v.len() - 1 {
                let g = &s.grid;
                let (hm, hp) = (g[k] - g[k - 1], g[k + 1] - g[k]);
                let chord = (hp * v[k - 1] + hm * v[k + 1]) / (hm + hp);
                assert!(v[k] >= chord - 1e-6, "concave at {k}: {} < {chord}", v[k]);
            }
            let t = s.thresholds[r];
            assert!(t.is_finite() && t < *s.grid.last().unwrap());
            assert!(m.cost.at(r, [t, 0.0]) >= -1e-9, "H at threshold");
            let k = s.grid.iter().position(|&x| x == t).unwrap();
            assert!(v[k..].iter().all(|&w| w == 0.0));
        }
        // A faster-moving likelihood in regime 1 changes where stopping pays.
        assert_ne!(s.thresholds[0], s.thresholds[1]);
    }

    #[test]
    fn thresholds_decrease_as_n_grows() {
        let m = acceptance();
        let spec = AxisGridSpec {
            x_max: Some(40.0),
            ..AxisGridSpec::default()
        };
        let psor = PsorParams::default();
        let th: Vec<Vec<f64>> = [0.25, 0.5, 1.0, 4.0, 100.0]
            .iter()
            .map(|&n| solve_axis_problem(&m, 2, Cutoff::Finite(n), &spec, &psor).unwrap().thresholds)
            .collect();
        for w in th.windows(2) {
            for r in 0..2 {
                assert!(w[0][r] >= w[1][r], "{th:?}");
            }
        }
        assert!(th[0][0] > th[4][0]);
    }

    #[test]
    fn profile_interpolates() {
        let m = acceptance();
        let s = solve_axis_problem(&m, 1, Cutoff::Finite(20.0), &AxisGridSpec::default(), &PsorParams::default()).unwrap();
        let p = axis_dirichlet_data(&s, 0);
        assert_eq!(p.eval(s.grid[7]), s.values[0][7]);
        assert_eq!(p.eval(s.thresholds[0] * 1.01), 0.0);
        let mid = 0.5 * (s.grid[10] + s.grid[11]);
        let want = 0.5 * (s.values[0][10] + s.values[0][11]);
        assert!((p.eval(mid) - want).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let m = acceptance();
        let g = AxisGridSpec::default();
        let p = PsorParams::default();
        assert!(solve_axis_problem(&m, 3, Cutoff::Auto, &g, &p).is_err());
        assert!(solve_axis_problem(&m, 1, Cutoff::Finite(0.0), &g, &p).is_err());
        let tiny = AxisGridSpec {
            x_max: Some(0.5),
            ..g
        };
        assert!(matches!(
            solve_axis_problem(&m, 1, Cutoff::Finite(10.0), &tiny, &p),
            Err(Error::NoStoppingRegion { axis: 1, .. })
        ));
        let few = PsorParams {
            max_sweeps: 3,
            ..p
        };
        assert!(matches!(
            solve_axis_problem(&m, 1, Cutoff::Finite(10.0), &g, &few),
            Err(Error::NotConverged { .. })
        ));
        let _ = single(1.0);
    }
}
