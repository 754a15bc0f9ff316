//! Finite-difference solver for the 2-D coupled variational inequality
//! `min(𝕃w − λ w + H^N, −w) = 0`, boundary extraction and smooth-fit
//! diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::boundary::{Boundary, Curve};
use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;
use crate::onedim::{log_grid, AxisSolution, PsorParams, Stencil};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nodes1: Vec<f64>,
    pub nodes2: Vec<f64>,
}

impl Grid2D {
    pub fn new(nodes1: Vec<f64>, nodes2: Vec<f64>) -> Result<Self> {
        for (name, v) in [("nodes1", &nodes1), ("nodes2", &nodes2)] {
            if v.len() < 16 {
                return invalid(format!("{name} needs at least 16 nodes, got {}", v.len()));
            }
            if !(v[0] > 0.0) || v.windows(2).any(|w| !(w[1] > w[0])) {
                return invalid(format!("{name} must be positive and strictly increasing"));
            }
        }
        Ok(Self { nodes1, nodes2 })
    }

    /// Log-spaced box `[x_min, far]²` with `far = far_factor · max(x̄¹, x̄²)`.
    pub fn from_axes(axes: [&AxisSolution; 2], n1: usize, n2: usize, x_min: f64, far_factor: f64) -> Result<Self> {
        let far = far_factor * axes[0].max_threshold().max(axes[1].max_threshold());
        if !(far > x_min) {
            return invalid(format!("far edge {far} does not exceed x_min {x_min}"));
        }
        Self::new(log_grid(x_min, far, n1), log_grid(x_min, far, n2))
    }

    pub fn n1(&self) -> usize {
        self.nodes1.len()
    }

    pub fn n2(&self) -> usize {
        self.nodes2.len()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nodes2.len() + j
    }
}

/// Data on the edges `x1 = x_min` and `x2 = x_min`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinEdge {
    /// One-sided upwind drift with the vanishing diffusion dropped; no data.
    #[default]
    Natural,
    /// Dirichlet data from the axis problems.
    AxisDirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HjbParams {
    pub n1: usize,
    pub n2: usize,
    pub x_min: f64,
    /// Far edge as a multiple of the largest axis threshold.
    pub far_factor: f64,
    /// Cutoff level `N`; `None` solves with the untruncated cost.
    pub cutoff: Option<f64>,
    pub min_edge: MinEdge,
    /// Nodes with `w >= -extract_tol` count as stopping nodes in extraction.
    pub extract_tol: f64,
}

impl Default for HjbParams {
    fn default() -> Self {
        Self {
            n1: 64,
            n2: 64,
            x_min: 1e-3,
            far_factor: 2.0,
            cutoff: None,
            min_edge: MinEdge::Natural,
            extract_tol: 1e-8,
        }
    }
}

impl HjbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_min > 0.0 && self.far_factor > 1.0 && self.extract_tol > 0.0) {
            return invalid("HJB grid needs x_min > 0, far_factor > 1 and extract_tol > 0");
        }
        if matches!(self.cutoff, Some(n) if !(n > 0.0)) {
            return invalid("cutoff N must be > 0");
        }
        Ok(())
    }

    pub fn grid(&self, axes: [&AxisSolution; 2]) -> Result<Grid2D> {
        Grid2D::from_axes(axes, self.n1, self.n2, self.x_min, self.far_factor)
    }
}

/// Grid from the parameters, then [`solve_vi`].
pub fn solve_hjb(m: &ModelSpec, axes: [&AxisSolution; 2], p: &HjbParams, psor: &PsorParams) -> Result<ValueField> {
    p.validate()?;
    let grid = p.grid(axes)?;
    solve_vi(m, p.cutoff.unwrap_or(f64::INFINITY), &grid, axes, p.min_edge, psor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: Grid2D,
    /// `w[ι][grid.idx(i, j)]`.
    pub w: Vec<Vec<f64>>,
    pub cutoff_n: f64,
    pub residual: f64,
    pub sweeps: usize,
}

#[derive(Clone, Copy)]
struct Node {
    cm1: f64,
    cp1: f64,
    cm2: f64,
    cp2: f64,
    diag: f64,
    h: f64,
    omega: f64,
    fixed: bool,
}

struct Problem<'a> {
    m: &'a ModelSpec,
    grid: &'a Grid2D,
    nodes: Vec<Vec<Node>>,
}

impl<'a> Problem<'a> {
    fn new(m: &'a ModelSpec, grid: &'a Grid2D, n_cut: f64, min_edge: MinEdge, omega: f64) -> Self {
        let (n1, n2) = (grid.n1(), grid.n2());
        let nodes = (0..m.n_regimes())
            .map(|r| {
                let mut v = Vec::with_capacity(n1 * n2);
                for i in 0..n1 {
                    for j in 0..n2 {
                        let (x1, x2) = (grid.nodes1[i], grid.nodes2[j]);
                        let far = i + 1 == n1 || j + 1 == n2;
                        let edge = min_edge == MinEdge::AxisDirichlet && (i == 0 || j == 0);
                        if far || edge {
                            v.push(Node {
                                cm1: 0.0,
                                cp1: 0.0,
                                cm2: 0.0,
                                cp2: 0.0,
                                diag: 1.0,
                                h: 0.0,
                                omega: 1.0,
                                fixed: true,
                            });
                            continue;
                        }
                        let d1 = m.a[r][0] + m.b[r][0][0] * x1 + m.b[r][0][1] * x2;
                        let d2 = m.a[r][1] + m.b[r][1][0] * x1 + m.b[r][1][1] * x2;
                        let s1 = Stencil::new(&grid.nodes1, i, d1, 0.5 * (m.sigma[r][0] * x1).powi(2));
                        let s2 = Stencil::new(&grid.nodes2, j, d2, 0.5 * (m.sigma[r][1] * x2).powi(2));
                        let tot = s1.cm + s1.cp + s2.cm + s2.cp;
                        let diffusive = if tot > 0.0 {
                            (s1.diffusive * (s1.cm + s1.cp) + s2.diffusive * (s2.cm + s2.cp)) / tot
                        } else {
                            0.0
                        };
                        v.push(Node {
                            cm1: s1.cm,
                            cp1: s1.cp,
                            cm2: s2.cm,
                            cp2: s2.cp,
                            diag: tot + m.q.exit_rate(r) + m.lambda[r],
                            h: m.cost.at(r, [x1, x2]).min(n_cut),
                            omega: 1.0 + (omega - 1.0) * diffusive,
                            fixed: false,
                        });
                    }
                }
                v
            })
            .collect();
        Self { m, grid, nodes }
    }

    /// `𝕃w − λw + H^N` at a free node.
    #[inline]
    fn operator(&self, w: &[Vec<f64>], r: usize, i: usize, j: usize) -> f64 {
        let n2 = self.grid.n2();
        let k = i * n2 + j;
        let nd = &self.nodes[r][k];
        let wr = &w[r];
        let mut s = nd.h - nd.diag * wr[k] + nd.cp1 * wr[k + n2] + nd.cp2 * wr[k + 1];
        if i > 0 {
            s += nd.cm1 * wr[k - n2];
        }
        if j > 0 {
            s += nd.cm2 * wr[k - 1];
        }
        for (q, wq) in w.iter().enumerate() {
            if q != r {
                s += self.m.q.rate(r, q) * wq[k];
            }
        }
        s
    }

    fn residual(&self, w: &[Vec<f64>]) -> f64 {
        let mut res = 0.0f64;
        for r in 0..w.len() {
            for i in 0..self.grid.n1() {
                for j in 0..self.grid.n2() {
                    let k = self.grid.idx(i, j);
                    if !self.nodes[r][k].fixed {
                        res = res.max(self.operator(w, r, i, j).min(-w[r][k]).abs());
                    }
                }
            }
        }
        res
    }
}

/// Solve the discretized variational inequality by projected SOR. Sweeps run
/// in decreasing index order, which is the upwind direction for the
/// nonnegative drifts admitted by the model.
pub fn solve_vi(
    m: &ModelSpec,
    cutoff_n: f64,
    grid: &Grid2D,
    axes: [&AxisSolution; 2],
    min_edge: MinEdge,
    psor: &PsorParams,
) -> Result<ValueField> {
    m.validate_shape()?;
    m.require_a1()?;
    psor.validate()?;
    if !(cutoff_n > 0.0) {
        return invalid(format!("cutoff N must be > 0, got {cutoff_n}"));
    }
    let (n1, n2) = (grid.n1(), grid.n2());
    let far1 = grid.nodes1[n1 - 1];
    let far2 = grid.nodes2[n2 - 1];
    let x_min = grid.nodes1[0].min(grid.nodes2[0]);
    for r in 0..m.n_regimes() {
        for x in [[far1, x_min], [x_min, far2]] {
            let h = m.cost.at(r, x);
            if h < 0.0 {
                return Err(Error::FarEdgeNotStopping(format!(
                    "H(regime {r}, {x:?}) = {h} < 0; enlarge the grid"
                )));
            }
        }
    }

    let p = Problem::new(m, grid, cutoff_n, min_edge, psor.omega);
    let mut w = vec![vec![0.0; n1 * n2]; m.n_regimes()];
    if min_edge == MinEdge::AxisDirichlet {
        for (r, wr) in w.iter_mut().enumerate() {
            let (e1, e2) = (axes[0].profile(r), axes[1].profile(r));
            for i in 0..n1 - 1 {
                wr[grid.idx(i, 0)] = e1.eval(grid.nodes1[i]);
            }
            for j in 0..n2 - 1 {
                wr[grid.idx(0, j)] = e2.eval(grid.nodes2[j]);
            }
        }
    }

    let mut sweeps = 0;
    loop {
        let mut change = 0.0f64;
        for r in 0..w.len() {
            for i in (0..n1 - 1).rev() {
                for j in (0..n2 - 1).rev() {
                    let k = i * n2 + j;
                    let nd = p.nodes[r][k];
                    if nd.fixed {
                        continue;
                    }
                    let old = w[r][k];
                    let new = (old + nd.omega * p.operator(&w, r, i, j) / nd.diag).min(0.0);
                    change = change.max((new - old).abs());
                    w[r][k] = new;
                }
            }
        }
        sweeps += 1;
        if change == 0.0 || (sweeps % 16 == 0 && change < psor.tol) {
            let res = p.residual(&w);
            if res <= psor.tol {
                let field = ValueField {
                    grid: grid.clone(),
                    w,
                    cutoff_n,
                    residual: res,
                    sweeps,
                };
                field.check_far_edges(psor.value_tol)?;
                return Ok(field);
            }
        }
        if sweeps >= psor.max_sweeps {
            return Err(Error::NotConverged {
                solver: "2-D PSOR",
                iterations: sweeps,
                residual: p.residual(&w),
            });
        }
    }
}

impl ValueField {
    pub fn n_regimes(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn at(&self, regime: usize, i: usize, j: usize) -> f64 {
        self.w[regime][self.grid.idx(i, j)]
    }

    /// Bilinear interpolation, constant beyond the grid.
    pub fn interpolate(&self, regime: usize, x: [f64; 2]) -> f64 {
        let locate = |nodes: &[f64], v: f64| -> (usize, f64) {
            let n = nodes.len();
            if v <= nodes[0] {
                return (0, 0.0);
            }
            if v >= nodes[n - 1] {
                return (n - 2, 1.0);
            }
            let k = nodes.partition_point(|&s| s <= v) - 1;
            (k, (v - nodes[k]) / (nodes[k + 1] - nodes[k]))
        };
        let (i, s) = locate(&self.grid.nodes1, x[0]);
        let (j, t) = locate(&self.grid.nodes2, x[1]);
        let w = |a, b| self.at(regime, a, b);
        (1.0 - s) * ((1.0 - t) * w(i, j) + t * w(i, j + 1)) + s * ((1.0 - t) * w(i + 1, j) + t * w(i + 1, j + 1))
    }

    /// The nodes next to the far edges must already be stopping nodes,
    /// otherwise the zero data there is not justified.
    fn check_far_edges(&self, tol: f64) -> Result<()> {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        for r in 0..self.n_regimes() {
            for i in 0..n1 {
                if self.at(r, i, n2 - 2) < -tol {
                    return Err(Error::FarEdgeNotStopping(format!(
                        "regime {r} continues at x = ({}, {})",
                        self.grid.nodes1[i],
                        self.grid.nodes2[n2 - 2]
                    )));
                }
            }
            for j in 0..n2 {
                if self.at(r, n1 - 2, j) < -tol {
                    return Err(Error::FarEdgeNotStopping(format!(
                        "regime {r} continues at x = ({}, {})",
                        self.grid.nodes1[n1 - 2],
                        self.grid.nodes2[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// `𝕃w − λw + H^N` at an interior node, evaluated with the scheme's
    /// stencil. Used for residual diagnostics.
    pub fn pde_residual(&self, m: &ModelSpec, regime: usize, i: usize, j: usize) -> f64 {
        let p = Problem::new(m, &self.grid, self.cutoff_n, MinEdge::Natural, 1.0);
        p.operator(&self.w, regime, i, j)
    }

    /// Nodes that stop in some regimes and continue in others, with the
    /// stopping mask per regime.
    pub fn transition_nodes(&self, tol: f64) -> Vec<(usize, usize, Vec<bool>)> {
        let mut out = Vec::new();
        for i in 0..self.grid.n1() {
            for j in 0..self.grid.n2() {
                let mask: Vec<bool> = (0..self.n_regimes()).map(|r| self.at(r, i, j) >= -tol).collect();
                if mask.iter().any(|&s| s) && mask.iter().any(|&s| !s) {
                    out.push((i, j, mask));
                }
            }
        }
        out
    }

    /// CSV with columns `x1, x2, regime, w`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x1,x2,regime,w")?;
        for r in 0..self.n_regimes() {
            for (i, x1) in self.grid.nodes1.iter().enumerate() {
                for (j, x2) in self.grid.nodes2.iter().enumerate() {
                    writeln!(out, "{x1},{x2},{r},{}", self.at(r, i, j))?;
                }
            }
        }
        Ok(())
    }
}

/// First `x2` node index with `w >= -tol` in column `i`.
fn first_stop(field: &ValueField, regime: usize, i: usize, tol: f64) -> usize {
    (0..field.grid.n2())
        .find(|&j| field.at(regime, i, j) >= -tol)
        .unwrap_or(field.grid.n2() - 1)
}

/// For each `x1` node, the crossing of the stopping level in `x2`, clipped to
/// 0 where the first node already stops.
///
/// Near the boundary `w ≈ −c·(b − x2)²` (smooth fit), so the crossing is
/// located by extending the line through `√(−w)` at the two continuation
/// nodes below the first stopping node. The result always lies between the
/// last continuation node and the first stopping node.
pub fn extract_boundary(field: &ValueField, regime: usize, tol: f64) -> Curve {
    let g = &field.grid;
    let b = (0..g.n1())
        .map(|i| {
            let j = first_stop(field, regime, i, tol);
            if j == 0 {
                return 0.0;
            }
            let (lo, hi) = (g.nodes2[j - 1], g.nodes2[j]);
            let s1 = (-field.at(regime, i, j - 1) - tol).max(0.0).sqrt();
            let (x0, s0) = if j >= 2 {
                (g.nodes2[j - 2], (-field.at(regime, i, j - 2) - tol).max(0.0).sqrt())
            } else {
                (hi, 0.0)
            };
            if s0 > s1 && j >= 2 {
                (lo + s1 * (lo - x0) / (s0 - s1)).clamp(lo, hi)
            } else {
                // Flat or first cell: fall back to linear interpolation in w.
                let (wa, wb) = (field.at(regime, i, j - 1), field.at(regime, i, j));
                let t = ((-tol - wa) / (wb - wa)).clamp(0.0, 1.0);
                let _ = x0;
                lo + t * (hi - lo)
            }
        })
        .collect();
    Curve {
        x1: g.nodes1.clone(),
        b,
    }
}

pub fn extract_boundaries(field: &ValueField, tol: f64) -> Boundary {
    Boundary {
        curves: (0..field.n_regimes()).map(|r| extract_boundary(field, r, tol)).collect(),
    }
}

/// Largest one-sided `∂₂w` just below the stopping boundary, over the
/// columns whose boundary lies above the first node. The derivative above
/// the boundary is zero, so this is the jump in `∂₂w` across it.
pub fn smooth_fit_gap(field: &ValueField, regime: usize, tol: f64) -> f64 {
    let g = &field.grid;
    (0..g.n1())
        .filter_map(|i| {
            let j = first_stop(field, regime, i, tol);
            (j >= 1).then(|| (field.at(regime, i, j) - field.at(regime, i, j - 1)) / (g.nodes2[j] - g.nodes2[j - 1]))
        })
        .fold(0.0, f64::max)
}
