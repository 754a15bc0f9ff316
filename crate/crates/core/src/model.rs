//! Coefficients of the switching SDE
//!
//! ```text
//! dX^i = (a^i(α) + Σ_j b^{ij}(α) X^j) dt + σ^i(α) X^i dW^i,   i = 1, 2
//! ```
//!
//! together with per-regime discount rates λ(α) and the affine running cost
//! `H(ι, x) = p1·x1 + p2·x2 − kappa`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::regimes::{validate_generator, GeneratorMatrix};

/// Running cost interface. The solvers only instantiate [`CostSpec`]; other
/// concave, coordinate-wise increasing costs can implement this.
pub trait RunningCost: Send + Sync {
    fn eval(&self, regime: usize, x: [f64; 2]) -> f64;

    /// Least `x2 >= 0` with `H(ι, (x1, x2)) >= 0`, if one exists.
    fn zero_level_x2(&self, regime: usize, x1: f64) -> Option<f64>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    #[default]
    Affine,
}

/// `H(ι, x) = p1[ι]·x1 + p2[ι]·x2 − kappa[ι]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(default)]
    pub kind: CostKind,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl CostSpec {
    pub fn uniform(n: usize, p1: f64, p2: f64, kappa: f64) -> Self {
        Self {
            kind: CostKind::Affine,
            p1: vec![p1; n],
            p2: vec![p2; n],
            kappa: vec![kappa; n],
        }
    }

    #[inline]
    pub fn at(&self, regime: usize, x: [f64; 2]) -> f64 {
        self.p1[regime] * x[0] + self.p2[regime] * x[1] - self.kappa[regime]
    }

    /// Least `x1 >= 0` where the cost on the first axis is nonnegative.
    pub fn zero_level_x1(&self, regime: usize, x2: f64) -> Option<f64> {
        level(self.p1[regime], self.p2[regime] * x2 - self.kappa[regime])
    }
}

fn level(slope: f64, offset: f64) -> Option<f64> {
    // slope * z + offset >= 0
    if offset >= 0.0 {
        Some(0.0)
    } else if slope > 0.0 {
        Some(-offset / slope)
    } else {
        None
    }
}

impl RunningCost for CostSpec {
    fn eval(&self, regime: usize, x: [f64; 2]) -> f64 {
        self.at(regime, x)
    }

    fn zero_level_x2(&self, regime: usize, x1: f64) -> Option<f64> {
        level(self.p2[regime], self.p1[regime] * x1 - self.kappa[regime])
    }
}

/// Model coefficients, one entry per regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "Q")]
    pub q: GeneratorMatrix,
    /// Drift intercepts `a^i(ι)`.
    pub a: Vec<[f64; 2]>,
    /// Drift slopes `b^{ij}(ι)`, row `i` is the equation for `X^i`.
    #[serde(rename = "B")]
    pub b: Vec<[[f64; 2]; 2]>,
    pub sigma: Vec<[f64; 2]>,
    pub lambda: Vec<f64>,
    pub cost: CostSpec,
}

/// Outcome of one assumption check.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Check {
    Pass,
    Fail(Vec<String>),
    /// Only the sufficient condition was tested and it did not hold.
    NotCertified(Vec<String>),
}

impl Check {
    pub fn passed(&self) -> bool {
        matches!(self, Check::Pass)
    }

    fn from_failures(f: Vec<String>) -> Self {
        if f.is_empty() {
            Check::Pass
        } else {
            Check::Fail(f)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub generator: Check,
    /// Positivity and nondegeneracy of the coefficients.
    pub a1: Check,
    /// Concave, Lipschitz, increasing cost with unbounded growth on both axes.
    pub a2: Check,
    /// Recurrence of the axis diffusions, via `a^i > 0` and `b^{ii} >= 0`.
    pub a3: Check,
    /// `min_ι H(ι, 0) < 0`; otherwise stopping at once is optimal.
    pub nontrivial: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.generator.passed() && self.a1.passed() && self.a2.passed() && self.a3.passed()
    }
}

impl ModelSpec {
    pub fn n_regimes(&self) -> usize {
        self.q.n()
    }

    /// Shape consistency across the per-regime arrays.
    pub fn validate_shape(&self) -> Result<()> {
        let n = self.q.n();
        let lens = [
            ("a", self.a.len()),
            ("B", self.b.len()),
            ("sigma", self.sigma.len()),
            ("lambda", self.lambda.len()),
            ("cost.p1", self.cost.p1.len()),
            ("cost.p2", self.cost.p2.len()),
            ("cost.kappa", self.cost.kappa.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return invalid(format!("{name} has {len} entries, expected {n}"));
            }
        }
        Ok(())
    }

    pub fn check_assumptions(&self) -> AssumptionReport {
        let generator = {
            let r = validate_generator(&self.q);
            Check::from_failures(r.violations.iter().map(|v| format!("Q: {v:?}")).collect())
        };
        if let Err(e) = self.validate_shape() {
            let f = Check::Fail(vec![e.to_string()]);
            return AssumptionReport {
                generator,
                a1: f.clone(),
                a2: f.clone(),
                a3: f,
                nontrivial: false,
            };
        }

        let mut a1 = Vec::new();
        let mut a2 = Vec::new();
        let mut a3 = Vec::new();
        for r in 0..self.n_regimes() {
            if !(self.lambda[r] > 0.0) {
                a1.push(format!("lambda[{r}] = {} must be > 0", self.lambda[r]));
            }
            for i in 0..2 {
                if !(self.a[r][i] >= 0.0) {
                    a1.push(format!("a[{r}][{i}] = {} must be >= 0", self.a[r][i]));
                }
                if self.sigma[r][i] == 0.0 || !self.sigma[r][i].is_finite() {
                    a1.push(format!("sigma[{r}][{i}] = {} must be nonzero", self.sigma[r][i]));
                }
                let j = 1 - i;
                if !(self.b[r][i][j] >= 0.0) {
                    a1.push(format!("B[{r}][{i}][{j}] = {} must be >= 0", self.b[r][i][j]));
                }
                if !(self.a[r][i] > 0.0) {
                    a3.push(format!("a[{r}][{i}] = {} is not > 0", self.a[r][i]));
                }
                if !(self.b[r][i][i] >= 0.0) {
                    a3.push(format!("B[{r}][{i}][{i}] = {} is not >= 0", self.b[r][i][i]));
                }
            }
            if !(self.cost.p1[r] > 0.0) {
                a2.push(format!("cost.p1[{r}] = {} must be > 0", self.cost.p1[r]));
            }
            if !(self.cost.p2[r] > 0.0) {
                a2.push(format!("cost.p2[{r}] = {} must be > 0", self.cost.p2[r]));
            }
            if !self.cost.kappa[r].is_finite() {
                a2.push(format!("cost.kappa[{r}] is not finite"));
            }
        }
        AssumptionReport {
            generator,
            a1: Check::from_failures(a1),
            a2: Check::from_failures(a2),
            a3: if a3.is_empty() {
                Check::Pass
            } else {
                Check::NotCertified(a3)
            },
            nontrivial: self.h_min() < 0.0,
        }
    }

    /// Errors unless the generator and the coefficient conditions hold.
    pub fn require_a1(&self) -> Result<()> {
        let r = self.check_assumptions();
        for (name, c) in [("generator", &r.generator), ("A1", &r.a1)] {
            if let Check::Fail(f) = c {
                return Err(Error::Assumption(format!("{name}: {}", f.join("; "))));
            }
        }
        Ok(())
    }

    pub fn eval_cost(&self, regime: usize, x: [f64; 2]) -> Result<f64> {
        if x[0] < 0.0 || x[1] < 0.0 {
            return invalid(format!("cost evaluated at negative state {x:?}"));
        }
        self.regime_in_range(regime)?;
        Ok(self.cost.at(regime, x))
    }

    /// `min(H(ι, x), N)`.
    pub fn cutoff_cost(&self, cutoff: f64, regime: usize, x: [f64; 2]) -> Result<f64> {
        if !(cutoff > 0.0) {
            return invalid(format!("cutoff N must be > 0, got {cutoff}"));
        }
        Ok(self.eval_cost(regime, x)?.min(cutoff))
    }

    fn regime_in_range(&self, regime: usize) -> Result<()> {
        if regime >= self.n_regimes() {
            return invalid(format!("regime {regime} out of range"));
        }
        Ok(())
    }

    /// `min_ι H(ι, (0, 0))`.
    pub fn h_min(&self) -> f64 {
        (0..self.n_regimes())
            .map(|r| self.cost.at(r, [0.0, 0.0]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn a_min(&self, axis: usize) -> f64 {
        self.a.iter().map(|a| a[axis]).fold(f64::INFINITY, f64::min)
    }

    /// `Some(λ0)` when every regime shares the same discount rate.
    pub fn constant_lambda(&self) -> Option<f64> {
        let l0 = self.lambda[0];
        self.lambda.iter().all(|&l| l == l0).then_some(l0)
    }

    pub fn require_constant_lambda(&self) -> Result<f64> {
        self.constant_lambda()
            .ok_or_else(|| Error::NonConstantDiscount(self.lambda.clone()))
    }

    /// Least `x2 >= 0` with nonnegative cost at `(x1, x2)` in `regime`.
    pub fn zero_level_x2(&self, regime: usize, x1: f64) -> Option<f64> {
        self.cost.zero_level_x2(regime, x1)
    }
}
