//! The modulating continuous-time Markov chain: generator matrices and exact
//! event-driven path sampling.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::CounterRng;

const ROW_SUM_TOL: f64 = 1e-12;

/// Transition-rate matrix `Q` of the regime chain (row-major, rates per unit time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct GeneratorMatrix {
    n: usize,
    rates: Vec<f64>,
}

/// One violated generator constraint.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorViolation {
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
    NonFinite { row: usize, col: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub violations: Vec<GeneratorViolation>,
}

impl GeneratorReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl GeneratorMatrix {
    /// Builds a square matrix. Only the shape is checked here; use
    /// [`validate_generator`] for the rate constraints.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return invalid("generator needs at least one regime");
        }
        if rows.iter().any(|r| r.len() != n) {
            return invalid(format!("generator must be {n}x{n}"));
        }
        Ok(Self {
            n,
            rates: rows.into_iter().flatten().collect(),
        })
    }

    /// Builds and validates in one go.
    pub fn checked(rows: Vec<Vec<f64>>) -> Result<Self> {
        let q = Self::new(rows)?;
        let report = validate_generator(&q);
        if !report.passed() {
            return invalid(format!("invalid generator: {:?}", report.violations));
        }
        Ok(q)
    }

    /// The zero generator on `n` regimes (every state absorbing).
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            rates: vec![0.0; n * n],
        }
    }

    /// Symmetric two-state generator with switching rate `rate`.
    pub fn two_state(rate01: f64, rate10: f64) -> Self {
        Self {
            n: 2,
            rates: vec![-rate01, rate01, rate10, -rate10],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[from * self.n + to]
    }

    /// Total exit rate `-q_ii`.
    #[inline]
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rate(i, i)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.rates.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for GeneratorMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<GeneratorMatrix> for Vec<Vec<f64>> {
    fn from(q: GeneratorMatrix) -> Self {
        q.rows()
    }
}

/// Checks `q_ij >= 0` off the diagonal and zero row sums.
pub fn validate_generator(q: &GeneratorMatrix) -> GeneratorReport {
    let mut violations = Vec::new();
    for i in 0..q.n {
        let mut sum = 0.0;
        for j in 0..q.n {
            let v = q.rate(i, j);
            if !v.is_finite() {
                violations.push(GeneratorViolation::NonFinite { row: i, col: j });
                continue;
            }
            if i != j && v < 0.0 {
                violations.push(GeneratorViolation::NegativeOffDiagonal {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if sum.is_finite() && sum.abs() > ROW_SUM_TOL {
            violations.push(GeneratorViolation::RowSum { row: i, sum });
        }
    }
    GeneratorReport { violations }
}

/// A càdlàg regime trajectory on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimePath {
    pub initial_state: usize,
    /// `(time, new_state)` with strictly increasing times, all `<= horizon`.
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl RegimePath {
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self {
            initial_state: state,
            jumps: Vec::new(),
            horizon,
        }
    }

    /// Right-continuous evaluation: at a jump time the post-jump state is returned.
    pub fn regime_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.regime_at_unchecked(t))
    }

    #[inline]
    pub(crate) fn regime_at_unchecked(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.initial_state
        } else {
            self.jumps[k - 1].1
        }
    }

    /// Time spent in `state` over the whole horizon.
    pub fn occupation(&self, state: usize) -> f64 {
        let mut t0 = 0.0;
        let mut cur = self.initial_state;
        let mut acc = 0.0;
        for &(t, s) in &self.jumps {
            if cur == state {
                acc += t - t0;
            }
            t0 = t;
            cur = s;
        }
        if cur == state {
            acc += self.horizon - t0;
        }
        acc
    }
}

/// Lazily samples the jump chain one holding time ahead, so callers that do
/// not know their horizon in advance (stopped estimators) can consume it.
#[derive(Clone, Debug)]
pub struct RegimeSampler {
    state: usize,
    next_time: f64,
    next_state: usize,
}

impl RegimeSampler {
    pub fn new(q: &GeneratorMatrix, initial_state: usize, rng: &mut CounterRng) -> Self {
        let mut s = Self {
            state: initial_state,
            next_time: 0.0,
            next_state: initial_state,
        };
        s.draw(q, rng);
        s
    }

    fn draw(&mut self, q: &GeneratorMatrix, rng: &mut CounterRng) {
        let rate = q.exit_rate(self.state);
        if rate <= 0.0 {
            self.next_time = f64::INFINITY;
            self.next_state = self.state;
            return;
        }
        self.next_time += rng.exp1() / rate;
        let target = rng.uniform() * rate;
        let mut acc = 0.0;
        for j in 0..q.n() {
            if j == self.state {
                continue;
            }
            acc += q.rate(self.state, j);
            self.next_state = j;
            if target < acc {
                break;
            }
        }
    }

    #[inline]
    pub fn state(&self) -> usize {
        self.state
    }

    /// Time of the next jump, infinite for an absorbing state.
    #[inline]
    pub fn next_jump_time(&self) -> f64 {
        self.next_time
    }

    /// Perform the pending jump and return `(time, new_state)`.
    pub fn advance(&mut self, q: &GeneratorMatrix, rng: &mut CounterRng) -> (f64, usize) {
        let jump = (self.next_time, self.next_state);
        self.state = self.next_state;
        self.draw(q, rng);
        jump
    }
}

/// Exact simulation: exponential holding times with rate `-q_ii`, then the
/// embedded jump chain with probabilities `q_ij / -q_ii`. A state with zero exit
/// rate is absorbing for the rest of the horizon.
pub fn sample_regime_path(
    q: &GeneratorMatrix,
    initial_state: usize,
    horizon: f64,
    rng: &mut CounterRng,
) -> Result<RegimePath> {
    if initial_state >= q.n() {
        return invalid(format!(
            "initial regime {initial_state} out of range for {} regimes",
            q.n()
        ));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return invalid(format!("horizon must be positive and finite, got {horizon}"));
    }
    debug_assert!(validate_generator(q).passed());

    let mut sampler = RegimeSampler::new(q, initial_state, rng);
    let mut jumps = Vec::new();
    while sampler.next_jump_time() <= horizon {
        jumps.push(sampler.advance(q, rng));
    }
    Ok(RegimePath {
        initial_state,
        jumps,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;
    use crate::stats::Welford;

    #[test]
    fn validation_examples() {
        let ok = GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert!(validate_generator(&ok).passed());
        assert!(validate_generator(&GeneratorMatrix::zero(2)).passed());

        let bad = GeneratorMatrix::new(vec![vec![-1.0, 0.5], vec![1.0, -1.0]]).unwrap();
        let r = validate_generator(&bad);
        assert_eq!(r.violations.len(), 1);
        match &r.violations[0] {
            GeneratorViolation::RowSum { row, sum } => {
                assert_eq!(*row, 0);
                assert!((sum + 0.5).abs() < 1e-15);
            }
            v => panic!("unexpected {v:?}"),
        }

        let neg = GeneratorMatrix::new(vec![vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            validate_generator(&neg).violations[0],
            GeneratorViolation::NegativeOffDiagonal { row: 0, col: 1, .. }
        ));
    }

    #[test]
    fn shape_errors() {
        assert!(GeneratorMatrix::new(vec![]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![0.0, 0.0], vec![0.0]]).is_err());
    }

    #[test]
    fn json_round_trip_uses_nested_rows() {
        let q = GeneratorMatrix::two_state(2.0, 3.0);
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, "[[-2.0,2.0],[3.0,-3.0]]");
        let back: GeneratorMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn absorbing_chain_never_jumps() {
        let mut rng = CounterRng::new(3, Domain::Regime, 0);
        let p = sample_regime_path(&GeneratorMatrix::zero(2), 1, 10.0, &mut rng).unwrap();
        assert!(p.jumps.is_empty());
        assert_eq!(p.regime_at(10.0).unwrap(), 1);
    }

    #[test]
    fn regime_at_is_right_continuous() {
        let p = RegimePath {
            initial_state: 0,
            jumps: vec![(1.0, 1)],
            horizon: 2.0,
        };
        assert_eq!(p.regime_at(0.5).unwrap(), 0);
        assert_eq!(p.regime_at(1.0).unwrap(), 1);
        assert_eq!(p.regime_at(1.5).unwrap(), 1);
        assert!(matches!(p.regime_at(2.5), Err(Error::OutOfHorizon { .. })));
        assert!(p.regime_at(-0.1).is_err());
    }

    #[test]
    fn first_holding_time_is_exp1() {
        let q = GeneratorMatrix::two_state(1.0, 1.0);
        let mut w = Welford::new();
        for k in 0..100_000u64 {
            let mut rng = CounterRng::new(11, Domain::Regime, k);
            let p = sample_regime_path(&q, 0, 1e3, &mut rng).unwrap();
            w.push(p.jumps[0].0);
        }
        let z = (w.mean() - 1.0).abs() / w.std_error();
        assert!(z < 3.0, "mean {} se {}", w.mean(), w.std_error());
    }

    #[test]
    fn long_run_occupation_matches_stationary_law() {
        // pi Q = 0 for Q = [[-2,2],[3,-3]] gives pi = (3/5, 2/5).
        let q = GeneratorMatrix::two_state(2.0, 3.0);
        let horizon = 1e3;
        let mut w = Welford::new();
        for k in 0..200u64 {
            let mut rng = CounterRng::new(5, Domain::Regime, k);
            let p = sample_regime_path(&q, 0, horizon, &mut rng).unwrap();
            w.push(p.occupation(0) / horizon);
        }
        let z = (w.mean() - 0.6).abs() / w.std_error();
        assert!(z < 3.0, "fraction {} se {}", w.mean(), w.std_error());
    }

    #[test]
    fn replay_is_bit_identical() {
        let q = GeneratorMatrix::two_state(1.5, 0.5);
        let a = sample_regime_path(&q, 0, 50.0, &mut CounterRng::new(9, Domain::Regime, 4)).unwrap();
        let b = sample_regime_path(&q, 0, 50.0, &mut CounterRng::new(9, Domain::Regime, 4)).unwrap();
        assert_eq!(a, b);
    }
}
