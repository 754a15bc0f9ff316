//! Euler–Maruyama simulation of `(α, X)` with exact regime breakpoints.
//!
//! The time grid is the union of the uniform `dt` grid and the jump times of
//! α. Coefficients are frozen at the regime in force on each step, negative
//! overshoots are clamped to zero, and `Λ_t = ∫ λ(α_s) ds` is accumulated
//! exactly since λ is piecewise constant.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelSpec;
use crate::regimes::RegimeSampler;
use crate::rng::{CounterRng, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub substream: u64,
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return invalid(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.dt > self.horizon {
            return invalid(format!("dt {} exceeds horizon {}", self.dt, self.horizon));
        }
        Ok(())
    }
}

/// One Euler step from `t0` to `t1`. `regime` is in force on `[t0, t1)`;
/// `next_regime` is the right-continuous value at `t1`.
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub regime: usize,
    pub next_regime: usize,
    pub x0: [f64; 2],
    pub x1: [f64; 2],
    pub lambda0: f64,
    pub lambda1: f64,
}

/// Streaming simulator for one path. Draws depend only on
/// `(seed, substream)`, never on how far the caller runs it, so estimators
/// that stop early see a prefix of the same path.
pub struct Stepper<'a> {
    m: &'a ModelSpec,
    dt: f64,
    regime_rng: CounterRng,
    bm_rng: CounterRng,
    sampler: RegimeSampler,
    k: u64,
    t: f64,
    x: [f64; 2],
    lambda: f64,
    clamps: u64,
    steps: u64,
}

impl<'a> Stepper<'a> {
    /// No validation: callers check assumptions once per batch.
    pub fn new(m: &'a ModelSpec, regime: usize, x0: [f64; 2], dt: f64, seed: u64, substream: u64) -> Self {
        let mut regime_rng = CounterRng::new(seed, Domain::Regime, substream);
        let sampler = RegimeSampler::new(&m.q, regime, &mut regime_rng);
        Self {
            m,
            dt,
            regime_rng,
            bm_rng: CounterRng::new(seed, Domain::Brownian, substream),
            sampler,
            k: 0,
            t: 0.0,
            x: x0,
            lambda: 0.0,
            clamps: 0,
            steps: 0,
        }
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn x(&self) -> [f64; 2] {
        self.x
    }

    #[inline]
    pub fn regime(&self) -> usize {
        self.sampler.state()
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamps
    }

    pub fn step_count(&self) -> u64 {
        self.steps
    }

    /// Advance to the next grid point, which is the next multiple of `dt`,
    /// the next regime jump, or `t_stop`, whichever comes first.
    #[inline]
    pub fn step_until(&mut self, t_stop: f64) -> Step {
        let m = self.m;
        let grid_next = (self.k + 1) as f64 * self.dt;
        let jump = self.sampler.next_jump_time();
        let t1 = grid_next.min(jump).min(t_stop);
        let h = t1 - self.t;
        let r = self.sampler.state();

        let x0 = self.x;
        let sq = h.max(0.0).sqrt();
        let mut x1 = [0.0; 2];
        for i in 0..2 {
            let drift = m.a[r][i] + m.b[r][i][0] * x0[0] + m.b[r][i][1] * x0[1];
            let z = self.bm_rng.normal();
            let v = x0[i] + drift * h + m.sigma[r][i] * x0[i] * sq * z;
            x1[i] = if v < 0.0 {
                self.clamps += 1;
                0.0
            } else {
                v
            };
        }
        let lambda0 = self.lambda;
        self.lambda += m.lambda[r] * h;

        if t1 >= grid_next {
            self.k += 1;
        }
        if t1 >= jump {
            self.sampler.advance(&m.q, &mut self.regime_rng);
        }
        self.t = t1;
        self.x = x1;
        self.steps += 1;
        Step {
            t0: t1 - h,
            t1,
            regime: r,
            next_regime: self.sampler.state(),
            x0,
            x1,
            lambda0,
            lambda1: self.lambda,
        }
    }

    #[inline]
    pub fn step(&mut self) -> Step {
        self.step_until(f64::INFINITY)
    }
}

/// A stored trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub regimes: Vec<usize>,
    pub x: Vec<[f64; 2]>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<f64>,
    pub clamp_count: u64,
    pub steps: u64,
}

impl SamplePath {
    /// CSV with columns `t, regime, x1, x2, Lambda`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,regime,x1,x2,Lambda")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.times[k], self.regimes[k], self.x[k][0], self.x[k][1], self.lambda[k]
            )?;
        }
        Ok(())
    }
}

fn check_start(m: &ModelSpec, regime: usize, x0: [f64; 2]) -> Result<()> {
    m.validate_shape()?;
    if regime >= m.n_regimes() {
        return invalid(format!("initial regime {regime} out of range"));
    }
    if !(x0[0] >= 0.0 && x0[1] >= 0.0) || !x0[0].is_finite() || !x0[1].is_finite() {
        return invalid(format!("initial state must be finite and >= 0, got {x0:?}"));
    }
    Ok(())
}

pub fn simulate_path(m: &ModelSpec, regime: usize, x0: [f64; 2], cfg: &PathConfig) -> Result<SamplePath> {
    m.require_a1()?;
    simulate_path_unchecked(m, regime, x0, cfg)
}

/// [`simulate_path`] without the coefficient assumptions, for degenerate
/// test models such as `σ = 0`.
pub fn simulate_path_unchecked(m: &ModelSpec, regime: usize, x0: [f64; 2], cfg: &PathConfig) -> Result<SamplePath> {
    cfg.validate()?;
    check_start(m, regime, x0)?;
    let mut s = Stepper::new(m, regime, x0, cfg.dt, cfg.seed, cfg.substream);
    let cap = (cfg.horizon / cfg.dt).ceil() as usize + 2;
    let mut p = SamplePath {
        times: Vec::with_capacity(cap),
        regimes: Vec::with_capacity(cap),
        x: Vec::with_capacity(cap),
        lambda: Vec::with_capacity(cap),
        clamp_count: 0,
        steps: 0,
    };
    p.times.push(0.0);
    p.regimes.push(regime);
    p.x.push(x0);
    p.lambda.push(0.0);
    while s.t() < cfg.horizon {
        let st = s.step_until(cfg.horizon);
        p.times.push(st.t1);
        p.regimes.push(st.next_regime);
        p.x.push(st.x1);
        p.lambda.push(st.lambda1);
    }
    p.clamp_count = s.clamp_count();
    p.steps = s.step_count();
    Ok(p)
}

/// Two paths from `x0 <= y0` driven by the same Brownian increments and the
/// same regime path.
pub fn simulate_coupled(
    m: &ModelSpec,
    regime: usize,
    x0: [f64; 2],
    y0: [f64; 2],
    cfg: &PathConfig,
) -> Result<(SamplePath, SamplePath)> {
    if !(x0[0] <= y0[0] && x0[1] <= y0[1]) {
        return invalid(format!("coupled starts must satisfy x0 <= y0, got {x0:?} and {y0:?}"));
    }
    Ok((simulate_path(m, regime, x0, cfg)?, simulate_path(m, regime, y0, cfg)?))
}

/// `e^{-Λ_t}` at a stored grid time.
pub fn discount_at(path: &SamplePath, t: f64) -> Result<f64> {
    let k = path.times.partition_point(|&s| s < t);
    let hit = |i: usize| path.times.get(i).is_some_and(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0));
    let idx = if hit(k) {
        k
    } else if k > 0 && hit(k - 1) {
        k - 1
    } else {
        return Err(Error::NotOnGrid { t });
    };
    Ok((-path.lambda[idx]).exp())
}

/// Run `f` on path indices `0..n` in parallel and return results in index
/// order, so downstream reductions do not depend on the schedule.
pub fn par_paths<T: Send>(n: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::detection_like;
    use crate::model::CostSpec;
    use crate::regimes::GeneratorMatrix;
    use crate::stats::Welford;

    fn cfg(dt: f64, horizon: f64, substream: u64) -> PathConfig {
        PathConfig {
            dt,
            horizon,
            seed: 11,
            substream,
        }
    }

    fn acceptance() -> ModelSpec {
        detection_like(GeneratorMatrix::two_state(1.0, 1.0), 1.0, 0.5, &[1.0, 2.0], [0.5, 0.5], 1.0)
    }

    #[test]
    fn deterministic_ode_limit() {
        let m = ModelSpec {
            q: GeneratorMatrix::zero(1),
            a: vec![[1.0, 1.0]],
            b: vec![[[0.0; 2]; 2]],
            sigma: vec![[0.0, 0.0]],
            lambda: vec![1.0],
            cost: CostSpec::uniform(1, 1.0, 1.0, 1.0),
        };
        assert!(simulate_path(&m, 0, [0.0, 0.0], &cfg(0.01, 2.0, 0)).is_err());
        let p = simulate_path_unchecked(&m, 0, [0.0, 0.0], &cfg(0.01, 2.0, 0)).unwrap();
        let last = *p.x.last().unwrap();
        assert!((last[0] - 2.0).abs() < 1e-12 && (last[1] - 2.0).abs() < 1e-12);
        assert_eq!(*p.times.last().unwrap(), 2.0);
    }

    #[test]
    fn origin_is_absorbing_without_intercept() {
        let mut m = acceptance();
        m.a = vec![[0.0, 0.0]; 2];
        let p = simulate_path(&m, 0, [0.0, 0.0], &cfg(1e-2, 3.0, 4)).unwrap();
        assert!(p.x.iter().all(|x| *x == [0.0, 0.0]));
    }

    #[test]
    fn grid_contains_jumps_and_lambda_is_exact() {
        let mut m = acceptance();
        m.lambda = vec![1.0, 2.0];
        let p = simulate_path(&m, 0, [1.0, 1.0], &cfg(0.1, 5.0, 9)).unwrap();
        let mut expect = 0.0;
        for k in 1..p.times.len() {
            assert!(p.times[k] > p.times[k - 1]);
            let r = p.regimes[k - 1];
            expect += m.lambda[r] * (p.times[k] - p.times[k - 1]);
            assert!((p.lambda[k] - expect).abs() < 1e-12);
            assert!(p.x[k][0] >= 0.0 && p.x[k][1] >= 0.0);
        }
        // The regime path is sampled independently of the Euler grid.
        let mut rng = CounterRng::new(11, Domain::Regime, 9);
        let rp = crate::regimes::sample_regime_path(&m.q, 0, 5.0, &mut rng).unwrap();
        assert!(!rp.jumps.is_empty());
        for (t, s) in rp.jumps {
            let k = p.times.iter().position(|&u| u == t).expect("jump time on grid");
            assert_eq!(p.regimes[k], s);
        }
    }

    #[test]
    fn discount_examples() {
        let mut m = acceptance();
        m.q = GeneratorMatrix::zero(2);
        let p = simulate_path(&m, 0, [1.0, 1.0], &cfg(0.25, 1.0, 0)).unwrap();
        assert_eq!(discount_at(&p, 0.0).unwrap(), 1.0);
        assert!((discount_at(&p, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(discount_at(&p, 0.3), Err(Error::NotOnGrid { .. })));

        let hand = SamplePath {
            times: vec![0.0, 0.5, 1.0],
            regimes: vec![0, 1, 1],
            x: vec![[1.0, 1.0]; 3],
            lambda: vec![0.0, 0.5, 1.5],
            clamp_count: 0,
            steps: 2,
        };
        assert!((discount_at(&hand, 1.0).unwrap() - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mean_matches_linear_ode() {
        let mut m = acceptance();
        m.q = GeneratorMatrix::zero(2);
        let (lam, g) = (1.0f64, 0.5f64);
        let k = lam / (lam + g);
        let exact = (1.0 + k) * (lam + g).exp() - k;
        let mean_at = |dt: f64| -> Welford {
            par_paths(100_000, |i| {
                let mut s = Stepper::new(&m, 0, [1.0, 1.0], dt, 21, i);
                while s.t() < 1.0 - 1e-12 {
                    s.step_until(1.0);
                }
                s.x()[0]
            })
            .into_iter()
            .collect()
        };
        let coarse = mean_at(2e-3);
        let fine = mean_at(1e-3);
        assert!((fine.mean() - exact).abs() < 3.0 * fine.std_error(), "{} vs {exact}", fine.mean());
        assert!((coarse.mean() - fine.mean()).abs() < 3.0 * coarse.std_error());
    }

    #[test]
    fn coupled_paths_stay_ordered() {
        let m = acceptance();
        let c = cfg(1e-3, 2.0, 0);
        assert!(simulate_coupled(&m, 0, [1.0, 1.0], [0.5, 2.0], &c).is_err());
        let (a, b) = simulate_coupled(&m, 1, [0.7, 0.7], [0.7, 0.7], &c).unwrap();
        assert_eq!(a, b);
        let violations: usize = par_paths(200, |i| {
            let c = PathConfig { substream: i, ..c };
            let (x, y) = simulate_coupled(&m, (i % 2) as usize, [0.5, 0.5], [1.0, 1.0], &c).unwrap();
            let (u, v) = simulate_coupled(&m, 0, [0.5, 0.5], [0.5, 1.5], &c).unwrap();
            let bad = |p: &SamplePath, q: &SamplePath| {
                p.x.iter().zip(&q.x).filter(|(a, b)| a[0] > b[0] || a[1] > b[1]).count()
            };
            bad(&x, &y) + bad(&u, &v)
        })
        .into_iter()
        .sum();
        assert_eq!(violations, 0);
    }

    #[test]
    fn clamping_is_rare_at_fine_dt() {
        let m = acceptance();
        let (c, n) = par_paths(200, |i| {
            let p = simulate_path(&m, 0, [0.01, 0.01], &cfg(1e-3, 2.0, i)).unwrap();
            (p.clamp_count, p.steps)
        })
        .into_iter()
        .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
        assert!((c as f64) / (n as f64) < 1e-3);
    }

    #[test]
    fn seed_and_substream_determine_the_path() {
        let m = acceptance();
        let a = simulate_path(&m, 0, [1.0, 2.0], &cfg(1e-2, 3.0, 5)).unwrap();
        let b = simulate_path(&m, 0, [1.0, 2.0], &cfg(1e-2, 3.0, 5)).unwrap();
        let c = simulate_path(&m, 0, [1.0, 2.0], &cfg(1e-2, 3.0, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,regime,x1,x2,Lambda\n0,0,1,2,0\n"));
    }

    #[test]
    fn config_errors() {
        let m = acceptance();
        assert!(simulate_path(&m, 0, [1.0, 1.0], &cfg(0.0, 1.0, 0)).is_err());
        assert!(simulate_path(&m, 0, [1.0, 1.0], &cfg(2.0, 1.0, 0)).is_err());
        assert!(simulate_path(&m, 0, [-1.0, 1.0], &cfg(0.1, 1.0, 0)).is_err());
        assert!(simulate_path(&m, 5, [1.0, 1.0], &cfg(0.1, 1.0, 0)).is_err());
    }
}
