//! Quickest detection of a regime-modulated drift in one of two observed
//! coordinates, reduced to the stopping problem on the weighted likelihood
//! ratios `(Φ, Ψ)`.
//!
//! Scenarios are simulated under the physical measure (the drift switches on
//! at `θ` in coordinate `β`). `risk_via_statistics` instead drives the
//! statistics with driftless increments, which is the reference measure the
//! Bayes risk is rewritten under.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::error::{invalid, Error, Result};
use crate::model::{CostSpec, ModelSpec};
use crate::regimes::{validate_generator, GeneratorMatrix, RegimeSampler};
use crate::rng::{CounterRng, Domain};
use crate::simulate::par_paths;
use crate::stats::{Summary, Welford};
use crate::value::{estimate_value_stopped, McConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    #[serde(rename = "Q")]
    pub q: GeneratorMatrix,
    /// Rate of the exponential part of the prior on `θ`; also the discount.
    pub lambda: f64,
    /// Exponent of the delay penalty `F(t) = e^{γt} − 1`.
    pub gamma: f64,
    /// Delay cost weight.
    pub c: f64,
    /// Drift per regime once the change has happened.
    pub mu: Vec<f64>,
    pub p1: f64,
    pub p2: f64,
    /// Prior mass of `θ = 0`.
    pub pi: f64,
    #[serde(default)]
    pub initial_regime: usize,
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let rep = validate_generator(&self.q);
        if !rep.passed() {
            return invalid(format!("generator matrix rejected: {:?}", rep.violations));
        }
        if self.mu.len() != self.q.n() {
            return invalid(format!("mu has {} entries for {} regimes", self.mu.len(), self.q.n()));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return invalid("mu must be finite");
        }
        if !(self.lambda > 0.0 && self.gamma > 0.0 && self.c > 0.0) {
            return invalid("lambda, gamma and c must be positive");
        }
        if !(self.p1 >= 0.0 && self.p2 >= 0.0) || (self.p1 + self.p2 - 1.0).abs() > 1e-12 {
            return invalid(format!("p1, p2 must be >= 0 and sum to 1, got {} + {}", self.p1, self.p2));
        }
        if !(0.0..1.0).contains(&self.pi) {
            return invalid(format!("pi must lie in [0, 1), got {}", self.pi));
        }
        if self.initial_regime >= self.q.n() {
            return invalid("initial regime out of range");
        }
        Ok(())
    }

    /// Starting value `π/(1−π)` of both statistics.
    pub fn initial_ratio(&self) -> f64 {
        self.pi / (1.0 - self.pi)
    }

    pub fn kappa(&self) -> f64 {
        self.lambda / (self.c * self.gamma)
    }
}

/// The stopping problem solved by the optimal detection rule.
pub fn to_osp_model(cfg: &DetectionConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let n = cfg.mu.len();
    let (lam, g) = (cfg.lambda, cfg.gamma);
    Ok(ModelSpec {
        q: cfg.q.clone(),
        a: vec![[lam, lam]; n],
        b: vec![[[lam + g, 0.0], [0.0, lam + g]]; n],
        sigma: cfg.mu.iter().map(|&m| [m, m]).collect(),
        lambda: vec![lam; n],
        cost: CostSpec::uniform(n, cfg.p1, cfg.p2, cfg.kappa()),
    })
}

/// One observation interval `[t − dt, t]` with the regime in force on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub t: f64,
    pub dt: f64,
    pub regime: usize,
    pub dx: [f64; 2],
}

/// Observation record of one simulated change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub theta: f64,
    /// Index (0 or 1) of the coordinate that acquires the drift.
    pub beta: usize,
    pub initial_regime: usize,
    pub increments: Vec<Increment>,
    pub horizon: f64,
}

/// `θ`: an atom at zero of mass `π`, otherwise `Exp(λ)`.
pub fn sample_theta(cfg: &DetectionConfig, rng: &mut CounterRng) -> f64 {
    if rng.uniform() < cfg.pi {
        0.0
    } else {
        rng.exp1() / cfg.lambda
    }
}

fn sample_beta(cfg: &DetectionConfig, rng: &mut CounterRng) -> usize {
    if rng.uniform() < cfg.p1 {
        0
    } else {
        1
    }
}

/// Streams observation increments on the `dt` grid refined by the regime
/// jumps. With `change = None` the increments are driftless.
struct Observer<'a> {
    cfg: &'a DetectionConfig,
    dt: f64,
    regime_rng: CounterRng,
    bm_rng: CounterRng,
    sampler: RegimeSampler,
    change: Option<(f64, usize)>,
    k: u64,
    t: f64,
}

impl<'a> Observer<'a> {
    fn new(cfg: &'a DetectionConfig, dt: f64, seed: u64, substream: u64, change: Option<(f64, usize)>) -> Self {
        let mut regime_rng = CounterRng::new(seed, Domain::Regime, substream);
        let sampler = RegimeSampler::new(&cfg.q, cfg.initial_regime, &mut regime_rng);
        Self {
            cfg,
            dt,
            regime_rng,
            bm_rng: CounterRng::new(seed, Domain::Brownian, substream),
            sampler,
            change,
            k: 0,
            t: 0.0,
        }
    }

    /// Next increment up to `t_stop`, and the regime in force after it.
    fn next(&mut self, t_stop: f64) -> (Increment, usize) {
        let grid_next = (self.k + 1) as f64 * self.dt;
        let jump = self.sampler.next_jump_time();
        let t1 = grid_next.min(jump).min(t_stop);
        let h = t1 - self.t;
        let r = self.sampler.state();
        let sq = h.sqrt();
        let mut dx = [sq * self.bm_rng.normal(), sq * self.bm_rng.normal()];
        if let Some((theta, beta)) = self.change {
            let on = (t1 - theta.max(self.t)).max(0.0);
            dx[beta] += self.cfg.mu[r] * on;
        }
        if t1 >= grid_next {
            self.k += 1;
        }
        if t1 >= jump {
            self.sampler.advance(&self.cfg.q, &mut self.regime_rng);
        }
        self.t = t1;
        (Increment { t: t1, dt: h, regime: r, dx }, self.sampler.state())
    }
}

fn scenario_seeds(seed: u64) -> (u64, u64) {
    (CounterRng::derive_seed(seed, "prior"), CounterRng::derive_seed(seed, "observations"))
}

fn draw_change(cfg: &DetectionConfig, prior_seed: u64, substream: u64) -> (f64, usize) {
    let mut rng = CounterRng::new(prior_seed, Domain::Prior, substream);
    let theta = sample_theta(cfg, &mut rng);
    (theta, sample_beta(cfg, &mut rng))
}

/// A full scenario on `[0, horizon]`: `θ`, `β`, the regime path and the
/// observed increments, all independent.
pub fn simulate_scenario(cfg: &DetectionConfig, horizon: f64, dt: f64, seed: u64, substream: u64) -> Result<Scenario> {
    cfg.validate()?;
    if !(dt > 0.0 && horizon > 0.0) {
        return invalid("dt and horizon must be positive");
    }
    let (prior_seed, obs_seed) = scenario_seeds(seed);
    let (theta, beta) = draw_change(cfg, prior_seed, substream);
    let mut obs = Observer::new(cfg, dt, obs_seed, substream, Some((theta, beta)));
    let mut increments = Vec::with_capacity((horizon / dt).ceil() as usize + 8);
    while obs.t < horizon {
        increments.push(obs.next(horizon).0);
    }
    Ok(Scenario {
        theta,
        beta,
        initial_regime: cfg.initial_regime,
        increments,
        horizon,
    })
}

impl Scenario {
    /// Replay format: `t, regime, dx1, dx2` with `t` the end of the interval.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,regime,dx1,dx2")?;
        for inc in &self.increments {
            writeln!(w, "{},{},{},{}", inc.t, inc.regime, inc.dx[0], inc.dx[1])?;
        }
        Ok(())
    }

    /// Observations only; `θ` and `β` are unknown on replay and set to NaN / 0.
    /// Blank lines, `#` comments and the header row are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut increments = Vec::new();
        let mut t0 = 0.0;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("t,") {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::InvalidInput(format!("malformed replay row {}: '{line}'", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let t: f64 = f[0].parse().map_err(|_| bad())?;
            let regime: usize = f[1].parse().map_err(|_| bad())?;
            let dx = [f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?];
            if !(t > t0) {
                return invalid(format!("replay times must increase (row {})", i + 1));
            }
            increments.push(Increment { t, dt: t - t0, regime, dx });
            t0 = t;
        }
        let initial_regime = increments.first().map_or(0, |i| i.regime);
        Ok(Self {
            theta: f64::NAN,
            beta: 0,
            initial_regime,
            increments,
            horizon: t0,
        })
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-likelihoods and the two weighted likelihood ratios, held in logs.
/// `log_odds` runs the same recursion with `γ = 0`, which gives the
/// posterior odds of a change having happened.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub t: f64,
    pub log_l: [f64; 2],
    pub log_stat: [f64; 2],
    pub log_odds: [f64; 2],
}

impl SufficientStats {
    pub fn new(cfg: &DetectionConfig) -> Self {
        let r0 = cfg.initial_ratio().ln();
        Self {
            t: 0.0,
            log_l: [0.0; 2],
            log_stat: [r0; 2],
            log_odds: [r0; 2],
        }
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.log_stat[0].exp()
    }

    #[inline]
    pub fn psi(&self) -> f64 {
        self.log_stat[1].exp()
    }

    #[inline]
    pub fn point(&self) -> [f64; 2] {
        [self.phi(), self.psi()]
    }

    /// `P(θ <= t | observations, β = i)`; a diagnostic, not used by the rule.
    pub fn posterior(&self) -> [f64; 2] {
        self.log_odds.map(|l| 1.0 / (1.0 + (-l).exp()))
    }
}

/// `S_{t+h} = g S_t + λh(g + 1)/2` with `g = e^{ρh} L_{t+h}/L_t`: exact
/// propagation of the first term, trapezoid rule on the integral.
#[inline]
fn propagate(log_s: f64, log_g: f64, lam: f64, h: f64) -> f64 {
    let src = (0.5 * lam * h).ln() + log_add_exp(log_g, 0.0);
    log_add_exp(log_g + log_s, src)
}

pub fn update_stats(cfg: &DetectionConfig, s: &SufficientStats, regime: usize, dx: [f64; 2], dt: f64) -> Result<SufficientStats> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if !dx[0].is_finite() || !dx[1].is_finite() {
        return Err(Error::NonFinite(format!("increment {dx:?}")));
    }
    let mu = cfg.mu[regime];
    let mut out = *s;
    out.t += dt;
    for i in 0..2 {
        let dlog_l = mu * dx[i] - 0.5 * mu * mu * dt;
        out.log_l[i] += dlog_l;
        out.log_stat[i] = propagate(s.log_stat[i], (cfg.lambda + cfg.gamma) * dt + dlog_l, cfg.lambda, dt);
        out.log_odds[i] = propagate(s.log_odds[i], cfg.lambda * dt + dlog_l, cfg.lambda, dt);
    }
    Ok(out)
}

/// Euler step of `dS = [λ + (λ+γ)S]dt + μ S dX`.
#[inline]
pub fn euler_filter_step(cfg: &DetectionConfig, s: [f64; 2], regime: usize, dx: [f64; 2], dt: f64) -> [f64; 2] {
    let mu = cfg.mu[regime];
    let rho = cfg.lambda + cfg.gamma;
    [0, 1].map(|i| s[i] + (cfg.lambda + rho * s[i]) * dt + mu * s[i] * dx[i])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub tau: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
    #[serde(rename = "Psi")]
    pub psi: f64,
    pub regime: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorRun {
    pub alarm: Option<Alarm>,
    /// `(t, regime after t, Φ, Ψ)` at every observation time up to the alarm.
    pub trace: Vec<(f64, usize, f64, f64)>,
}

/// First observation time with `Ψ >= b_α(Φ)`, using the regime in force
/// from that time on.
pub fn run_detector(cfg: &DetectionConfig, b: &Boundary, scenario: &Scenario) -> Result<DetectorRun> {
    cfg.validate()?;
    if b.n_regimes() != cfg.q.n() {
        return invalid("boundary has the wrong number of regimes");
    }
    let mut s = SufficientStats::new(cfg);
    let mut regime = scenario.initial_regime;
    let mut trace = vec![(0.0, regime, s.phi(), s.psi())];
    let alarm = |s: &SufficientStats, regime| Alarm {
        tau: s.t,
        phi: s.phi(),
        psi: s.psi(),
        regime,
    };
    if b.stops(regime, s.point()) {
        return Ok(DetectorRun {
            alarm: Some(alarm(&s, regime)),
            trace,
        });
    }
    let incs = &scenario.increments;
    for (k, inc) in incs.iter().enumerate() {
        s = update_stats(cfg, &s, inc.regime, inc.dx, inc.dt)?;
        s.t = inc.t;
        regime = incs.get(k + 1).map_or(inc.regime, |n| n.regime);
        trace.push((s.t, regime, s.phi(), s.psi()));
        if b.stops(regime, s.point()) {
            return Ok(DetectorRun {
                alarm: Some(alarm(&s, regime)),
                trace,
            });
        }
    }
    Ok(DetectorRun { alarm: None, trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    pub n_paths: u64,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Above this fraction of unalarmed scenarios the delay term is not
    /// estimable and the evaluation errors.
    pub max_unstopped: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-3,
            horizon: 20.0,
            seed: 20240601,
            max_unstopped: 0.01,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 || !(self.dt > 0.0) || !(self.horizon > self.dt) {
            return invalid("risk evaluation needs n_paths >= 2, dt > 0 and horizon > dt");
        }
        if !(0.0..=1.0).contains(&self.max_unstopped) {
            return invalid("max_unstopped must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub false_alarm: Summary,
    pub delay: Summary,
    pub j: Summary,
    pub unstopped_fraction: f64,
    /// Set when some scenarios never alarmed; their delay is counted at the
    /// horizon, so `j` is a lower bound.
    pub lower_bound: bool,
    pub median_tau: Option<f64>,
    /// No simulation was needed (the rule fires at time zero).
    pub exact: bool,
}

impl RiskReport {
    fn immediate(cfg: &DetectionConfig, n: u64) -> Self {
        Self {
            false_alarm: Summary::exact(1.0 - cfg.pi, n),
            delay: Summary::exact(0.0, n),
            j: Summary::exact(1.0 - cfg.pi, n),
            unstopped_fraction: 0.0,
            lower_bound: false,
            median_tau: Some(0.0),
            exact: true,
        }
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    Some(xs[xs.len() / 2])
}

fn check_policy(cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Result<()> {
    cfg.validate()?;
    rc.validate()?;
    if b.n_regimes() != cfg.q.n() {
        return invalid("boundary has the wrong number of regimes");
    }
    Ok(())
}

/// Per scenario `(false alarm, delay cost, τ)` under the physical measure.
fn physical_runs(cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Vec<Result<(f64, f64, Option<f64>)>> {
    let start = SufficientStats::new(cfg);
    let (prior_seed, obs_seed) = scenario_seeds(rc.seed);
    par_paths(rc.n_paths, |i| {
        let change = draw_change(cfg, prior_seed, i);
        let mut obs = Observer::new(cfg, rc.dt, obs_seed, i, Some(change));
        let mut s = start;
        let mut tau = b.stops(cfg.initial_regime, s.point()).then_some(0.0);
        while tau.is_none() && obs.t < rc.horizon {
            let (inc, next) = obs.next(rc.horizon);
            s = update_stats(cfg, &s, inc.regime, inc.dx, inc.dt)?;
            if b.stops(next, s.point()) {
                tau = Some(inc.t);
            }
        }
        // A censored scenario never raises a false alarm; its delay is
        // counted up to the horizon only.
        let t_end = tau.unwrap_or(rc.horizon);
        let theta = change.0;
        let fa = if tau.is_some() && t_end < theta { 1.0 } else { 0.0 };
        let delay = if t_end > theta { cfg.c * (cfg.gamma * (t_end - theta)).exp_m1() } else { 0.0 };
        Ok((fa, delay, tau))
    })
}

/// Bayes risk `P(τ < θ) + c E[(e^{γ(τ−θ)} − 1); τ > θ]` over simulated
/// changes. Unalarmed scenarios are censored at the horizon.
pub fn evaluate_policy(cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Result<RiskReport> {
    check_policy(cfg, b, rc)?;
    if b.stops(cfg.initial_regime, SufficientStats::new(cfg).point()) {
        return Ok(RiskReport::immediate(cfg, rc.n_paths));
    }
    let runs = physical_runs(cfg, b, rc);
    let mut fa = Welford::new();
    let mut delay = Welford::new();
    let mut j = Welford::new();
    let mut taus = Vec::with_capacity(runs.len());
    let mut unstopped = 0u64;
    for r in runs {
        let (a, d, tau) = r?;
        fa.push(a);
        delay.push(d);
        j.push(a + d);
        match tau {
            Some(t) => taus.push(t),
            None => unstopped += 1,
        }
    }
    let unstopped_fraction = unstopped as f64 / rc.n_paths as f64;
    if unstopped_fraction > rc.max_unstopped {
        return Err(Error::Unstopped {
            fraction: unstopped_fraction,
            limit: rc.max_unstopped,
        });
    }
    // Censored scenarios sit above every alarm time for the median.
    taus.extend(std::iter::repeat(f64::INFINITY).take(unstopped as usize));
    Ok(RiskReport {
        false_alarm: fa.summary(),
        delay: delay.summary(),
        j: j.summary(),
        unstopped_fraction,
        lower_bound: unstopped > 0,
        median_tau: median(taus).filter(|m| m.is_finite()),
        exact: false,
    })
}

/// The same risk through `1 − π + cγ(1−π) E ∫_0^τ e^{−λt}(p1Φ + p2Ψ − κ) dt`
/// with the statistics driven by driftless increments.
pub fn risk_via_statistics(cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Result<RiskReport> {
    check_policy(cfg, b, rc)?;
    let start = SufficientStats::new(cfg);
    if b.stops(cfg.initial_regime, start.point()) {
        return Ok(RiskReport::immediate(cfg, rc.n_paths));
    }
    let runs = reference_runs(cfg, b, rc);
    let mut j = Welford::new();
    let mut taus = Vec::with_capacity(runs.len());
    let mut unstopped = 0u64;
    for r in runs {
        let (v, tau) = r?;
        j.push(v);
        match tau {
            Some(t) => taus.push(t),
            None => unstopped += 1,
        }
    }
    let unstopped_fraction = unstopped as f64 / rc.n_paths as f64;
    if unstopped_fraction > rc.max_unstopped {
        return Err(Error::Unstopped {
            fraction: unstopped_fraction,
            limit: rc.max_unstopped,
        });
    }
    taus.extend(std::iter::repeat(f64::INFINITY).take(unstopped as usize));
    let nan = Summary {
        mean: f64::NAN,
        std_error: f64::NAN,
        n: rc.n_paths,
    };
    Ok(RiskReport {
        false_alarm: nan,
        delay: nan,
        j: j.summary(),
        unstopped_fraction,
        lower_bound: unstopped > 0,
        median_tau: median(taus).filter(|m| m.is_finite()),
        exact: false,
    })
}

/// Per path `(J sample, τ)` under the reference measure.
fn reference_runs(cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Vec<Result<(f64, Option<f64>)>> {
    let start = SufficientStats::new(cfg);
    let seed = CounterRng::derive_seed(rc.seed, "reference");
    let kappa = cfg.kappa();
    let scale = cfg.c * cfg.gamma * (1.0 - cfg.pi);
    let f = |s: &SufficientStats| (cfg.p1 * s.phi() + cfg.p2 * s.psi() - kappa) * (-cfg.lambda * s.t).exp();
    par_paths(rc.n_paths, |i| {
        let mut obs = Observer::new(cfg, rc.dt, seed, i, None);
        let mut s = start;
        let mut f0 = f(&s);
        let mut acc = 0.0;
        let mut tau = b.stops(cfg.initial_regime, s.point()).then_some(0.0);
        while tau.is_none() && obs.t < rc.horizon {
            let (inc, next) = obs.next(rc.horizon);
            s = update_stats(cfg, &s, inc.regime, inc.dx, inc.dt)?;
            s.t = inc.t;
            let f1 = f(&s);
            acc += 0.5 * inc.dt * (f0 + f1);
            f0 = f1;
            if b.stops(next, s.point()) {
                tau = Some(inc.t);
            }
        }
        Ok((1.0 - cfg.pi + scale * acc, tau))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Simulated changes, `evaluate_policy`.
    Physical,
    /// Driftless statistics, `risk_via_statistics`.
    Reference,
}

/// `J(a) − J(b)` on common scenarios, with the standard error of the paired
/// differences. Censored scenarios count at the horizon.
pub fn paired_difference(cfg: &DetectionConfig, a: &Boundary, b: &Boundary, rc: &RiskConfig, measure: Measure) -> Result<Summary> {
    check_policy(cfg, a, rc)?;
    check_policy(cfg, b, rc)?;
    let diffs: Vec<Result<f64>> = match measure {
        Measure::Physical => {
            let (ra, rb) = (physical_runs(cfg, a, rc), physical_runs(cfg, b, rc));
            ra.into_iter().zip(rb).map(|(x, y)| Ok(x.map(|v| v.0 + v.1)? - y.map(|v| v.0 + v.1)?)).collect()
        }
        Measure::Reference => {
            let (ra, rb) = (reference_runs(cfg, a, rc), reference_runs(cfg, b, rc));
            ra.into_iter().zip(rb).map(|(x, y)| Ok(x?.0 - y?.0)).collect()
        }
    };
    let mut w = Welford::new();
    for d in diffs {
        w.push(d?);
    }
    Ok(w.summary())
}

/// `(1 − π)(1 + cγ V̂)` with `V̂` the stopped value of the reduced problem at
/// `(π/(1−π), π/(1−π))`.
pub fn risk_via_value(cfg: &DetectionConfig, b: &Boundary, mc: &McConfig) -> Result<Summary> {
    let m = to_osp_model(cfg)?;
    let r0 = cfg.initial_ratio();
    let v = estimate_value_stopped(&m, cfg.initial_regime, [r0, r0], b, mc)?;
    let k = (1.0 - cfg.pi) * cfg.c * cfg.gamma;
    Ok(Summary {
        mean: (1.0 - cfg.pi) + k * v.mean,
        std_error: k * v.std_error,
        n: v.n_paths,
    })
}

/// Sup over `[0, horizon]` of `|S_recursion − S_euler|` (both coordinates),
/// averaged over paths, at step `dt` and at `dt / refine` on the same
/// Brownian and regime paths. Increments are driftless.
pub fn filter_gap(cfg: &DetectionConfig, dt: f64, refine: u64, horizon: f64, n_paths: u64, seed: u64) -> Result<(Summary, Summary)> {
    cfg.validate()?;
    if !(dt > 0.0 && horizon > dt) || refine < 1 {
        return invalid("filter comparison needs dt > 0, horizon > dt and refine >= 1");
    }
    let fine_dt = dt / refine as f64;
    let runs = par_paths(n_paths, |i| -> Result<(f64, f64)> {
        let mut obs = Observer::new(cfg, fine_dt, seed, i, None);
        let start = SufficientStats::new(cfg);
        let r0 = cfg.initial_ratio();
        let (mut fine_s, mut fine_e) = (start, [r0; 2]);
        let (mut coarse_s, mut coarse_e) = (start, [r0; 2]);
        let (mut gap_f, mut gap_c) = (0.0f64, 0.0f64);
        let mut pending = Increment {
            t: 0.0,
            dt: 0.0,
            regime: cfg.initial_regime,
            dx: [0.0; 2],
        };
        let mut n_fine = 0u64;
        while obs.t < horizon {
            let k_before = obs.k;
            let (inc, next) = obs.next(horizon);
            fine_s = update_stats(cfg, &fine_s, inc.regime, inc.dx, inc.dt)?;
            fine_e = euler_filter_step(cfg, fine_e, inc.regime, inc.dx, inc.dt);
            gap_f = gap_f.max(sup_gap(&fine_s, fine_e));

            pending.t = inc.t;
            pending.dt += inc.dt;
            pending.regime = inc.regime;
            pending.dx = [pending.dx[0] + inc.dx[0], pending.dx[1] + inc.dx[1]];
            if obs.k > k_before {
                n_fine += 1;
            }
            let at_coarse_node = obs.k > k_before && n_fine % refine == 0;
            if at_coarse_node || next != inc.regime || obs.t >= horizon {
                coarse_s = update_stats(cfg, &coarse_s, pending.regime, pending.dx, pending.dt)?;
                coarse_e = euler_filter_step(cfg, coarse_e, pending.regime, pending.dx, pending.dt);
                gap_c = gap_c.max(sup_gap(&coarse_s, coarse_e));
                pending.dt = 0.0;
                pending.dx = [0.0; 2];
            }
        }
        Ok((gap_c, gap_f))
    });
    let mut c = Welford::new();
    let mut f = Welford::new();
    for r in runs {
        let (a, b) = r?;
        c.push(a);
        f.push(b);
    }
    Ok((c.summary(), f.summary()))
}

fn sup_gap(s: &SufficientStats, e: [f64; 2]) -> f64 {
    (s.phi() - e[0]).abs().max((s.psi() - e[1]).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::Curve;
    use proptest::prelude::*;

    pub(crate) fn acceptance() -> DetectionConfig {
        DetectionConfig {
            q: GeneratorMatrix::two_state(1.0, 1.0),
            lambda: 1.0,
            gamma: 0.5,
            c: 1.0,
            mu: vec![1.0, 2.0],
            p1: 0.5,
            p2: 0.5,
            pi: 0.2,
            initial_regime: 0,
        }
    }

    #[test]
    fn osp_coefficients() {
        let m = to_osp_model(&acceptance()).unwrap();
        assert_eq!(m.a, vec![[1.0, 1.0]; 2]);
        assert_eq!(m.b[1], [[1.5, 0.0], [0.0, 1.5]]);
        assert_eq!(m.sigma, vec![[1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(m.cost.kappa, vec![2.0, 2.0]);
        assert!(m.check_assumptions().all_pass());

        let big = DetectionConfig { gamma: 1e6, ..acceptance() };
        assert!(to_osp_model(&big).unwrap().cost.kappa.iter().all(|&k| k < 1e-5));
        let one = DetectionConfig { p1: 1.0, p2: 0.0, ..acceptance() };
        let m = to_osp_model(&one).unwrap();
        assert_eq!(m.cost.at(0, [3.0, 0.0]), m.cost.at(0, [3.0, 100.0]));
    }

    #[test]
    fn config_rejections() {
        for bad in [
            DetectionConfig { pi: 1.0, ..acceptance() },
            DetectionConfig { p1: 0.7, ..acceptance() },
            DetectionConfig { gamma: 0.0, ..acceptance() },
            DetectionConfig { mu: vec![1.0], ..acceptance() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidInput(_))), "{bad:?}");
        }
    }

    #[test]
    fn prior_tail() {
        let cfg = acceptance();
        let n = 100_000;
        let w: Welford = (0..n)
            .map(|i| {
                let mut rng = CounterRng::new(5, Domain::Prior, i);
                if sample_theta(&cfg, &mut rng) > 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let exact = 0.8 * (-1.0f64).exp();
        assert!((w.mean() - exact).abs() <= 3.0 * w.std_error(), "{} vs {exact}", w.mean());

        let none = DetectionConfig { pi: 0.0, ..cfg };
        let mut rng = CounterRng::new(5, Domain::Prior, 0);
        assert!((0..1000).all(|_| sample_theta(&none, &mut rng) > 0.0));
    }

    #[test]
    fn closed_form_without_drift() {
        let cfg = DetectionConfig {
            mu: vec![0.0, 0.0],
            pi: 0.0,
            ..acceptance()
        };
        let dt = 1e-3;
        let mut s = SufficientStats::new(&cfg);
        for _ in 0..1000 {
            s = update_stats(&cfg, &s, 0, [0.37, -1.2], dt).unwrap();
        }
        let rho = cfg.lambda + cfg.gamma;
        let exact = cfg.lambda * (rho * 1.0f64).exp_m1() / rho;
        assert!(((s.phi() - exact) / exact).abs() < 1e-4);
        assert!(((s.psi() - exact) / exact).abs() < 1e-4);
    }

    #[test]
    fn tiny_step_leaves_stats_put() {
        let cfg = acceptance();
        let s = SufficientStats::new(&cfg);
        let s1 = update_stats(&cfg, &s, 1, [0.0, 0.0], 1e-12).unwrap();
        assert!((s1.phi() - s.phi()).abs() < 1e-10);
        assert!(matches!(update_stats(&cfg, &s, 0, [f64::NAN, 0.0], 1e-3), Err(Error::NonFinite(_))));
    }

    #[test]
    fn recursion_matches_direct_formula() {
        // Φ_t = e^{ρt} L_t (r + λ ∫ e^{−ρs}/L_s ds) evaluated with the same
        // trapezoid on stored log-likelihoods.
        let cfg = acceptance();
        let sc = simulate_scenario(&cfg, 1.0, 1e-3, 3, 0).unwrap();
        let rho = cfg.lambda + cfg.gamma;
        let mut s = SufficientStats::new(&cfg);
        let (mut log_l, mut integral, mut t) = (0.0f64, 0.0, 0.0);
        for inc in &sc.increments {
            let mu = cfg.mu[inc.regime];
            let before = (-rho * t - log_l).exp();
            log_l += mu * inc.dx[0] - 0.5 * mu * mu * inc.dt;
            t = inc.t;
            integral += 0.5 * inc.dt * (before + (-rho * t - log_l).exp());
            s = update_stats(&cfg, &s, inc.regime, inc.dx, inc.dt).unwrap();
        }
        let direct = (rho * t + log_l).exp() * (cfg.initial_ratio() + cfg.lambda * integral);
        assert!(((s.phi() - direct) / direct).abs() < 1e-10, "{} vs {direct}", s.phi());
    }

    #[test]
    fn zero_drift_observations_are_brownian() {
        let cfg = DetectionConfig {
            mu: vec![0.0, 0.0],
            pi: 0.9,
            ..acceptance()
        };
        let sc = simulate_scenario(&cfg, 2.0, 1e-3, 1, 0).unwrap();
        let reference = {
            let mut o = Observer::new(&cfg, 1e-3, scenario_seeds(1).1, 0, None);
            let mut v = Vec::new();
            while o.t < 2.0 {
                v.push(o.next(2.0).0);
            }
            v
        };
        assert_eq!(sc.increments, reference);
    }

    #[test]
    fn degenerate_policies() {
        let cfg = acceptance();
        let rc = RiskConfig {
            n_paths: 200,
            dt: 1e-2,
            horizon: 2.0,
            max_unstopped: 1.0,
            ..RiskConfig::default()
        };
        let zero = Boundary::zero(2);
        let r = evaluate_policy(&cfg, &zero, &rc).unwrap();
        assert!(r.exact && r.j.mean == 0.8 && r.j.std_error == 0.0);
        assert_eq!(risk_via_statistics(&cfg, &zero, &rc).unwrap().j.mean, 0.8);
        let sc = simulate_scenario(&cfg, 1.0, 1e-2, 0, 0).unwrap();
        assert_eq!(run_detector(&cfg, &zero, &sc).unwrap().alarm.unwrap().tau, 0.0);

        let never = Boundary::constant(2, f64::INFINITY);
        assert!(run_detector(&cfg, &never, &sc).unwrap().alarm.is_none());
        let r = evaluate_policy(&cfg, &never, &rc).unwrap();
        assert!(r.lower_bound && r.unstopped_fraction == 1.0 && r.false_alarm.mean == 0.0);
        let strict = RiskConfig { max_unstopped: 0.01, ..rc };
        assert!(matches!(evaluate_policy(&cfg, &never, &strict), Err(Error::Unstopped { .. })));
    }

    #[test]
    fn replay_roundtrip_gives_same_alarm() {
        let cfg = acceptance();
        let b = Boundary {
            curves: vec![Curve::new(vec![0.0, 4.0], vec![3.0, 0.0]).unwrap(); 2],
        };
        let sc = simulate_scenario(&cfg, 10.0, 1e-3, 11, 2).unwrap();
        let mut buf = Vec::new();
        sc.write_csv(&mut buf).unwrap();
        let back = Scenario::read_csv(std::io::Cursor::new(buf)).unwrap();
        let a = run_detector(&cfg, &b, &sc).unwrap().alarm.unwrap();
        let c = run_detector(&cfg, &b, &back).unwrap().alarm.unwrap();
        assert!((a.tau - c.tau).abs() < 1e-9 && a.regime == c.regime);
        assert!((a.phi - c.phi).abs() <= 1e-6 * a.phi.max(1.0));
    }

    #[test]
    fn euler_gap_shrinks_with_dt() {
        let cfg = acceptance();
        let (coarse, fine) = filter_gap(&cfg, 4e-3, 4, 1.0, 400, 9).unwrap();
        let ratio = coarse.mean / fine.mean;
        assert!(ratio > 1.6 && ratio < 2.6, "ratio {ratio}: {coarse:?} {fine:?}");
    }

    proptest! {
        #[test]
        fn posterior_in_unit_interval(dx in prop::array::uniform2(-0.5f64..0.5), r in 0usize..2, h in 1e-4f64..0.1) {
            let cfg = acceptance();
            let s = update_stats(&cfg, &SufficientStats::new(&cfg), r, dx, h).unwrap();
            for p in s.posterior() {
                prop_assert!(p > 0.0 && p < 1.0);
            }
            prop_assert!(s.phi() > 0.0 && s.psi() > 0.0);
            // γ > 0 weights post-change time up, so Φ exceeds the odds.
            prop_assert!(s.log_stat[0] >= s.log_odds[0]);
        }
    }
}
