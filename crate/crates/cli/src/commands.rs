use std::io::BufReader;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use switchstop::boundary::{Boundary, BoundaryReport, IeSolution};
use switchstop::crosscheck::{CriterionResult, Suite};
use switchstop::detect::{run_detector, simulate_scenario, DetectorRun, RiskReport, Scenario};
use switchstop::hjb::{smooth_fit_gap, solve_hjb};
use switchstop::model::{AssumptionReport, ModelSpec};
use switchstop::onedim::{solve_axis_problem, AxisSolution};
use switchstop::registry::{BoundaryInputs, Registry};
use switchstop::value::ValueEstimate;

use crate::config::ExperimentConfig;
use crate::io::{ArtifactWriter, IoError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] switchstop::Error),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("assumption checks failed: {0}")]
    Assumptions(String),
    #[error("{failed} of {total} criteria failed")]
    Criteria { failed: usize, total: usize },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "io",
            CliError::Assumptions(_) => "assumptions",
            CliError::Criteria { .. } => "criteria",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assumptions(_) | CliError::Criteria { .. } => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub m: ModelSpec,
    pub hash: String,
    pub registry: Registry,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> CliResult<Self> {
        let m = cfg.model_spec()?;
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            m,
            hash,
            registry: Registry::default(),
        })
    }

    pub fn writer(&self, subcommand: &str) -> CliResult<ArtifactWriter> {
        Ok(ArtifactWriter::new(&self.cfg.output_dir, &self.hash, subcommand, self.cfg.seed)?)
    }
}

#[derive(Serialize)]
struct ValidateOut<'a> {
    assumptions: &'a AssumptionReport,
    all_pass: bool,
}

pub fn validate(ctx: &Ctx) -> CliResult<AssumptionReport> {
    let mut w = ctx.writer("validate")?;
    let rep = ctx.m.check_assumptions();
    w.json(
        "assumptions.json",
        &ValidateOut {
            assumptions: &rep,
            all_pass: rep.all_pass(),
        },
    )?;
    w.finish()?;
    if !rep.all_pass() {
        return Err(CliError::Assumptions(serde_json::to_string(&rep).unwrap_or_default()));
    }
    Ok(rep)
}

const ONEDIM: &str = "onedim.json";
const BOUNDARY: &str = "boundary.json";

pub fn solve_1d(ctx: &Ctx, w: &mut ArtifactWriter) -> CliResult<[AxisSolution; 2]> {
    ctx.m.require_a1()?;
    let solve = |axis| solve_axis_problem(&ctx.m, axis, ctx.cfg.axis_cutoff, &ctx.cfg.axis, &ctx.cfg.psor);
    let axes = [solve(1)?, solve(2)?];
    w.csv("axis1.csv", |out| axes[0].write_csv(out))?;
    w.csv("axis2.csv", |out| axes[1].write_csv(out))?;
    w.json(ONEDIM, &axes)?;
    Ok(axes)
}

/// Axis solutions from an earlier `solve-1d` with the same config, or a
/// fresh run recorded as a dependency.
fn axes_for(ctx: &Ctx, w: &mut ArtifactWriter) -> CliResult<[AxisSolution; 2]> {
    if let Some(a) = w.load::<[AxisSolution; 2]>(ONEDIM) {
        w.depend("solve-1d", true);
        return Ok(a);
    }
    let mut dep = w.child("solve-1d");
    let a = solve_1d(ctx, &mut dep)?;
    dep.finish()?;
    w.depend("solve-1d", false);
    Ok(a)
}

#[derive(Serialize)]
struct HjbSummary {
    n1: usize,
    n2: usize,
    residual: f64,
    smooth_fit_gap: Vec<f64>,
    boundary: Boundary,
}

pub fn solve_hjb_cmd(ctx: &Ctx) -> CliResult<()> {
    let mut w = ctx.writer("solve-hjb")?;
    let axes = axes_for(ctx, &mut w)?;
    let field = solve_hjb(&ctx.m, [&axes[0], &axes[1]], &ctx.cfg.hjb, &ctx.cfg.psor)?;
    let boundary = switchstop::hjb::extract_boundaries(&field, ctx.cfg.hjb.extract_tol);
    w.csv("field.csv", |out| field.write_csv(out))?;
    w.csv("hjb_boundary.csv", |out| boundary.write_csv(out))?;
    let summary = HjbSummary {
        n1: field.grid.n1(),
        n2: field.grid.n2(),
        residual: field.residual,
        smooth_fit_gap: (0..field.n_regimes()).map(|r| smooth_fit_gap(&field, r, ctx.cfg.hjb.extract_tol)).collect(),
        boundary,
    };
    w.json("hjb.json", &summary)?;
    w.finish()?;
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct BoundaryOut {
    strategy: String,
    boundary: Boundary,
}

#[derive(Serialize)]
struct BoundaryDiag<'a> {
    report: BoundaryReport,
    ie: Option<&'a IeSolution>,
}

pub fn solve_boundary(ctx: &Ctx, w: &mut ArtifactWriter) -> CliResult<Boundary> {
    let solver = ctx.registry.boundary_solver(&ctx.cfg.strategies.boundary)?;
    let axes = axes_for(ctx, w)?;
    let out = solver.solve(&BoundaryInputs {
        m: &ctx.m,
        axes: [&axes[0], &axes[1]],
        hjb: &ctx.cfg.hjb,
        psor: &ctx.cfg.psor,
        ie: &ctx.cfg.ie,
    })?;
    let ceiling = switchstop::boundary::bracket_from_onedim(&axes[1]).ceiling;
    w.csv("boundary.csv", |o| out.boundary.write_csv(o))?;
    w.json(
        BOUNDARY,
        &BoundaryOut {
            strategy: solver.name().to_string(),
            boundary: out.boundary.clone(),
        },
    )?;
    w.json(
        "boundary_diagnostics.json",
        &BoundaryDiag {
            report: out.boundary.check(&ctx.m, ctx.cfg.hjb.extract_tol.max(1e-9), ceiling),
            ie: out.ie.as_ref(),
        },
    )?;
    if let Some(f) = &out.field {
        w.csv("field.csv", |o| f.write_csv(o))?;
    }
    Ok(out.boundary)
}

fn boundary_for(ctx: &Ctx, w: &mut ArtifactWriter) -> CliResult<Boundary> {
    if let Some(b) = w.load::<BoundaryOut>(BOUNDARY) {
        w.depend("solve-boundary", true);
        return Ok(b.boundary);
    }
    let mut dep = w.child("solve-boundary");
    let b = solve_boundary(ctx, &mut dep)?;
    dep.finish()?;
    w.depend("solve-boundary", false);
    Ok(b)
}

#[derive(Serialize)]
struct ValueRow {
    regime: usize,
    x: [f64; 2],
    strategy: String,
    estimate: ValueEstimate,
}

pub fn value(ctx: &Ctx) -> CliResult<()> {
    let est = ctx.registry.value_estimator(&ctx.cfg.strategies.value)?;
    let mut w = ctx.writer("value")?;
    let b = boundary_for(ctx, &mut w)?;
    let mut rows = Vec::new();
    for p in ctx.cfg.value_points(ctx.m.n_regimes()) {
        let e = est.estimate(&ctx.m, p.regime, p.x, &b, &ctx.cfg.mc)?;
        rows.push(ValueRow {
            regime: p.regime,
            x: p.x,
            strategy: est.name().to_string(),
            estimate: e,
        });
    }
    w.csv("value.csv", |o| {
        writeln!(o, "regime,x1,x2,mean,std_error,n_paths,unstopped_fraction,tail_bound")?;
        for r in &rows {
            let e = &r.estimate;
            writeln!(
                o,
                "{},{},{},{},{},{},{},{}",
                r.regime, r.x[0], r.x[1], e.mean, e.std_error, e.n_paths, e.unstopped_fraction, e.tail_bound
            )?;
        }
        Ok(())
    })?;
    w.json("value.json", &rows)?;
    w.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct DetectOut<'a> {
    source: String,
    theta: Option<f64>,
    beta: Option<usize>,
    run: &'a DetectorRun,
}

pub fn detect(ctx: &Ctx, replay: Option<&Path>, horizon: f64, substream: u64) -> CliResult<DetectorRun> {
    let cfg = ctx.cfg.detection()?;
    let mut w = ctx.writer("detect")?;
    let b = boundary_for(ctx, &mut w)?;
    let (scenario, source) = match replay {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| IoError::Fs {
                path: p.to_path_buf(),
                source: e,
            })?;
            (Scenario::read_csv(BufReader::new(f))?, format!("replay:{}", p.display()))
        }
        None => {
            let s = simulate_scenario(cfg, horizon, ctx.cfg.risk.dt, ctx.cfg.risk.seed, substream)?;
            (s, format!("simulated:{substream}"))
        }
    };
    let run = run_detector(cfg, &b, &scenario)?;
    if replay.is_none() {
        w.csv("scenario.csv", |o| scenario.write_csv(o))?;
    }
    w.csv("trace.csv", |o| {
        writeln!(o, "t,regime,Phi,Psi")?;
        for (t, r, phi, psi) in &run.trace {
            writeln!(o, "{t},{r},{phi},{psi}")?;
        }
        Ok(())
    })?;
    let simulated = replay.is_none();
    w.json(
        "alarm.json",
        &DetectOut {
            source,
            theta: simulated.then_some(scenario.theta),
            beta: simulated.then_some(scenario.beta),
            run: &DetectorRun {
                alarm: run.alarm.clone(),
                trace: Vec::new(),
            },
        },
    )?;
    w.finish()?;
    Ok(run)
}

#[derive(Serialize)]
struct RiskOut<'a> {
    strategy: &'a str,
    report: &'a RiskReport,
}

pub fn risk(ctx: &Ctx) -> CliResult<RiskReport> {
    let cfg = ctx.cfg.detection()?;
    let est = ctx.registry.risk_estimator(&ctx.cfg.strategies.risk)?;
    let mut w = ctx.writer("risk")?;
    let b = boundary_for(ctx, &mut w)?;
    let rep = est.estimate(cfg, &b, &ctx.cfg.risk)?;
    w.json(
        "risk.json",
        &RiskOut {
            strategy: est.name(),
            report: &rep,
        },
    )?;
    w.finish()?;
    Ok(rep)
}

pub fn crosscheck(ctx: &Ctx, only: &[u32], mut line: impl FnMut(&CriterionResult)) -> CliResult<Vec<CriterionResult>> {
    let cfg = ctx.cfg.detection()?.clone();
    let mut w = ctx.writer("crosscheck")?;
    let suite = Suite::new(cfg, ctx.cfg.crosscheck.clone())?;
    let results = suite.run_selected(only, |r| line(r));
    w.csv("crosscheck.csv", |o| {
        writeln!(o, "id,name,passed,measured,threshold")?;
        for r in &results {
            writeln!(o, "{},{},{},{},{}", r.id, r.name, r.passed, r.measured, r.threshold)?;
        }
        Ok(())
    })?;
    w.json("crosscheck.json", &results)?;
    w.finish()?;
    Ok(results)
}
