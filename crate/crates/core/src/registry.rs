//! Named strategies for the three places where the crate offers two routes
//! to the same quantity: the stopping boundary, the value at a point and the
//! Bayes risk of a detection rule.

use crate::boundary::{bracket_from_onedim, resample, solve_integral_equation, Boundary, IeInit, IeParams, IeSolution};
use crate::detect::{evaluate_policy, risk_via_statistics, DetectionConfig, RiskConfig, RiskReport};
use crate::error::{Error, Result};
use crate::hjb::{extract_boundaries, solve_hjb, HjbParams, ValueField};
use crate::model::ModelSpec;
use crate::onedim::{AxisSolution, PsorParams};
use crate::value::{estimate_value_free, estimate_value_stopped, McConfig, ValueEstimate};

pub struct BoundaryInputs<'a> {
    pub m: &'a ModelSpec,
    pub axes: [&'a AxisSolution; 2],
    pub hjb: &'a HjbParams,
    pub psor: &'a PsorParams,
    pub ie: &'a IeParams,
}

#[derive(Clone, Debug)]
pub struct BoundaryOutcome {
    pub boundary: Boundary,
    /// Present when an HJB field was solved along the way.
    pub field: Option<ValueField>,
    pub ie: Option<IeSolution>,
}

pub trait BoundarySolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, inp: &BoundaryInputs<'_>) -> Result<BoundaryOutcome>;
}

pub trait ValueEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> Result<ValueEstimate>;
}

pub trait RiskEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Result<RiskReport>;
}

pub struct HjbBoundary;

impl BoundarySolver for HjbBoundary {
    fn name(&self) -> &'static str {
        "hjb"
    }

    fn solve(&self, inp: &BoundaryInputs<'_>) -> Result<BoundaryOutcome> {
        let field = solve_hjb(inp.m, inp.axes, inp.hjb, inp.psor)?;
        Ok(BoundaryOutcome {
            boundary: extract_boundaries(&field, inp.hjb.extract_tol),
            field: Some(field),
            ie: None,
        })
    }
}

pub struct IntegralEquation;

impl BoundarySolver for IntegralEquation {
    fn name(&self) -> &'static str {
        "integral-equation"
    }

    fn solve(&self, inp: &BoundaryInputs<'_>) -> Result<BoundaryOutcome> {
        let br = bracket_from_onedim(inp.axes[1]);
        let xs = inp.ie.abscissae(inp.axes[0]);
        let (start, field) = match inp.ie.init {
            IeInit::Ceiling => (Boundary::constant(inp.m.n_regimes(), br.ceiling), None),
            IeInit::Hjb => {
                let out = HjbBoundary.solve(inp)?;
                (out.boundary, out.field)
            }
        };
        let sol = solve_integral_equation(inp.m, &resample(&start, &xs), &br, inp.ie)?;
        Ok(BoundaryOutcome {
            boundary: sol.boundary.clone(),
            field,
            ie: Some(sol),
        })
    }
}

pub struct StoppedValue;

impl ValueEstimator for StoppedValue {
    fn name(&self) -> &'static str {
        "stopped"
    }

    fn estimate(&self, m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> Result<ValueEstimate> {
        estimate_value_stopped(m, regime, x, b, mc)
    }
}

pub struct FreeValue;

impl ValueEstimator for FreeValue {
    fn name(&self) -> &'static str {
        "free"
    }

    fn estimate(&self, m: &ModelSpec, regime: usize, x: [f64; 2], b: &Boundary, mc: &McConfig) -> Result<ValueEstimate> {
        estimate_value_free(m, regime, x, b, mc)
    }
}

pub struct ScenarioRisk;

impl RiskEstimator for ScenarioRisk {
    fn name(&self) -> &'static str {
        "scenario"
    }

    fn estimate(&self, cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Result<RiskReport> {
        evaluate_policy(cfg, b, rc)
    }
}

pub struct StatisticsRisk;

impl RiskEstimator for StatisticsRisk {
    fn name(&self) -> &'static str {
        "statistics"
    }

    fn estimate(&self, cfg: &DetectionConfig, b: &Boundary, rc: &RiskConfig) -> Result<RiskReport> {
        risk_via_statistics(cfg, b, rc)
    }
}

pub struct Registry {
    boundary: Vec<Box<dyn BoundarySolver>>,
    value: Vec<Box<dyn ValueEstimator>>,
    risk: Vec<Box<dyn RiskEstimator>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self {
            boundary: vec![Box::new(HjbBoundary), Box::new(IntegralEquation)],
            value: vec![Box::new(StoppedValue), Box::new(FreeValue)],
            risk: vec![Box::new(ScenarioRisk), Box::new(StatisticsRisk)],
        }
    }
}

fn find<'a, T: ?Sized>(items: &'a [Box<T>], name: &str, label: impl Fn(&T) -> &'static str) -> Result<&'a T> {
    items.iter().map(|b| b.as_ref()).find(|s| label(s) == name).ok_or_else(|| Error::UnknownStrategy {
        name: name.to_string(),
        known: items.iter().map(|s| label(s.as_ref())).collect::<Vec<_>>().join(", "),
    })
}

impl Registry {
    /// Later registrations shadow earlier ones of the same name.
    pub fn register_boundary(&mut self, s: Box<dyn BoundarySolver>) {
        self.boundary.insert(0, s);
    }

    pub fn register_value(&mut self, s: Box<dyn ValueEstimator>) {
        self.value.insert(0, s);
    }

    pub fn register_risk(&mut self, s: Box<dyn RiskEstimator>) {
        self.risk.insert(0, s);
    }

    pub fn boundary_solver(&self, name: &str) -> Result<&dyn BoundarySolver> {
        find(&self.boundary, name, |s| s.name())
    }

    pub fn value_estimator(&self, name: &str) -> Result<&dyn ValueEstimator> {
        find(&self.value, name, |s| s.name())
    }

    pub fn risk_estimator(&self, name: &str) -> Result<&dyn RiskEstimator> {
        find(&self.risk, name, |s| s.name())
    }

    pub fn names(&self) -> [Vec<&'static str>; 3] {
        [
            self.boundary.iter().map(|s| s.name()).collect(),
            self.value.iter().map(|s| s.name()).collect(),
            self.risk.iter().map(|s| s.name()).collect(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let r = Registry::default();
        assert_eq!(r.boundary_solver("hjb").unwrap().name(), "hjb");
        assert_eq!(r.boundary_solver("integral-equation").unwrap().name(), "integral-equation");
        assert_eq!(r.value_estimator("free").unwrap().name(), "free");
        assert_eq!(r.risk_estimator("statistics").unwrap().name(), "statistics");
    }

    #[test]
    fn unknown_name_lists_known() {
        let r = Registry::default();
        match r.value_estimator("kde") {
            Err(Error::UnknownStrategy { name, known }) => {
                assert_eq!(name, "kde");
                assert_eq!(known, "stopped, free");
            }
            other => panic!("{:?}", other.map(|s| s.name())),
        }
    }

    struct Zero;

    impl ValueEstimator for Zero {
        fn name(&self) -> &'static str {
            "stopped"
        }

        fn estimate(&self, _: &ModelSpec, _: usize, _: [f64; 2], _: &Boundary, mc: &McConfig) -> Result<ValueEstimate> {
            Ok(ValueEstimate::exact(0.0, mc.n_paths))
        }
    }

    #[test]
    fn registration_shadows() {
        let mut r = Registry::default();
        r.register_value(Box::new(Zero));
        let m = crate::model::fixtures::detection_like(
            crate::regimes::GeneratorMatrix::two_state(1.0, 1.0),
            1.0,
            0.5,
            &[1.0, 2.0],
            [0.5, 0.5],
            1.0,
        );
        let v = r.value_estimator("stopped").unwrap().estimate(&m, 0, [0.5, 0.5], &Boundary::constant(2, 5.0), &McConfig::default());
        assert_eq!(v.unwrap().mean, 0.0);
        assert_eq!(r.names()[1], vec!["stopped", "stopped", "free"]);
    }
}
