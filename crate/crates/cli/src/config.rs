use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use switchstop::boundary::IeParams;
use switchstop::crosscheck::SuiteBudget;
use switchstop::detect::{to_osp_model, DetectionConfig, RiskConfig};
use switchstop::hjb::HjbParams;
use switchstop::model::ModelSpec;
use switchstop::onedim::{AxisGridSpec, Cutoff, PsorParams};
use switchstop::rng::CounterRng;
use switchstop::value::McConfig;
use switchstop::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Strategies {
    pub boundary: String,
    pub value: String,
    pub risk: String,
}

impl Default for Strategies {
    fn default() -> Self {
        Self {
            boundary: "hjb".into(),
            value: "stopped".into(),
            risk: "scenario".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuePoint {
    pub regime: usize,
    pub x: [f64; 2],
}

fn default_seed() -> u64 {
    20240601
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_cutoff() -> Cutoff {
    Cutoff::Auto
}

/// One experiment. Exactly one of `model` and `detection` is given; the
/// detection block is mapped to its stopping model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionConfig>,
    #[serde(default)]
    pub axis: AxisGridSpec,
    #[serde(default = "default_cutoff")]
    pub axis_cutoff: Cutoff,
    #[serde(default)]
    pub psor: PsorParams,
    #[serde(default)]
    pub hjb: HjbParams,
    #[serde(default)]
    pub ie: IeParams,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub crosscheck: SuiteBudget,
    #[serde(default)]
    pub strategies: Strategies,
    /// Start points for `value`; defaults to `(0.5, 0.5)` in every regime.
    #[serde(default)]
    pub points: Vec<ValuePoint>,
    /// Root seed. Every random stream is derived from it, overriding the
    /// per-block seeds.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

/// Scalar overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_paths: Option<u64>,
    pub dt: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| bad(format!("config {}: {e}", path.display())))?;
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(n) = ov.n_paths {
            cfg.mc.n_paths = n;
            cfg.risk.n_paths = n;
        }
        if let Some(dt) = ov.dt {
            cfg.mc.dt = dt;
            cfg.risk.dt = dt;
        }
        if let Some(d) = &ov.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    fn derive_seeds(&mut self) {
        self.mc.seed = CounterRng::derive_seed(self.seed, "value");
        self.ie.mc.seed = CounterRng::derive_seed(self.seed, "boundary");
        self.risk.seed = CounterRng::derive_seed(self.seed, "risk");
        self.crosscheck.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.model, &self.detection) {
            (Some(m), None) => m.validate_shape()?,
            (None, Some(d)) => d.validate()?,
            _ => return Err(bad("exactly one of 'model' and 'detection' must be given")),
        }
        self.psor.validate()?;
        self.hjb.validate()?;
        self.ie.validate()?;
        self.mc.validate()?;
        self.risk.validate()?;
        let tolerances = [
            ("psor.tol", self.psor.tol),
            ("psor.value_tol", self.psor.value_tol),
            ("hjb.extract_tol", self.hjb.extract_tol),
            ("ie.tol", self.ie.tol),
            ("ie.tol_g", self.ie.tol_g),
            ("ie.bisect_tol", self.ie.bisect_tol),
            ("mc.tail_eps", self.mc.tail_eps),
        ];
        for (name, v) in tolerances {
            if !(v > 0.0) {
                return Err(bad(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match (&self.model, &self.detection) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(d)) => to_osp_model(d),
            _ => Err(bad("no model")),
        }
    }

    pub fn detection(&self) -> Result<&DetectionConfig> {
        self.detection.as_ref().ok_or_else(|| bad("this subcommand needs a 'detection' block"))
    }

    pub fn value_points(&self, n_regimes: usize) -> Vec<ValuePoint> {
        if self.points.is_empty() {
            (0..n_regimes).map(|r| ValuePoint { regime: r, x: [0.5, 0.5] }).collect()
        } else {
            self.points.clone()
        }
    }

    /// SHA-256 of the resolved configuration in canonical JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("c.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    const DET: &str = r#"{"detection": {"Q": [[-1,1],[1,-1]], "lambda": 1, "gamma": 0.5, "c": 1,
        "mu": [1, 2], "p1": 0.5, "p2": 0.5, "pi": 0.2}}"#;

    #[test]
    fn detection_block_maps_to_model() {
        let d = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&write(d.path(), DET), &Overrides::default()).unwrap();
        let m = cfg.model_spec().unwrap();
        assert_eq!(m.cost.kappa, vec![2.0, 2.0]);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn both_or_neither_block_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let err = ExperimentConfig::load(&write(d.path(), "{}"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("exactly one"));
        let det: serde_json::Value = serde_json::from_str(DET).unwrap();
        let model = serde_json::json!({
            "Q": [[-1,1],[1,-1]], "a": [[1,1],[1,1]], "B": [[[1.5,0],[0,1.5]],[[1.5,0],[0,1.5]]],
            "sigma": [[1,1],[2,2]], "lambda": [1,1],
            "cost": {"kind": "affine", "p1": [0.5,0.5], "p2": [0.5,0.5], "kappa": [2,2]}
        });
        let both = serde_json::json!({"detection": det["detection"], "model": model});
        let err = ExperimentConfig::load(&write(d.path(), &both.to_string()), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("exactly one"));
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(DET).unwrap();
        v["ie"] = serde_json::json!({"tol_g": 0.0});
        let err = ExperimentConfig::load(&write(d.path(), &v.to_string()), &Overrides::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }

    #[test]
    fn seed_override_changes_hash_and_streams() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), DET);
        let a = ExperimentConfig::load(&p, &Overrides::default()).unwrap();
        let b = ExperimentConfig::load(&p, &Overrides { seed: Some(1), ..Default::default() }).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.mc.seed, b.mc.seed);
        assert_eq!(a.hash(), ExperimentConfig::load(&p, &Overrides::default()).unwrap().hash());
    }
}
