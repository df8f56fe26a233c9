//! Top-level run configuration, read from strict JSON.

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::eval::{default_scenarios, EvalConfig, Scenario, ScenarioKind};
use crate::losses::LossConfig;
use crate::train::{ModelConfig, TrainConfig};
use crate::verify::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. The seeds inside `dataset`, `train` and `eval` are
    /// overwritten with it so that one number controls every stream.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub scenarios: Vec<Scenario>,
    /// State-space grid for region plots, overlap and alignment checks.
    pub grid: GridSpec,
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSpec::moons(1000, 0.1, 0),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
            scenarios: default_scenarios(),
            grid: GridSpec::square(-3.0, 3.0, 2, 101),
            output: None,
        }
    }
}

fn dataset_dim(kind: DatasetKind) -> usize {
    match kind {
        DatasetKind::System1d => 1,
        _ => 2,
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.eval.solver.validate()?;
        self.eval.attack_solver.validate()?;
        self.grid.validate()?;
        let d = dataset_dim(self.dataset.kind);
        if self.model.input_dim != d {
            return Err(Error::Config(format!(
                "model input_dim {} does not match the {d}-dimensional dataset",
                self.model.input_dim
            )));
        }
        if self.model.classes != self.dataset.classes() {
            return Err(Error::Config(format!(
                "model has {} classes, dataset has {}",
                self.model.classes,
                self.dataset.classes()
            )));
        }
        if self.grid.dim() != self.model.state_dim {
            return Err(Error::Config(format!(
                "grid is {}-dimensional, state is {}-dimensional",
                self.grid.dim(),
                self.model.state_dim
            )));
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.as_str()) || s.name == "clean" {
                return Err(Error::Config(format!("duplicate or reserved scenario name {:?}", s.name)));
            }
            if let ScenarioKind::Attack(a) = &s.kind {
                a.validate()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr": 0.1, "bogus": 2}}"#).is_err());
    }

    #[test]
    fn seed_propagates() {
        let cfg = RunConfig::from_json(r#"{"seed": 42}"#).unwrap();
        assert_eq!((cfg.dataset.seed, cfg.train.seed, cfg.eval.seed), (42, 42, 42));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = r#"{"dataset": {"kind": "system-1d", "samples": 200}}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))));
    }
}
