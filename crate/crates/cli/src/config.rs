//! Run configuration: one JSON document with a versioned schema. Every
//! section rejects unknown keys; see `docs/config.md` for keys and units.

use std::path::Path;

use anyhow::Context;
use dicodesign::codesign::CodesignConfig;
use dicodesign::ilqg::SolverOptions;
use dicodesign::systems::{
    door_analog_model, two_mass_model, DoorAnalog, DoorConfig, DoorCost, NoiseKind, Objective, Plant, TwoMass,
    TwoMassConfig, TwoMassCost,
};
use dicodesign::Vector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Major.minor version of the configuration schema this build reads.
pub const SCHEMA_VERSION: &str = "1.0";

/// A configuration problem; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    TwoMass,
    DoorAnalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: SystemName,
    /// Overrides of the system's parameters; checked against the system's
    /// own parameter set.
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Grid values of the first design parameter; defaults to
    /// `grid_points` values spanning the design bounds.
    pub k1: Option<Vec<f64>>,
    pub k2: Option<Vec<f64>>,
    pub grid_points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k1: None,
            k2: None,
            grid_points: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledDesign {
    pub label: String,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    pub kind: NoiseKind,
    /// Noise variances (m² for environment noise, N²·m² or N² per input
    /// for control noise).
    pub levels: Vec<f64>,
    pub rollouts: usize,
    /// Designs to compare; defaults to the system's configured design.
    pub designs: Vec<LabeledDesign>,
    pub nominal_noise: bool,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Environment,
            levels: vec![1e-4, 1e-3, 1e-2],
            rollouts: 20,
            designs: Vec::new(),
            nominal_noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: String,
    pub system: SystemSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub codesign: CodesignConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub robustness: RobustnessSection,
    #[serde(default)]
    pub seed: u64,
    /// Used when neither `--out` nor the environment override is given.
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// The instantiated plant and cost.
pub enum System {
    TwoMass(TwoMass, TwoMassCost),
    Door(DoorAnalog, DoorCost),
}

impl System {
    pub fn model(&self) -> &dyn Plant {
        match self {
            System::TwoMass(m, _) => m,
            System::Door(m, _) => m,
        }
    }

    pub fn cost(&self) -> &dyn Objective {
        match self {
            System::TwoMass(_, c) => c,
            System::Door(_, c) => c,
        }
    }

    /// Design from the system parameters.
    pub fn design(&self) -> Vector {
        match self {
            System::TwoMass(m, _) => m.config.design(),
            System::Door(m, _) => m.config.design(),
        }
    }

    pub fn state_names(&self) -> Vec<&'static str> {
        match self {
            System::TwoMass(..) => vec!["x1", "v1", "x2", "v2", "xw"],
            System::Door(..) => vec!["q1", "q2", "dq1", "dq2", "theta", "dtheta", "hinge_x", "hinge_y"],
        }
    }

    pub fn design_names(&self) -> Vec<&'static str> {
        match self {
            System::TwoMass(..) => vec!["k1", "k2"],
            System::Door(..) => vec!["k_x", "k_y"],
        }
    }
}

fn check_version(version: &str) -> anyhow::Result<()> {
    let major = |v: &str| -> Option<u64> { v.split('.').next()?.parse().ok() };
    let ours = major(SCHEMA_VERSION).expect("valid schema version");
    match major(version) {
        None => Err(config_error(format!("schema_version `{version}` is not of the form MAJOR.MINOR"))),
        Some(m) if m > ours => Err(config_error(format!(
            "schema_version {version} is newer than the supported {SCHEMA_VERSION}; upgrade dicodesign"
        ))),
        Some(m) if m < ours => Err(config_error(format!("schema_version {version} is no longer supported"))),
        Some(_) => Ok(()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| config_error(format!("invalid JSON: {e}")))?;
        // Check the version before the shape, so that a newer document fails
        // with a version message rather than an unknown-key message.
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| config_error("missing string key `schema_version`"))?;
        check_version(version)?;
        let config: RunConfig = serde_json::from_value(value).map_err(|e| config_error(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| config_error(format!("{e:#}")))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> anyhow::Result<()> {
        self.solver.validate().map_err(|e| config_error(e.to_string()))?;
        // One source of inner-solver options: the top-level section.
        if self.codesign.solver != SolverOptions::default() {
            return Err(config_error("set inner-solver options in the top-level `solver` section, not `codesign.solver`"));
        }
        self.build_system()?;
        if self.sweep.grid_points < 2 && (self.sweep.k1.is_none() || self.sweep.k2.is_none()) {
            return Err(config_error("sweep.grid_points must be at least 2"));
        }
        Ok(())
    }

    /// Co-design settings with the top-level solver options and, when no
    /// initial design is given, the system's configured design.
    pub fn codesign_config(&self, system: &System) -> CodesignConfig {
        let mut cfg = self.codesign.clone();
        cfg.solver = self.solver.clone();
        if cfg.design.is_empty() {
            cfg.design = system.design().iter().copied().collect();
        }
        cfg
    }

    pub fn build_system(&self) -> anyhow::Result<System> {
        let params = self.system.params.clone();
        let system = match self.system.name {
            SystemName::TwoMass => {
                let cfg: TwoMassConfig =
                    serde_json::from_value(params).map_err(|e| config_error(format!("system.params: {e}")))?;
                let (m, c) = two_mass_model(cfg).map_err(|e| config_error(e.to_string()))?;
                System::TwoMass(m, c)
            }
            SystemName::DoorAnalog => {
                let cfg: DoorConfig =
                    serde_json::from_value(params).map_err(|e| config_error(format!("system.params: {e}")))?;
                let (m, c) = door_analog_model(cfg).map_err(|e| config_error(e.to_string()))?;
                System::Door(m, c)
            }
        };
        Ok(system)
    }

    /// System parameters with defaults filled in.
    pub fn resolved_params(&self) -> serde_json::Value {
        let params = self.system.params.clone();
        let resolved = match self.system.name {
            SystemName::TwoMass => serde_json::from_value::<TwoMassConfig>(params).map(serde_json::to_value),
            SystemName::DoorAnalog => serde_json::from_value::<DoorConfig>(params).map(serde_json::to_value),
        };
        match resolved {
            Ok(Ok(v)) => v,
            _ => self.system.params.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in),
    /// so the hash does not depend on key order or on spelling out defaults.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.system.params = self.resolved_params();
        let value = serde_json::to_value(&normalized).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema_version": "1.0", "system": {"name": "two_mass"}}"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.solver, SolverOptions::default());
        assert_eq!(cfg.robustness.rollouts, 20);
        assert!(matches!(cfg.build_system().unwrap(), System::TwoMass(..)));
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = r#"{"schema_version": "1.0", "system": {"name": "two_mass", "params": {"k3": 1}}}"#;
        let err = RunConfig::from_json(text).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
        assert!(err.to_string().contains("k3"), "{err}");
        let text = r#"{"schema_version": "1.0", "system": {"name": "two_mass"}, "solver": {"tolerence": 1}}"#;
        assert!(RunConfig::from_json(text).unwrap_err().to_string().contains("tolerence"));
    }

    #[test]
    fn newer_major_version_fails() {
        let text = r#"{"schema_version": "2.0", "system": {"name": "two_mass"}, "future_key": 1}"#;
        let err = RunConfig::from_json(text).unwrap_err().to_string();
        assert!(err.contains("newer"), "{err}");
        let text = r#"{"schema_version": "1.7", "system": {"name": "two_mass"}}"#;
        assert!(RunConfig::from_json(text).is_ok());
    }

    #[test]
    fn hash_ignores_key_order_and_explicit_defaults() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let b = RunConfig::from_json(
            r#"{"system": {"params": {"k1": 500.0}, "name": "two_mass"}, "seed": 0, "schema_version": "1.0"}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::from_json(r#"{"schema_version": "1.0", "system": {"name": "two_mass"}, "seed": 1}"#).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
