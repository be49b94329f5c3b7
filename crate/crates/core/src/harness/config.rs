use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pipeline::{MethodSettings, SystemSpec};
use crate::anchors::AnchorSpec;
use crate::error::{Error, Result};
use crate::pilots::FullProtocol;
use crate::selector::Method;
use crate::summarize::{ProjectorMethod, ProjectorSpec};
use crate::sysrisk::CandidateGrid;
use crate::trajstore::{LinearLagSpec, PerturbSpec, SplitFractions};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the anchor stage reads its trajectories from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    /// An independent pool simulated from the same system.
    #[default]
    Replica,
    /// The train/val splits the pilots use.
    SameData,
}

/// Value sets for one-at-a-time sensitivity variants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityAxes {
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub tau_pl: Vec<f64>,
    #[serde(default)]
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub resamples: Vec<usize>,
}

impl SensitivityAxes {
    pub fn standard() -> Self {
        SensitivityAxes {
            rho: vec![0.02, 0.05, 0.10],
            tau_pl: vec![0.02, 0.05, 0.10],
            kappa: vec![1.0, 1.5, 2.0],
            resamples: vec![100, 300, 500],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub systems: Vec<SystemSpec>,
    pub grid: CandidateGrid,
    #[serde(default = "default_split")]
    pub split: SplitFractions,
    /// Summary used by pilots and the oracle.
    #[serde(default)]
    pub pilot_projector: ProjectorSpec,
    /// Base summary for the anchor stage; its method is replaced per
    /// representation.
    #[serde(default)]
    pub anchor_projector: ProjectorSpec,
    #[serde(default)]
    pub anchors: AnchorSpec,
    #[serde(default)]
    pub selectors: MethodSettings,
    #[serde(default)]
    pub full: FullProtocol,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<PerturbSpec>,
    #[serde(default = "default_representations")]
    pub representations: Vec<ProjectorMethod>,
    #[serde(default)]
    pub anchor_source: AnchorSource,
    #[serde(default)]
    pub sensitivity: Option<SensitivityAxes>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_split() -> SplitFractions {
    SplitFractions::new(0.6, 0.2, 0.2)
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_eps() -> Vec<f64> {
    vec![0.05]
}

fn default_perturbations() -> Vec<PerturbSpec> {
    vec![PerturbSpec::identity()]
}

fn default_representations() -> Vec<ProjectorMethod> {
    vec![ProjectorMethod::Pca]
}

impl ExperimentConfig {
    /// A minimal config around one or more systems with every default.
    pub fn new(systems: Vec<SystemSpec>, grid: CandidateGrid) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            systems,
            grid,
            split: default_split(),
            pilot_projector: ProjectorSpec::default(),
            anchor_projector: ProjectorSpec::default(),
            anchors: AnchorSpec::default(),
            selectors: MethodSettings::default(),
            full: FullProtocol::default(),
            methods: default_methods(),
            seeds: default_seeds(),
            eps: default_eps(),
            perturbations: default_perturbations(),
            representations: default_representations(),
            anchor_source: AnchorSource::default(),
            sensitivity: None,
            workers: None,
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.systems.is_empty() {
            return Err(Error::Config("at least one system is required".into()));
        }
        for s in &self.systems {
            s.validate()?;
        }
        if self.seeds.is_empty() || self.methods.is_empty() || self.eps.is_empty() {
            return Err(Error::Config("seeds, methods and eps must be nonempty".into()));
        }
        if self.perturbations.is_empty() || self.representations.is_empty() {
            return Err(Error::Config("perturbations and representations must be nonempty".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("eps must be >= 0, got {e}")));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        for p in &self.perturbations {
            p.validate()?;
        }
        self.pilot_projector.validate()?;
        self.anchor_projector.validate()?;
        self.anchors.validate()?;
        self.full.validate()?;
        self.selectors.budgets.stage1.validate()?;
        self.selectors.budgets.stage2.validate()?;
        self.selectors.sake.validate()?;
        self.selectors.direct.validate()?;
        Ok(())
    }

    /// One-at-a-time variants of this config for each configured axis,
    /// labelled `axis=value`. `eps` is already a reporting axis.
    pub fn sensitivity_variants(&self) -> Vec<(String, ExperimentConfig)> {
        let Some(axes) = &self.sensitivity else {
            return Vec::new();
        };
        let base = ExperimentConfig {
            sensitivity: None,
            ..self.clone()
        };
        let mut out = Vec::new();
        for &v in &axes.rho {
            let mut c = base.clone();
            c.anchors.rho = v;
            out.push((format!("rho={v}"), c));
        }
        for &v in &axes.tau_pl {
            let mut c = base.clone();
            c.anchors.tau_pl = v;
            out.push((format!("tau_pl={v}"), c));
        }
        for &v in &axes.kappa {
            let mut c = base.clone();
            c.selectors.sake.kappa = v;
            out.push((format!("kappa={v}"), c));
        }
        for &v in &axes.resamples {
            let mut c = base.clone();
            c.anchors.boot.resamples = v;
            out.push((format!("B={v}"), c));
        }
        out
    }
}

/// The synthetic VAR battery: `n` systems of dim 4 cycling the true lag
/// through 1..=6, noise 0.05, grid 1..12.
pub fn var_battery(n: usize, base_seed: u64) -> ExperimentConfig {
    let systems = (0..n)
        .map(|i| {
            let mut spec = LinearLagSpec::new(4, 1 + i % 6, 60, 60, 0.05, base_seed + i as u64);
            spec.stability_margin = 0.02;
            SystemSpec::Linear(spec)
        })
        .collect();
    let mut cfg = ExperimentConfig::new(systems, CandidateGrid::range(1, 12).expect("static grid"));
    cfg.seeds = vec![0];
    cfg
}

/// `base` with the standard one-at-a-time axes and the reporting tolerances
/// 2%, 5%, 10%, 15%.
pub fn sensitivity_battery(base: ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        sensitivity: Some(SensitivityAxes::standard()),
        eps: vec![0.02, 0.05, 0.10, 0.15],
        ..base
    }
}

/// Observation perturbations of the robustness battery.
pub fn robustness_perturbations(seed: u64) -> Vec<PerturbSpec> {
    vec![
        PerturbSpec::identity(),
        PerturbSpec::gaussian_noise(0.01, seed),
        PerturbSpec::gaussian_noise(0.05, seed),
        PerturbSpec::gaussian_noise(0.10, seed),
        PerturbSpec::downsample(2),
        PerturbSpec::random_mask(0.25, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = var_battery(2, 10);
        let json = cfg.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        v.as_object_mut().unwrap().remove("bogus");
        v["schema_version"] = serde_json::json!(99);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn missing_file_and_empty_seeds_fail_validation() {
        let mut cfg = var_battery(1, 0);
        cfg.systems.push(SystemSpec::File("/nonexistent/pool.sake".into()));
        assert!(cfg.validate().is_err());
        let mut cfg = var_battery(1, 0);
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn standard_sensitivity_axes() {
        let mut cfg = var_battery(1, 0);
        cfg.sensitivity = Some(SensitivityAxes::standard());
        let labels: Vec<String> = cfg.sensitivity_variants().into_iter().map(|v| v.0).collect();
        assert_eq!(labels.len(), 12);
        assert!(labels.contains(&"kappa=2".to_string()));
        assert!(labels.contains(&"B=500".to_string()));
    }
}
