//! Experiment configuration files (TOML, schema version 1).
//!
//! Unknown keys are rejected everywhere so that a misspelled field cannot
//! silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{BaseTask, Transform};
use crate::error::{Error, Result};
use crate::federation::Weighting;
use crate::nn::{HyperParams, LayerSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Synthetic,
    Idx,
}

/// One domain: either a synthetic shift of the base task or a pair of IDX files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub name: String,
    #[serde(default = "synthetic")]
    pub kind: DomainKind,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub translation: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Training samples per domain; synthetic domains draw
    /// `n_train + n_test` samples and split them.
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
}

fn synthetic() -> DomainKind {
    DomainKind::Synthetic
}

fn default_n() -> usize {
    600
}

impl DomainEntry {
    pub fn synthetic(name: &str, rotation_deg: f64) -> Self {
        DomainEntry {
            name: name.into(),
            kind: DomainKind::Synthetic,
            rotation_deg,
            scale: Vec::new(),
            translation: Vec::new(),
            permutation: None,
            noise_sigma: 0.0,
            n_train: default_n(),
            n_test: default_n(),
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
        }
    }

    pub fn transform(&self) -> Transform {
        Transform {
            rotation_deg: self.rotation_deg,
            scale: self.scale.clone(),
            translation: self.translation.clone(),
            permutation: self.permutation.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            DomainKind::Synthetic => {
                if self.images.is_some() || self.labels.is_some() || self.test_images.is_some() || self.test_labels.is_some() {
                    return Err(Error::Config(format!("synthetic domain '{}' must not name IDX files", self.name)));
                }
                if self.n_train == 0 || self.n_test == 0 {
                    return Err(Error::Config(format!("domain '{}' needs n_train and n_test >= 1", self.name)));
                }
            }
            DomainKind::Idx => {
                if self.images.is_none() || self.labels.is_none() {
                    return Err(Error::Config(format!("idx domain '{}' needs images and labels", self.name)));
                }
                if self.test_images.is_some() != self.test_labels.is_some() {
                    return Err(Error::Config(format!(
                        "idx domain '{}' needs both test_images and test_labels",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSettings {
    pub rounds: usize,
    pub epochs_source: usize,
    pub epochs_finetune: usize,
    pub epochs_idd: usize,
    pub final_round_extra: usize,
    pub weighting: Weighting,
}

impl Default for ProtocolSettings {
    /// 30 rounds of 4 epochs per phase: a 120-epoch client budget.
    fn default() -> Self {
        ProtocolSettings {
            rounds: 30,
            epochs_source: 4,
            epochs_finetune: 4,
            epochs_idd: 4,
            final_round_extra: 0,
            weighting: Weighting::Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub generator: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            generator: vec![64, 32],
            head: Vec::new(),
        }
    }
}

impl Architecture {
    pub fn layer_spec(&self, input_dim: usize, classes: usize) -> LayerSpec {
        LayerSpec::mlp(input_dim, &self.generator, &self.head, classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rounds,
    ClientsPerDomain,
    SourceSubset,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Rounds => "rounds",
            SweepAxis::ClientsPerDomain => "clients_per_domain",
            SweepAxis::SourceSubset => "source_subset",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rounds" => Ok(SweepAxis::Rounds),
            "clients" | "clients_per_domain" => Ok(SweepAxis::ClientsPerDomain),
            "sources" | "source_subset" => Ok(SweepAxis::SourceSubset),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}' (rounds|clients|sources)"))),
        }
    }
}

/// Sweep values: round counts, split factors, or admissible subset sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub domains: Vec<DomainEntry>,
    pub target_domain: String,
    /// Restricts which non-target domains act as sources; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_domains: Option<Vec<String>>,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub protocol: ProtocolSettings,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default = "BaseTask::three_class")]
    pub base_task: BaseTask,
    /// Each source domain is dealt into this many equally sized clients.
    #[serde(default = "one")]
    pub clients_per_domain: usize,
    /// Test share for IDX domains that come without a test pair. Synthetic
    /// domains use `n_test` instead.
    #[serde(default = "half")]
    pub test_fraction: f64,
    /// Per-domain z-scoring of features.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_variant() -> String {
    "fact".into()
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

impl ExperimentConfig {
    /// Three sources at 0, 20 and 340 degrees and a target at 60 degrees,
    /// 600 train and 600 test samples each, seeds 0..10.
    pub fn default_synthetic() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            domains: vec![
                DomainEntry::synthetic("rot0", 0.0),
                DomainEntry::synthetic("rot20", 20.0),
                DomainEntry::synthetic("rot340", 340.0),
                DomainEntry::synthetic("target60", 60.0),
            ],
            target_domain: "target60".into(),
            source_domains: None,
            variant: default_variant(),
            protocol: ProtocolSettings::default(),
            hyper: HyperParams::default(),
            architecture: Architecture::default(),
            base_task: BaseTask::three_class(),
            clients_per_domain: 1,
            test_fraction: 0.5,
            standardize: false,
            repeats: None,
            seeds: (0..10).collect(),
            sweep: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative IDX paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            for d in &mut cfg.domains {
                for p in [&mut d.images, &mut d.labels, &mut d.test_images, &mut d.test_labels]
                    .into_iter()
                    .flatten()
                {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut names: Vec<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("domain names must be unique".into()));
        }
        let targets = self.domains.iter().filter(|d| d.name == self.target_domain).count();
        if targets != 1 {
            return Err(Error::Config(format!(
                "target_domain '{}' must name exactly one domain",
                self.target_domain
            )));
        }
        for d in &self.domains {
            d.validate()?;
        }
        if let Some(srcs) = &self.source_domains {
            for s in srcs {
                if s == &self.target_domain || !names.contains(&s.as_str()) {
                    return Err(Error::Config(format!("'{s}' is not a non-target domain")));
                }
            }
        }
        if self.source_names().is_empty() {
            return Err(Error::Config("no source domains".into()));
        }
        if let Some(r) = self.repeats {
            if r != self.seeds.len() {
                return Err(Error::Config(format!("repeats = {r} but {} seeds listed", self.seeds.len())));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.clients_per_domain == 0 {
            return Err(Error::Config("clients_per_domain must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0,1)", self.test_fraction)));
        }
        self.hyper.validate()?;
        self.protocol_config(0)?.validate()?;
        crate::strategy::StrategyRegistry::builtin().get(&self.variant)?;
        Ok(())
    }

    /// Source domain names in declaration order.
    pub fn source_names(&self) -> Vec<String> {
        self.domains
            .iter()
            .map(|d| d.name.clone())
            .filter(|n| n != &self.target_domain)
            .filter(|n| self.source_domains.as_ref().is_none_or(|s| s.contains(n)))
            .collect()
    }

    pub fn protocol_config(&self, seed: u64) -> Result<crate::federation::ProtocolConfig> {
        let p = &self.protocol;
        Ok(crate::federation::ProtocolConfig {
            rounds: p.rounds,
            epochs_source: p.epochs_source,
            epochs_finetune: p.epochs_finetune,
            epochs_idd: p.epochs_idd,
            final_round_extra: p.final_round_extra,
            variant: self.variant.clone(),
            rng_seed: seed,
            weighting: p.weighting,
        })
    }

    /// Hash of the resolved configuration, ignoring seeds and sweep settings.
    /// Key order in the source file does not matter.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.seeds.clear();
        canon.repeats = None;
        canon.sweep = None;
        let json = serde_json::to_string(&canon).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
target_domain = "t"
seeds = [1, 2]

[[domains]]
name = "a"

[[domains]]
name = "b"
rotation_deg = 20.0

[[domains]]
name = "t"
rotation_deg = 60.0
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.variant, "fact");
        assert_eq!(cfg.protocol.rounds, 30);
        assert_eq!(cfg.hyper.batch_size, 128);
        assert_eq!(cfg.source_names(), vec!["a", "b"]);
        assert_eq!(cfg.domains[0].n_train, 600);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MINIMAL.replace("seeds = [1, 2]", "seeds = [1, 2]\nrepeat = 2");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("rotation_deg = 20.0", "rotation = 20.0");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = format!("{MINIMAL}\n[hyper]\neta = 0.1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let text = MINIMAL.replace("target_domain = \"t\"", "target_domain = \"zz\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("seeds = [1, 2]", "seeds = [1, 2]\nrepeats = 3");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("seeds = [1, 2]", "seeds = [1, 2]\nvariant = \"mcd\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn fingerprint_ignores_key_order_and_seeds() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let permuted = r#"
seeds = [7]
target_domain = "t"
schema_version = 1

[[domains]]
name = "a"

[[domains]]
rotation_deg = 20.0
name = "b"

[[domains]]
rotation_deg = 60.0
name = "t"
"#;
        let b = ExperimentConfig::from_toml_str(permuted).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.hyper.eta0 = 0.01;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default_synthetic();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_default_config_matches_code() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
        let cfg = ExperimentConfig::load(path).unwrap();
        assert_eq!(cfg, ExperimentConfig::default_synthetic());
    }
}
