//! Run configuration: one TOML document with a section per subsystem.
//! Unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::data::{RsuId, Scenario};
use crate::federation::{Baseline, RsuSetup, DEFAULT_LAR, DEFAULT_MU1, DEFAULT_MU2};
use crate::heterogeneity::HeterogeneityConfig;
use crate::model::{ModelArchitecture, ProximalSpec, SgdOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory with the four uncompressed MNIST IDX files.
    pub mnist_dir: PathBuf,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    /// Seed of the synthetic generator; fixed across run seeds so that every
    /// seed sees the same data.
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            mnist_dir: PathBuf::from("data/mnist"),
            synthetic_train: 60_000,
            synthetic_test: 10_000,
            synthetic_seed: 2022,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub scenario: Scenario,
    pub n_agents: usize,
    pub n_rsus: usize,
    pub labels_per_unit: usize,
    pub samples_per_agent: Option<usize>,
    pub agents_per_rsu: Option<Vec<usize>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::ScenarioI,
            n_agents: 100,
            n_rsus: 10,
            labels_per_unit: 2,
            samples_per_agent: None,
            agents_per_rsu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub n_agents: usize,
    pub excluded_labels: BTreeSet<u8>,
    pub samples_per_agent: Option<usize>,
    pub max_epochs: usize,
    /// Stop once the best accuracy gained less than `min_gain` over this many epochs.
    pub patience: usize,
    pub min_gain: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_agents: 10,
            excluded_labels: [7, 8, 9].into_iter().collect(),
            samples_per_agent: Some(1000),
            max_epochs: 30,
            patience: 3,
            min_gain: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Local epochs per agent per local round.
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 2, lr: 0.1, batch_size: 10 }
    }
}

impl TrainingConfig {
    pub fn sgd(&self) -> SgdOptions {
        SgdOptions { lr: self.lr, batch_size: self.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub mu1: f64,
    pub mu2: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self { mu1: DEFAULT_MU1, mu2: DEFAULT_MU2 }
    }
}

/// Per-RSU overrides; absent fields fall back to the shared settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsuOverride {
    pub id: RsuId,
    pub csr: Option<f64>,
    pub scd_seconds: Option<u64>,
    pub fsr: Option<f64>,
    pub lar: Option<usize>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub rounds: u64,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// Train a centralized reference for MSE columns.
    pub centralized_reference: bool,
    /// Dump the global model every this many rounds (0 disables).
    pub snapshot_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { rounds: 60, seeds: vec![1], output_dir: None, centralized_reference: false, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelArchitecture,
    pub partition: PartitionConfig,
    pub pretrain: PretrainConfig,
    pub training: TrainingConfig,
    pub federation: FederationConfig,
    #[serde(deserialize_with = "heterogeneity_section")]
    pub heterogeneity: HeterogeneityConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rsu: Vec<RsuOverride>,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelArchitecture::mnist(),
            partition: PartitionConfig::default(),
            pretrain: PretrainConfig::default(),
            training: TrainingConfig::default(),
            federation: FederationConfig::default(),
            heterogeneity: default_heterogeneity(),
            rsu: Vec::new(),
            run: RunSection::default(),
        }
    }
}

fn default_heterogeneity() -> HeterogeneityConfig {
    HeterogeneityConfig { csr: 0.1, scd_seconds: 1, fsr: 1.0, lar: DEFAULT_LAR }
}

/// Keys missing from `[heterogeneity]` take the run defaults rather than the
/// connectivity model's all-connected defaults.
fn heterogeneity_section<'de, D: serde::Deserializer<'de>>(d: D) -> Result<HeterogeneityConfig, D::Error> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Partial {
        csr: Option<f64>,
        scd_seconds: Option<u64>,
        fsr: Option<f64>,
        lar: Option<usize>,
    }
    let p = Partial::deserialize(d)?;
    let base = default_heterogeneity();
    Ok(HeterogeneityConfig {
        csr: p.csr.unwrap_or(base.csr),
        scd_seconds: p.scd_seconds.unwrap_or(base.scd_seconds),
        fsr: p.fsr.unwrap_or(base.fsr),
        lar: p.lar.unwrap_or(base.lar),
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: String| Err(ExperimentError::Config(m));
        self.model.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        let p = &self.partition;
        if p.n_rsus == 0 || p.n_agents < p.n_rsus {
            return err(format!("need n_agents >= n_rsus >= 1, got {} agents and {} RSUs", p.n_agents, p.n_rsus));
        }
        if self.training.epochs == 0 {
            return err("training.epochs must be at least 1".into());
        }
        self.training.sgd().validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.pretrain.n_agents == 0 {
            return err("pretrain.n_agents must be at least 1".into());
        }
        if self.run.seeds.is_empty() {
            return err("run.seeds must list at least one seed".into());
        }
        let mut seen = BTreeSet::new();
        for o in &self.rsu {
            if o.id >= p.n_rsus {
                return err(format!("override for RSU {} but only {} RSUs exist", o.id, p.n_rsus));
            }
            if !seen.insert(o.id) {
                return err(format!("RSU {} overridden twice", o.id));
            }
        }
        for k in 0..p.n_rsus {
            let s = self.rsu_setup(k);
            s.het.validate().map_err(|e| ExperimentError::Config(format!("RSU {k}: {e}")))?;
            s.prox.validate().map_err(|e| ExperimentError::Config(format!("RSU {k}: {e}")))?;
        }
        Ok(())
    }

    /// Effective settings for one RSU.
    pub fn rsu_setup(&self, rsu: RsuId) -> RsuSetup {
        let mut het = self.heterogeneity;
        let mut prox = ProximalSpec { mu1: self.federation.mu1, mu2: self.federation.mu2 };
        if let Some(o) = self.rsu.iter().find(|o| o.id == rsu) {
            het.csr = o.csr.unwrap_or(het.csr);
            het.scd_seconds = o.scd_seconds.unwrap_or(het.scd_seconds);
            het.fsr = o.fsr.unwrap_or(het.fsr);
            het.lar = o.lar.unwrap_or(het.lar);
            prox.mu1 = o.mu1.unwrap_or(prox.mu1);
            prox.mu2 = o.mu2.unwrap_or(prox.mu2);
        }
        RsuSetup { het, prox }
    }

    pub fn rsu_setups(&self) -> BTreeMap<RsuId, RsuSetup> {
        (0..self.partition.n_rsus).map(|k| (k, self.rsu_setup(k))).collect()
    }

    /// Applies a framework preset to every RSU, dropping per-RSU overrides of
    /// the same knobs.
    pub fn apply_baseline(&mut self, baseline: Baseline) {
        let p = baseline.params();
        self.federation.mu1 = p.mu1;
        self.federation.mu2 = p.mu2;
        self.heterogeneity.lar = p.lar;
        for o in &mut self.rsu {
            o.mu1 = None;
            o.mu2 = None;
            o.lar = None;
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.output_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Sets `section.key` (or `section.key.sub`) from a TOML literal; bare
    /// words are taken as strings.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ExperimentError> {
        let mut doc = toml::Value::try_from(&*self).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let value = parse_literal(raw);
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().ok_or_else(|| ExperimentError::Config("empty key".into()))?;
        let mut cursor = &mut doc;
        for part in parents {
            cursor = cursor
                .as_table_mut()
                .and_then(|t| t.get_mut(*part))
                .ok_or_else(|| ExperimentError::Config(format!("unknown config section {key:?}")))?;
        }
        let table = cursor.as_table_mut().ok_or_else(|| ExperimentError::Config(format!("{key:?} is not inside a section")))?;
        table.insert(last.to_string(), value);
        let text = toml::to_string(&doc).map_err(|e| ExperimentError::Config(e.to_string()))?;
        *self = RunConfig::from_toml(&text).map_err(|e| ExperimentError::Config(format!("{key}={raw}: {e}")))?;
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
