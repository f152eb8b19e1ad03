//! Datasets and their Non-IID division across agents and RSUs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Batch, ModelError};
use crate::seeds::stream_seed;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

pub type AgentId = usize;
pub type RsuId = usize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: wrong magic number 0x{found:08x}, expected 0x{expected:08x}")]
    WrongMagic { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated file, expected {expected} bytes but found {found}")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset {0} is empty")]
    EmptyDataset(String),
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("synthetic dataset needs at least {NUM_CLASSES} examples, got {0}")]
    TooFewExamples(usize),
    #[error("not enough examples of label {label}: need {needed}, have {available}")]
    NotEnoughExamples { label: u8, needed: usize, available: usize },
    #[error("invalid partition request: {0}")]
    InvalidRequest(String),
    #[error("cannot exclude every label from pretraining")]
    AllLabelsExcluded,
}

/// Examples with features scaled to [0, 1] and integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    dim: usize,
    features: Vec<f32>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, dim: usize, features: Vec<f32>, labels: Vec<u8>) -> Result<Self, DataError> {
        let name = name.into();
        if labels.is_empty() {
            return Err(DataError::EmptyDataset(name));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(DataError::CountMismatch { images: if dim == 0 { 0 } else { features.len() / dim }, labels: labels.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(DataError::LabelOutOfRange { label, classes: NUM_CLASSES });
        }
        Ok(Self { name, dim, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, idx: usize) -> &[f32] {
        &self.features[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn label(&self, idx: usize) -> u8 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.labels, self.dim).expect("dataset invariants guarantee a valid batch")
    }

    /// Copies the selected examples into a new dataset.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Self::new(name, self.dim, features, labels)
    }

    pub fn label_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut hist = [0; NUM_CLASSES];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Indices of every example, grouped by label.
    pub fn indices_by_label(&self) -> [Vec<usize>; NUM_CLASSES] {
        let mut out: [Vec<usize>; NUM_CLASSES] = Default::default();
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }
}

impl From<ModelError> for DataError {
    fn from(e: ModelError) -> Self {
        DataError::InvalidRequest(e.to_string())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated { path: path.display().to_string(), expected: offset + 4, found: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::WrongMagic { path: path.display().to_string(), expected, found });
    }
    Ok(())
}

/// Reads an IDX image/label file pair (uncompressed, as distributed for MNIST).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    check_magic(&images, IMAGES_MAGIC, images_path)?;
    let n_images = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    let expected = 16 + n_images * dim;
    if images.len() < expected {
        return Err(DataError::Truncated { path: images_path.display().to_string(), expected, found: images.len() });
    }

    check_magic(&labels, LABELS_MAGIC, labels_path)?;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() < 8 + n_labels {
        return Err(DataError::Truncated { path: labels_path.display().to_string(), expected: 8 + n_labels, found: labels.len() });
    }
    if n_images != n_labels {
        return Err(DataError::CountMismatch { images: n_images, labels: n_labels });
    }
    let name = images_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if n_images == 0 {
        return Err(DataError::EmptyDataset(name));
    }

    let features = images[16..expected].iter().map(|&b| b as f32 / 255.0).collect();
    LabeledDataset::new(name, dim, features, labels[8..8 + n_labels].to_vec())
}

/// Loads `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let dir = dir.as_ref();
    let train = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

pub const SYNTH_DIM: usize = 784;
const SYNTH_NOISE: f64 = 0.5;

fn synth_centers(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[0x5e_c7e5]));
    (0..NUM_CLASSES).map(|_| (0..SYNTH_DIM).map(|_| rng.gen_range(0.2..0.8)).collect()).collect()
}

fn synth_draw(centers: &[Vec<f64>], n: usize, stream: u64, name: &str) -> Result<LabeledDataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let noise = Normal::new(0.0, SYNTH_NOISE).expect("valid normal");
    let mut labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * SYNTH_DIM);
    for &l in &labels {
        for &c in &centers[l as usize] {
            features.push((c + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
        }
    }
    LabeledDataset::new(name, SYNTH_DIM, features, labels)
}

/// Ten Gaussian clusters in 784 dimensions, one per label, with balanced
/// labels. The same seed always yields the same data.
pub fn synth_dataset(n: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    if n < NUM_CLASSES {
        return Err(DataError::TooFewExamples(n));
    }
    synth_draw(&synth_centers(seed), n, stream_seed(seed, &[1]), &format!("synthetic-{n}-{seed}"))
}

/// Train and held-out test sets sharing the same class centers.
pub fn synth_train_test(n_train: usize, n_test: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if n_train < NUM_CLASSES {
        return Err(DataError::TooFewExamples(n_train));
    }
    if n_test < NUM_CLASSES {
        return Err(DataError::TooFewExamples(n_test));
    }
    let centers = synth_centers(seed);
    let train = synth_draw(&centers, n_train, stream_seed(seed, &[1]), &format!("synthetic-{n_train}-{seed}"))?;
    let test = synth_draw(&centers, n_test, stream_seed(seed, &[2]), &format!("synthetic-test-{n_test}-{seed}"))?;
    Ok((train, test))
}

/// One agent's local shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub agent_id: AgentId,
    pub rsu_id: RsuId,
    pub example_indices: Vec<usize>,
    pub label_profile: BTreeSet<u8>,
    pub n_points: usize,
}

impl Partition {
    fn build(agent_id: AgentId, rsu_id: RsuId, example_indices: Vec<usize>, ds: &LabeledDataset) -> Self {
        let label_profile = example_indices.iter().map(|&i| ds.label(i)).collect();
        let n_points = example_indices.len();
        Self { agent_id, rsu_id, example_indices, label_profile, n_points }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Non-IID across RSUs, IID among the agents of one RSU.
    #[serde(rename = "scenario1")]
    ScenarioI,
    /// Every RSU sees all labels; agents within an RSU are Non-IID.
    #[serde(rename = "scenario2")]
    ScenarioII,
    #[serde(rename = "pretrain")]
    PretrainSkew,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scenario: Scenario,
    pub seed: u64,
    pub partitions: Vec<Partition>,
}

impl PartitionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Every index claimed by any partition.
    pub fn used_indices(&self) -> BTreeSet<usize> {
        self.partitions.iter().flat_map(|p| p.example_indices.iter().copied()).collect()
    }

    pub fn rsu_ids(&self) -> BTreeSet<RsuId> {
        self.partitions.iter().map(|p| p.rsu_id).collect()
    }

    pub fn agents_of(&self, rsu: RsuId) -> impl Iterator<Item = &Partition> {
        self.partitions.iter().filter(move |p| p.rsu_id == rsu)
    }

    /// Distinct labels present among an RSU's agents.
    pub fn rsu_labels(&self, rsu: RsuId) -> BTreeSet<u8> {
        self.agents_of(rsu).flat_map(|p| p.label_profile.iter().copied()).collect()
    }

    pub fn pooled_indices(&self) -> Vec<usize> {
        self.partitions.iter().flat_map(|p| p.example_indices.iter().copied()).collect()
    }
}

/// Full control over how a dataset is divided. [`partition_label_skew`] covers
/// the common case.
#[derive(Debug, Clone)]
pub struct SkewRequest {
    pub scenario: Scenario,
    pub n_agents: usize,
    pub n_rsus: usize,
    pub labels_per_unit: usize,
    pub seed: u64,
    /// Examples per agent; `None` takes the largest size every label can supply.
    pub samples_per_agent: Option<usize>,
    /// Optional unbalanced agent counts per RSU; must sum to `n_agents`.
    pub agents_per_rsu: Option<Vec<usize>>,
    /// Restrict drawing to these indices; `None` means the whole dataset.
    pub pool: Option<Vec<usize>>,
}

impl SkewRequest {
    pub fn new(scenario: Scenario, n_agents: usize, n_rsus: usize, labels_per_unit: usize, seed: u64) -> Self {
        Self { scenario, n_agents, n_rsus, labels_per_unit, seed, samples_per_agent: None, agents_per_rsu: None, pool: None }
    }

    fn rsu_sizes(&self) -> Result<Vec<usize>, DataError> {
        if self.n_rsus == 0 || self.n_agents == 0 {
            return Err(DataError::InvalidRequest("need at least one agent and one RSU".into()));
        }
        match &self.agents_per_rsu {
            Some(sizes) => {
                if sizes.len() != self.n_rsus || sizes.iter().sum::<usize>() != self.n_agents || sizes.contains(&0) {
                    return Err(DataError::InvalidRequest(format!(
                        "agents_per_rsu {sizes:?} must list {} positive counts summing to {}",
                        self.n_rsus, self.n_agents
                    )));
                }
                Ok(sizes.clone())
            }
            None => {
                if self.n_agents % self.n_rsus != 0 {
                    return Err(DataError::InvalidRequest(format!(
                        "{} agents cannot be split evenly over {} RSUs",
                        self.n_agents, self.n_rsus
                    )));
                }
                Ok(vec![self.n_agents / self.n_rsus; self.n_rsus])
            }
        }
    }
}

/// Splits `total` over `labels` as evenly as possible, earlier labels first.
fn spread(total: usize, labels: &[u8]) -> Vec<(u8, usize)> {
    let k = labels.len();
    labels.iter().enumerate().map(|(j, &l)| (l, total / k + usize::from(j < total % k))).collect()
}

fn pooled_by_label(ds: &LabeledDataset, pool: Option<&[usize]>, rng: &mut ChaCha8Rng) -> [Vec<usize>; NUM_CLASSES] {
    let mut by_label: [Vec<usize>; NUM_CLASSES] = Default::default();
    match pool {
        Some(indices) => {
            let mut sorted = indices.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            for i in sorted {
                by_label[ds.label(i) as usize].push(i);
            }
        }
        None => by_label = ds.indices_by_label(),
    }
    for v in by_label.iter_mut() {
        v.shuffle(rng);
    }
    by_label
}

/// Draws per-agent label quotas out of shuffled per-label pools.
fn draw(
    ds: &LabeledDataset,
    by_label: &[Vec<usize>; NUM_CLASSES],
    agents: &[(AgentId, RsuId, Vec<u8>)],
    per_agent: usize,
) -> Result<Vec<Partition>, DataError> {
    let mut cursor = [0usize; NUM_CLASSES];
    let mut out = Vec::with_capacity(agents.len());
    for (agent_id, rsu_id, labels) in agents {
        let mut indices = Vec::with_capacity(per_agent);
        for (label, count) in spread(per_agent, labels) {
            let pool = &by_label[label as usize];
            let start = cursor[label as usize];
            if start + count > pool.len() {
                return Err(DataError::NotEnoughExamples { label, needed: start + count, available: pool.len() });
            }
            indices.extend_from_slice(&pool[start..start + count]);
            cursor[label as usize] += count;
        }
        out.push(Partition::build(*agent_id, *rsu_id, indices, ds));
    }
    Ok(out)
}

fn demand(agents: &[(AgentId, RsuId, Vec<u8>)], per_agent: usize) -> [usize; NUM_CLASSES] {
    let mut need = [0; NUM_CLASSES];
    for (_, _, labels) in agents {
        for (label, count) in spread(per_agent, labels) {
            need[label as usize] += count;
        }
    }
    need
}

/// Largest per-agent size whose label demand fits the pools.
fn max_feasible(agents: &[(AgentId, RsuId, Vec<u8>)], by_label: &[Vec<usize>; NUM_CLASSES]) -> usize {
    let fits = |s: usize| demand(agents, s).iter().zip(by_label).all(|(need, pool)| *need <= pool.len());
    let total: usize = by_label.iter().map(Vec::len).sum();
    let (mut lo, mut hi) = (0usize, total / agents.len().max(1));
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

fn check_sizes(
    agents: &[(AgentId, RsuId, Vec<u8>)],
    by_label: &[Vec<usize>; NUM_CLASSES],
    requested: Option<usize>,
) -> Result<usize, DataError> {
    let per_agent = match requested {
        Some(s) => s,
        None => max_feasible(agents, by_label),
    };
    let need = demand(agents, per_agent.max(1));
    for (label, (n, pool)) in need.iter().zip(by_label).enumerate() {
        if *n > pool.len() {
            return Err(DataError::NotEnoughExamples { label: label as u8, needed: *n, available: pool.len() });
        }
    }
    // Every agent must hold at least one example of each of its labels.
    let widest = agents.iter().map(|a| a.2.len()).max().unwrap_or(1);
    if per_agent < widest {
        return Err(DataError::InvalidRequest(format!(
            "{per_agent} examples per agent cannot cover {widest} labels each"
        )));
    }
    Ok(per_agent)
}

/// Cyclic window of `width` labels from a label permutation.
fn window(perm: &[u8], start: usize, width: usize) -> Vec<u8> {
    (0..width).map(|j| perm[(start + j) % perm.len()]).collect()
}

/// Label-skewed Non-IID division of `ds` across agents grouped under RSUs.
pub fn partition_with(ds: &LabeledDataset, req: &SkewRequest) -> Result<PartitionPlan, DataError> {
    if !(1..=NUM_CLASSES).contains(&req.labels_per_unit) {
        return Err(DataError::InvalidRequest(format!("labels_per_unit {} outside [1, {NUM_CLASSES}]", req.labels_per_unit)));
    }
    let sizes = req.rsu_sizes()?;
    let lpu = req.labels_per_unit;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(req.seed, &[0x9a47]));
    let mut perm: Vec<u8> = (0..NUM_CLASSES as u8).collect();
    perm.shuffle(&mut rng);

    let mut agents = Vec::with_capacity(req.n_agents);
    let mut next_agent = 0;
    for (rsu, &count) in sizes.iter().enumerate() {
        match req.scenario {
            Scenario::ScenarioI => {
                let labels = window(&perm, rsu * lpu, lpu);
                for _ in 0..count {
                    agents.push((next_agent, rsu, labels.clone()));
                    next_agent += 1;
                }
            }
            Scenario::ScenarioII => {
                if count * lpu < NUM_CLASSES {
                    return Err(DataError::InvalidRequest(format!(
                        "RSU {rsu} has {count} agents x {lpu} labels, too few to cover all {NUM_CLASSES} labels"
                    )));
                }
                let mut rsu_perm = perm.clone();
                rsu_perm.shuffle(&mut rng);
                for j in 0..count {
                    agents.push((next_agent, rsu, window(&rsu_perm, j * lpu, lpu)));
                    next_agent += 1;
                }
            }
            Scenario::PretrainSkew => {
                return Err(DataError::InvalidRequest("use pretrain_split for the pretraining plan".into()));
            }
        }
    }

    let by_label = pooled_by_label(ds, req.pool.as_deref(), &mut rng);
    let per_agent = check_sizes(&agents, &by_label, req.samples_per_agent)?;
    let partitions = draw(ds, &by_label, &agents, per_agent)?;
    Ok(PartitionPlan { scenario: req.scenario, seed: req.seed, partitions })
}

pub fn partition_label_skew(
    ds: &LabeledDataset,
    n_agents: usize,
    n_rsus: usize,
    scenario: Scenario,
    labels_per_unit: usize,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    partition_with(ds, &SkewRequest::new(scenario, n_agents, n_rsus, labels_per_unit, seed))
}

/// Pretraining shards drawn only from labels outside `excluded`.
#[derive(Debug, Clone)]
pub struct PretrainRequest {
    pub n_agents: usize,
    pub excluded_labels: BTreeSet<u8>,
    pub seed: u64,
    /// Examples per pretraining agent; `None` uses an equal share of the pool
    /// restricted to allowed labels.
    pub samples_per_agent: Option<usize>,
}

pub fn pretrain_with(ds: &LabeledDataset, req: &PretrainRequest) -> Result<PartitionPlan, DataError> {
    if req.n_agents == 0 {
        return Err(DataError::InvalidRequest("need at least one pretraining agent".into()));
    }
    if let Some(&bad) = req.excluded_labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(DataError::LabelOutOfRange { label: bad, classes: NUM_CLASSES });
    }
    let allowed: Vec<u8> = (0..NUM_CLASSES as u8).filter(|l| !req.excluded_labels.contains(l)).collect();
    if allowed.is_empty() {
        return Err(DataError::AllLabelsExcluded);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(req.seed, &[0x7e7a]));
    let by_label = pooled_by_label(ds, None, &mut rng);
    let agents: Vec<_> = (0..req.n_agents).map(|a| (a, 0, allowed.clone())).collect();
    let per_agent = check_sizes(&agents, &by_label, req.samples_per_agent)?;
    let partitions = draw(ds, &by_label, &agents, per_agent)?;
    Ok(PartitionPlan { scenario: Scenario::PretrainSkew, seed: req.seed, partitions })
}

pub fn pretrain_split(
    ds: &LabeledDataset,
    n_pretrain_agents: usize,
    excluded_labels: &BTreeSet<u8>,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    pretrain_with(
        ds,
        &PretrainRequest { n_agents: n_pretrain_agents, excluded_labels: excluded_labels.clone(), seed, samples_per_agent: None },
    )
}

/// Indices not claimed by `plan`, in ascending order.
pub fn remaining_indices(ds: &LabeledDataset, plan: &PartitionPlan) -> Vec<usize> {
    let used = plan.used_indices();
    (0..ds.len()).filter(|i| !used.contains(i)).collect()
}

/// Total examples per RSU (`n_k`).
pub fn rsu_sizes(plan: &PartitionPlan) -> BTreeMap<RsuId, usize> {
    let mut out = BTreeMap::new();
    for p in &plan.partitions {
        *out.entry(p.rsu_id).or_insert(0) += p.n_points;
    }
    out
}
