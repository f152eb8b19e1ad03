use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, RunConfig};
use super::ExperimentError;
use crate::data::{
    load_mnist_dir, partition_with, pretrain_with, remaining_indices, synth_train_test, LabeledDataset, PartitionPlan,
    PretrainRequest, SkewRequest,
};
use crate::federation::{FedError, Hierarchy};
use crate::metrics::{centralized_train, running_mse, MetricsWriter, RoundRecord, RunHeader, RunSeries};
use crate::model::{evaluate, init_params, sgd_epoch_indices, Anchors, ParamVector, ProximalSpec};
use crate::seeds::{stream_seed, tag};
use crate::snapshot::{self, Precision};

pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets, ExperimentError> {
    let (train, test) = match cfg.data.source {
        DataSource::Mnist => {
            if !cfg.data.mnist_dir.is_dir() {
                return Err(ExperimentError::Config(format!("MNIST directory {} does not exist", cfg.data.mnist_dir.display())));
            }
            load_mnist_dir(&cfg.data.mnist_dir)?
        }
        DataSource::Synthetic => synth_train_test(cfg.data.synthetic_train, cfg.data.synthetic_test, cfg.data.synthetic_seed)?,
    };
    if train.dim() != cfg.model.input_dim {
        return Err(ExperimentError::Config(format!("data has {} features but model.input_dim is {}", train.dim(), cfg.model.input_dim)));
    }
    Ok(Datasets { train, test })
}

/// The centrally pretrained starting model shared by every layer.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: ParamVector,
    pub acc_pre: f64,
    /// Test accuracy after each pretraining epoch, starting with the random init.
    pub curve: Vec<f64>,
    pub plan: PartitionPlan,
}

impl Pretrained {
    pub fn sha256(&self) -> String {
        sha256_hex(&snapshot::encode(&self.params, 0, Precision::F64))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Trains on the pooled label-restricted pretraining shards until accuracy
/// stops improving or `max_epochs` is reached.
pub fn run_pretrain(cfg: &RunConfig, data: &Datasets, seed: u64) -> Result<Pretrained, ExperimentError> {
    let pc = &cfg.pretrain;
    let plan = pretrain_with(
        &data.train,
        &PretrainRequest {
            n_agents: pc.n_agents,
            excluded_labels: pc.excluded_labels.clone(),
            seed: stream_seed(seed, &[tag::PARTITION, 0]),
            samples_per_agent: pc.samples_per_agent,
        },
    )?;
    let pooled = plan.pooled_indices();
    let mut params = init_params(cfg.model, stream_seed(seed, &[tag::INIT]));
    let anchor = params.clone();
    let test = data.test.as_batch();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[tag::PRETRAIN]));
    let mut curve = vec![evaluate(&params, &test)?];
    let mut best = vec![curve[0]];
    for epoch in 1..=pc.max_epochs {
        let anchors = Anchors { rsu: &anchor, cloud: &anchor };
        sgd_epoch_indices(&mut params, &data.train, &pooled, anchors, ProximalSpec::none(), cfg.training.sgd(), &mut rng)?;
        let acc = evaluate(&params, &test)?;
        curve.push(acc);
        best.push(best[epoch - 1].max(acc));
        if epoch >= pc.patience && best[epoch] - best[epoch - pc.patience] < pc.min_gain {
            break;
        }
    }
    let acc_pre = *curve.last().expect("curve holds the init accuracy");
    if acc_pre < 0.5 {
        warn!("pretraining plateaued at accuracy {acc_pre:.4}, below 0.5");
    }
    info!("seed {seed}: pretrained for {} epochs, ACC_pre = {acc_pre:.4}", curve.len() - 1);
    Ok(Pretrained { params, acc_pre, curve, plan })
}

/// Federated shards drawn from everything the pretraining plan left unused.
pub fn federated_plan(cfg: &RunConfig, data: &Datasets, pretrain: &PartitionPlan, seed: u64) -> Result<PartitionPlan, ExperimentError> {
    let p = &cfg.partition;
    let mut req = SkewRequest::new(p.scenario, p.n_agents, p.n_rsus, p.labels_per_unit, stream_seed(seed, &[tag::PARTITION, 1]));
    req.samples_per_agent = p.samples_per_agent;
    req.agents_per_rsu = p.agents_per_rsu.clone();
    req.pool = Some(remaining_indices(&data.train, pretrain));
    Ok(partition_with(&data.train, &req)?)
}

/// Centralized SGD on the pooled federated data from the pretrained model,
/// one epoch per global round.
pub fn centralized_reference(
    cfg: &RunConfig,
    data: &Datasets,
    plan: &PartitionPlan,
    init: &ParamVector,
    seed: u64,
) -> Result<Vec<f64>, ExperimentError> {
    let (_, series) =
        centralized_train(&data.train, &plan.pooled_indices(), &data.test, init, cfg.run.rounds as usize, cfg.training.sgd(), seed)?;
    Ok(series)
}

/// Everything shared by the runs of one seed.
#[derive(Debug, Clone)]
pub struct SeedStage {
    pub seed: u64,
    pub pretrained: Pretrained,
    pub plan: PartitionPlan,
    pub centralized: Option<Vec<f64>>,
    /// Where the pretrained model was written, if anywhere.
    pub pretrained_path: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PretrainRecord {
    seed: u64,
    config_hash: String,
    acc_pre: f64,
    curve: Vec<f64>,
    sha256: String,
    model_size_bytes: usize,
}

pub fn prepare_seed(cfg: &RunConfig, data: &Datasets, seed: u64, out: Option<&Path>) -> Result<SeedStage, ExperimentError> {
    let pretrained = run_pretrain(cfg, data, seed)?;
    let plan = federated_plan(cfg, data, &pretrained.plan, seed)?;
    let centralized =
        if cfg.run.centralized_reference { Some(centralized_reference(cfg, data, &plan, &pretrained.params, seed)?) } else { None };
    let mut pretrained_path = None;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
        let path = dir.join("pretrained.bin");
        snapshot::write(&path, &pretrained.params, 0, Precision::F64)?;
        let record = PretrainRecord {
            seed,
            config_hash: cfg.hash(),
            acc_pre: pretrained.acc_pre,
            curve: pretrained.curve.clone(),
            sha256: pretrained.sha256(),
            model_size_bytes: cfg.model.size_bytes(),
        };
        write_text(&dir.join("pretrain.json"), &serde_json::to_string_pretty(&record).expect("serializes"))?;
        write_text(&dir.join("pretrain_partitions.json"), &pretrained.plan.to_json())?;
        write_text(&dir.join("partitions.json"), &plan.to_json())?;
        if let Some(c) = &centralized {
            crate::metrics::write_accuracy_csv(&dir.join("centralized.csv"), c)?;
        }
        pretrained_path = Some(path);
    }
    Ok(SeedStage { seed, pretrained, plan, centralized, pretrained_path })
}

/// Loads the pretrained model a run should start from, checking the file
/// still matches what pretraining produced.
pub fn load_verified_init(stage: &SeedStage) -> Result<ParamVector, ExperimentError> {
    match &stage.pretrained_path {
        None => Ok(stage.pretrained.params.clone()),
        Some(path) => {
            let bytes = fs::read(path).map_err(ExperimentError::io(path))?;
            let found = sha256_hex(&bytes);
            let expected = stage.pretrained.sha256();
            if found != expected {
                return Err(ExperimentError::Aborted(format!("{} hash {found} differs from pretrained model {expected}", path.display())));
            }
            Ok(snapshot::decode(&bytes)?.params)
        }
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(ExperimentError::io(path))
}

/// Refuses to reuse a directory that already holds results unless `overwrite`.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<(), ExperimentError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(ExperimentError::io(dir))?.next().is_some();
        if occupied {
            if !overwrite {
                return Err(ExperimentError::OutputExists(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(ExperimentError::io(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(ExperimentError::io(dir))
}

/// Runs the global round loop for one configuration and seed, writing the
/// run directory as it goes when `out` is given.
pub fn run_federated(
    cfg: &RunConfig,
    data: &Datasets,
    stage: &SeedStage,
    variant: &str,
    out: Option<&Path>,
) -> Result<RunSeries, ExperimentError> {
    cfg.validate()?;
    let init = load_verified_init(stage)?;
    let seed = stage.seed;
    let config_hash = cfg.hash();
    let header = RunHeader {
        variant: variant.to_string(),
        config_hash: config_hash.clone(),
        seed,
        acc_pre: stage.pretrained.acc_pre,
        pretrained_sha256: Some(stage.pretrained.sha256()),
        model_size_bytes: cfg.model.size_bytes(),
        config: serde_json::to_value(cfg).expect("config serializes"),
    };
    let mut series = RunSeries::new(header);

    let mut hierarchy = Hierarchy::new(&init, &stage.plan, &cfg.rsu_setups(), cfg.training.epochs, cfg.training.sgd(), seed)?;
    let mut oracle = hierarchy.connectivity()?;
    let rsus: Vec<usize> = hierarchy.rsus.keys().copied().collect();

    let mut sink = match out {
        Some(dir) => Some(RunSink::create(dir, cfg, &series.header, &rsus)?),
        None => None,
    };

    let test = data.test.as_batch();
    let mut accs = Vec::with_capacity(cfg.run.rounds as usize + 1);
    let start = Instant::now();
    let acc0 = evaluate(hierarchy.global(), &test)?;
    accs.push(acc0);
    let record = RoundRecord {
        round: 0,
        global_acc: acc0,
        delta_acc: acc0 - series.header.acc_pre,
        per_rsu_csr: Default::default(),
        stale_rsus: Default::default(),
        mse_running: stage.centralized.as_deref().map(|c| running_mse(&accs, c)).and_then(|m| m.last().copied()),
        wall_ms: start.elapsed().as_millis() as u64,
    };
    if let Some(s) = sink.as_mut() {
        s.write(&record, hierarchy.global(), cfg.run.snapshot_every)?;
    }
    series.push(record)?;

    for t in 1..=cfg.run.rounds {
        let started = Instant::now();
        let report = hierarchy.global_round(&data.train, &mut oracle).map_err(|e| match e {
            FedError::NonFinite { round, location } => {
                ExperimentError::Aborted(format!("first non-finite parameters in round {round} at {location} (seed {seed}, {variant})"))
            }
            other => other.into(),
        })?;
        let acc = evaluate(hierarchy.global(), &test)?;
        accs.push(acc);
        let record = RoundRecord {
            round: t,
            global_acc: acc,
            delta_acc: acc - series.header.acc_pre,
            per_rsu_csr: report.census.iter().map(|c| (c.rsu_id, c.csr())).collect(),
            stale_rsus: report.stale_rsus(),
            mse_running: stage.centralized.as_deref().and_then(|c| running_mse(&accs, c).get(t as usize).copied()),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(s) = sink.as_mut() {
            s.write(&record, hierarchy.global(), cfg.run.snapshot_every)?;
        }
        series.push(record)?;
    }
    info!("seed {seed} {variant}: final accuracy {:.4}", accs.last().copied().unwrap_or(f64::NAN));
    Ok(series)
}

struct RunSink {
    dir: PathBuf,
    metrics: MetricsWriter,
    timing: fs::File,
    config_hash: String,
    seed: u64,
}

impl RunSink {
    fn create(dir: &Path, cfg: &RunConfig, header: &RunHeader, rsus: &[usize]) -> Result<Self, ExperimentError> {
        fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
        write_text(&dir.join("config.toml"), &format!("# config_hash {} seed {}\n{}", header.config_hash, header.seed, cfg.to_toml()))?;
        write_text(&dir.join("header.json"), &serde_json::to_string_pretty(header).expect("serializes"))?;
        let metrics = MetricsWriter::create(&dir.join("metrics.csv"), rsus, &header.config_hash, header.seed)?;
        let timing_path = dir.join("timing.csv");
        let mut timing = fs::File::create(&timing_path).map_err(ExperimentError::io(&timing_path))?;
        writeln!(timing, "round,wall_ms,config_hash,seed").map_err(ExperimentError::io(&timing_path))?;
        Ok(Self { dir: dir.to_path_buf(), metrics, timing, config_hash: header.config_hash.clone(), seed: header.seed })
    }

    fn write(&mut self, record: &RoundRecord, global: &ParamVector, snapshot_every: u64) -> Result<(), ExperimentError> {
        self.metrics.write(record, None)?;
        writeln!(self.timing, "{},{},{},{}", record.round, record.wall_ms, self.config_hash, self.seed).map_err(ExperimentError::io(self.dir.join("timing.csv")))?;
        if snapshot_every > 0 && record.round % snapshot_every == 0 {
            let snaps = self.dir.join("snapshots");
            fs::create_dir_all(&snaps).map_err(ExperimentError::io(&snaps))?;
            snapshot::write(&snaps.join(format!("round-{:05}.bin", record.round)), global, record.round, Precision::F32)?;
        }
        Ok(())
    }
}

/// Pretrains and runs one configuration for every configured seed. Output
/// goes to `<out>/seed-<s>/` (shared artifacts) and `<out>/seed-<s>/run/`.
pub fn run_all_seeds(cfg: &RunConfig, data: &Datasets, out: Option<&Path>) -> Result<Vec<RunSeries>, ExperimentError> {
    let mut all = Vec::new();
    for &seed in &cfg.run.seeds {
        let seed_dir = out.map(|o| o.join(format!("seed-{seed}")));
        let stage = prepare_seed(cfg, data, seed, seed_dir.as_deref())?;
        let run_dir = seed_dir.as_ref().map(|d| d.join("run"));
        all.push(run_federated(cfg, data, &stage, "run", run_dir.as_deref())?);
    }
    Ok(all)
}
