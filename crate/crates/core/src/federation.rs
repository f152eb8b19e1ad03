//! The three federation roles: traffic agents train locally, RSUs select
//! connected agents and pre-aggregate over several local rounds, and the cloud
//! averages all RSU models.
//!
//! Aggregation folds always run in ascending id order so that floating-point
//! sums do not depend on scheduling.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AgentId, LabeledDataset, Partition, PartitionPlan, RsuId};
use crate::heterogeneity::{ConnectivityOracle, HeterogeneityConfig, HeterogeneityError, RsuCensus};
use crate::model::{sgd_epoch_indices, Anchors, ModelError, ParamVector, ProximalSpec, SgdOptions};
use crate::seeds::{stream_seed, tag};

const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Heterogeneity(#[from] HeterogeneityError),
    #[error("no connected agents at RSU {rsu} in round {round}")]
    NoConnectedAgents { rsu: RsuId, round: u64 },
    #[error("no model received from agent {0}")]
    MissingModel(AgentId),
    #[error("agent {agent} is not registered at RSU {rsu}")]
    ForeignAgent { agent: AgentId, rsu: RsuId },
    #[error("aggregation weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("nothing to aggregate")]
    EmptyAggregation,
    #[error("non-finite parameters after aggregation in round {round} at {location}")]
    NonFinite { round: u64, location: String },
    #[error("unknown framework preset {0:?}; expected one of fedavg, fedprox, hierfavg, h2fed")]
    UnknownBaseline(String),
    #[error("invalid federation setup: {0}")]
    Setup(String),
}

/// Agents an RSU aggregates in one local round, weighted by `n_i / sum(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSet {
    pub rsu_id: RsuId,
    pub round: u64,
    pub weights: BTreeMap<AgentId, f64>,
}

impl SelectionSet {
    /// `sizes` maps each selected agent to its shard size.
    pub fn new(rsu_id: RsuId, round: u64, sizes: &BTreeMap<AgentId, usize>) -> Self {
        let total: usize = sizes.values().sum();
        let weights = sizes.iter().map(|(&a, &n)| (a, n as f64 / total as f64)).collect();
        Self { rsu_id, round, weights }
    }

    pub fn selected(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.weights.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `sum_i weight_i * model_i`, folded in iteration order.
pub fn weighted_average<'a>(mut terms: impl Iterator<Item = (&'a ParamVector, f64)>) -> Result<ParamVector, FedError> {
    let (first, w0) = terms.next().ok_or(FedError::EmptyAggregation)?;
    let mut acc = ParamVector::zeros(first.arch());
    for (a, x) in acc.as_mut_slice().iter_mut().zip(first.as_slice()) {
        *a = w0 * x;
    }
    for (model, w) in terms {
        acc.ensure_same_layout(model)?;
        for (a, x) in acc.as_mut_slice().iter_mut().zip(model.as_slice()) {
            *a += w * x;
        }
    }
    Ok(acc)
}

fn check_weight_sum<'a>(weights: impl Iterator<Item = &'a f64>) -> Result<(), FedError> {
    let sum: f64 = weights.sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(FedError::WeightSum(sum));
    }
    Ok(())
}

/// Pre-aggregation at an RSU over the agents in `sel`.
pub fn rsu_aggregate<P: Borrow<ParamVector>>(models: &BTreeMap<AgentId, P>, sel: &SelectionSet) -> Result<ParamVector, FedError> {
    if sel.is_empty() {
        return Err(FedError::NoConnectedAgents { rsu: sel.rsu_id, round: sel.round });
    }
    check_weight_sum(sel.weights.values())?;
    let terms = sel
        .weights
        .iter()
        .map(|(id, &w)| models.get(id).map(|m| (m.borrow(), w)).ok_or(FedError::MissingModel(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    weighted_average(terms.into_iter())
}

/// Global aggregation `w = sum_k (n_k / n) w_k`.
pub fn cloud_aggregate<P: Borrow<ParamVector>>(
    rsu_models: &BTreeMap<RsuId, P>,
    rsu_weights: &BTreeMap<RsuId, f64>,
) -> Result<ParamVector, FedError> {
    if rsu_models.is_empty() {
        return Err(FedError::EmptyAggregation);
    }
    check_weight_sum(rsu_weights.values())?;
    let terms = rsu_models
        .iter()
        .map(|(id, m)| {
            rsu_weights.get(id).map(|&w| (m.borrow(), w)).ok_or_else(|| FedError::Setup(format!("no cloud weight for RSU {id}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    weighted_average(terms.into_iter())
}

/// Named parameter settings under which the hierarchy reproduces other
/// federated methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    FedAvg,
    FedProx,
    HierFAVG,
    H2Fed,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::FedAvg, Baseline::FedProx, Baseline::HierFAVG, Baseline::H2Fed];

    pub fn params(self) -> FrameworkParams {
        match self {
            Baseline::FedAvg => FrameworkParams { mu1: 0.0, mu2: 0.0, lar: 1 },
            Baseline::FedProx => FrameworkParams { mu1: 0.0, mu2: DEFAULT_MU2, lar: 1 },
            Baseline::HierFAVG => FrameworkParams { mu1: 0.0, mu2: 0.0, lar: DEFAULT_LAR },
            Baseline::H2Fed => FrameworkParams { mu1: DEFAULT_MU1, mu2: DEFAULT_MU2, lar: DEFAULT_LAR },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Baseline::FedAvg => "fedavg",
            Baseline::FedProx => "fedprox",
            Baseline::HierFAVG => "hierfavg",
            Baseline::H2Fed => "h2fed",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "fedavg" => Ok(Baseline::FedAvg),
            "fedprox" => Ok(Baseline::FedProx),
            "hierfavg" => Ok(Baseline::HierFAVG),
            "h2fed" => Ok(Baseline::H2Fed),
            _ => Err(FedError::UnknownBaseline(s.to_string())),
        }
    }
}

pub const DEFAULT_MU1: f64 = 0.001;
pub const DEFAULT_MU2: f64 = 0.005;
pub const DEFAULT_LAR: usize = 3;

/// Proximal weights and local aggregation rounds applied to every RSU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameworkParams {
    pub mu1: f64,
    pub mu2: f64,
    pub lar: usize,
}

impl FrameworkParams {
    pub fn prox(&self) -> ProximalSpec {
        ProximalSpec { mu1: self.mu1, mu2: self.mu2 }
    }
}

pub fn make_baseline(name: &str) -> Result<FrameworkParams, FedError> {
    Ok(name.parse::<Baseline>()?.params())
}

/// A traffic agent: its home RSU, shard and local objective.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub agent_id: AgentId,
    pub rsu_id: RsuId,
    pub params: ParamVector,
    pub shard: Partition,
    pub prox: ProximalSpec,
    pub epochs: usize,
    pub sgd: SgdOptions,
}

impl AgentState {
    pub fn new(shard: Partition, init: &ParamVector, prox: ProximalSpec, epochs: usize, sgd: SgdOptions) -> Result<Self, FedError> {
        prox.validate()?;
        sgd.validate()?;
        if epochs == 0 {
            return Err(FedError::Setup("epochs must be at least 1".into()));
        }
        Ok(Self { agent_id: shard.agent_id, rsu_id: shard.rsu_id, params: init.clone(), shard, prox, epochs, sgd })
    }

    /// Restarts from the received roadside model and trains `epochs` epochs
    /// with the received pair held fixed as anchors.
    pub fn train_round(
        &mut self,
        data: &LabeledDataset,
        w_k: &ParamVector,
        w: &ParamVector,
        epochs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<&ParamVector, FedError> {
        self.params.copy_from(w_k)?;
        let anchors = Anchors { rsu: w_k, cloud: w };
        for _ in 0..epochs {
            sgd_epoch_indices(&mut self.params, data, &self.shard.example_indices, anchors, self.prox, self.sgd, rng)?;
        }
        Ok(&self.params)
    }
}

/// Trains one agent for a full round of `agent.epochs` epochs, drawing its
/// shuffles from the `(seed, round, agent)` stream.
pub fn agent_round<'a>(
    agent: &'a mut AgentState,
    data: &LabeledDataset,
    w_k: &ParamVector,
    w: &ParamVector,
    seed: u64,
    round: u64,
) -> Result<&'a ParamVector, FedError> {
    let mut rng = training_rng(seed, round, 0, agent.agent_id);
    let epochs = agent.epochs;
    agent.train_round(data, w_k, w, epochs, &mut rng)
}

fn training_rng(seed: u64, round: u64, inner: usize, agent: AgentId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, &[tag::TRAIN, round, inner as u64, agent as u64]))
}

#[derive(Debug, Clone)]
pub struct RsuState {
    pub rsu_id: RsuId,
    pub roadside_params: ParamVector,
    pub agent_ids: Vec<AgentId>,
    pub het: HeterogeneityConfig,
}

impl RsuState {
    pub fn new(rsu_id: RsuId, init: &ParamVector, mut agent_ids: Vec<AgentId>, het: HeterogeneityConfig) -> Result<Self, FedError> {
        het.validate()?;
        if agent_ids.is_empty() {
            return Err(FedError::Setup(format!("RSU {rsu_id} has no agents")));
        }
        agent_ids.sort_unstable();
        Ok(Self { rsu_id, roadside_params: init.clone(), agent_ids, het })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuRoundReport {
    pub rsu_id: RsuId,
    /// No local round had a connected agent; the previous roadside model was kept.
    pub stale: bool,
    pub local_rounds_aggregated: usize,
    pub agent_trainings: usize,
}

/// `lar` local rounds at one RSU: select connected agents, hand them the
/// current roadside model and the fixed global model, aggregate their results.
#[allow(clippy::too_many_arguments)]
pub fn rsu_round(
    rsu: &mut RsuState,
    agents: &mut BTreeMap<AgentId, AgentState>,
    data: &LabeledDataset,
    w: &ParamVector,
    connectivity: &ConnectivityOracle,
    round: u64,
    seed: u64,
) -> Result<RsuRoundReport, FedError> {
    let mut report = RsuRoundReport { rsu_id: rsu.rsu_id, stale: true, local_rounds_aggregated: 0, agent_trainings: 0 };
    for inner in 0..rsu.het.lar {
        let connected = connectivity.connected_agents(rsu.rsu_id)?;
        let mut sizes = BTreeMap::new();
        for id in connected {
            let agent = agents.get(&id).ok_or(FedError::MissingModel(id))?;
            if agent.rsu_id != rsu.rsu_id {
                return Err(FedError::ForeignAgent { agent: id, rsu: rsu.rsu_id });
            }
            sizes.insert(id, agent.shard.n_points);
        }
        let sel = SelectionSet::new(rsu.rsu_id, round, &sizes);
        if sel.is_empty() {
            continue;
        }

        let w_k = rsu.roadside_params.clone();
        for id in sel.selected() {
            let agent = agents.get_mut(&id).ok_or(FedError::MissingModel(id))?;
            let budget = connectivity.epoch_budget(rsu.rsu_id, id, agent.epochs, round)?;
            let mut rng = training_rng(seed, round, inner, id);
            agent.train_round(data, &w_k, w, budget, &mut rng)?;
            report.agent_trainings += 1;
        }
        let models: BTreeMap<AgentId, &ParamVector> = sel.selected().map(|id| (id, &agents[&id].params)).collect();
        let next = rsu_aggregate(&models, &sel)?;
        if !next.is_finite() {
            return Err(FedError::NonFinite { round, location: format!("RSU {} local round {}", rsu.rsu_id, inner) });
        }
        rsu.roadside_params = next;
        report.local_rounds_aggregated += 1;
        report.stale = false;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct CloudState {
    pub global_params: ParamVector,
    pub rsu_ids: Vec<RsuId>,
    /// Completed global aggregations.
    pub round: u64,
}

/// Per-RSU settings for building a [`Hierarchy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsuSetup {
    pub het: HeterogeneityConfig,
    pub prox: ProximalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRoundReport {
    /// 1-based index of the completed global round.
    pub round: u64,
    pub census: Vec<RsuCensus>,
    pub rsus: Vec<RsuRoundReport>,
}

impl GlobalRoundReport {
    pub fn stale_rsus(&self) -> BTreeSet<RsuId> {
        self.rsus.iter().filter(|r| r.stale).map(|r| r.rsu_id).collect()
    }
}

/// Cloud, RSUs and agents wired together for a run.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub cloud: CloudState,
    pub rsus: BTreeMap<RsuId, RsuState>,
    pub agents: BTreeMap<AgentId, AgentState>,
    /// `n_k / n`, fixed from the registered shard sizes.
    pub rsu_weights: BTreeMap<RsuId, f64>,
    seed: u64,
}

impl Hierarchy {
    /// Initializes the global, every roadside and every agent model to `init`.
    pub fn new(
        init: &ParamVector,
        plan: &PartitionPlan,
        setups: &BTreeMap<RsuId, RsuSetup>,
        epochs: usize,
        sgd: SgdOptions,
        seed: u64,
    ) -> Result<Self, FedError> {
        let mut agents = BTreeMap::new();
        let mut members: BTreeMap<RsuId, Vec<AgentId>> = BTreeMap::new();
        let mut sizes: BTreeMap<RsuId, usize> = BTreeMap::new();
        for p in &plan.partitions {
            let setup = setups.get(&p.rsu_id).ok_or_else(|| FedError::Setup(format!("no settings for RSU {}", p.rsu_id)))?;
            if p.example_indices.is_empty() {
                return Err(FedError::Setup(format!("agent {} has an empty shard", p.agent_id)));
            }
            if agents.insert(p.agent_id, AgentState::new(p.clone(), init, setup.prox, epochs, sgd)?).is_some() {
                return Err(FedError::Setup(format!("agent {} listed twice", p.agent_id)));
            }
            members.entry(p.rsu_id).or_default().push(p.agent_id);
            *sizes.entry(p.rsu_id).or_default() += p.n_points;
        }
        if members.is_empty() {
            return Err(FedError::Setup("partition plan has no agents".into()));
        }
        let mut rsus = BTreeMap::new();
        for (rsu_id, ids) in members {
            rsus.insert(rsu_id, RsuState::new(rsu_id, init, ids, setups[&rsu_id].het)?);
        }
        let total: usize = sizes.values().sum();
        let rsu_weights = sizes.iter().map(|(&k, &n)| (k, n as f64 / total as f64)).collect();
        let cloud = CloudState { global_params: init.clone(), rsu_ids: rsus.keys().copied().collect(), round: 0 };
        Ok(Self { cloud, rsus, agents, rsu_weights, seed })
    }

    pub fn global(&self) -> &ParamVector {
        &self.cloud.global_params
    }

    /// A connectivity oracle matching this hierarchy's RSUs and agents.
    pub fn connectivity(&self) -> Result<ConnectivityOracle, FedError> {
        Ok(ConnectivityOracle::new(self.seed, self.rsus.values().map(|r| (r.rsu_id, r.het, r.agent_ids.clone())))?)
    }

    /// One global round: refresh connectivity, broadcast `w` as every
    /// roadside model, run each RSU's local rounds, aggregate at the cloud.
    pub fn global_round(&mut self, data: &LabeledDataset, oracle: &mut ConnectivityOracle) -> Result<GlobalRoundReport, FedError> {
        let round = self.cloud.round;
        oracle.resample(round);
        let census = oracle.census();
        let w = self.cloud.global_params.clone();
        let mut reports = Vec::with_capacity(self.rsus.len());
        for rsu in self.rsus.values_mut() {
            rsu.roadside_params.copy_from(&w)?;
            reports.push(rsu_round(rsu, &mut self.agents, data, &w, oracle, round, self.seed)?);
        }
        let models: BTreeMap<RsuId, &ParamVector> = self.rsus.iter().map(|(&k, r)| (k, &r.roadside_params)).collect();
        let next = cloud_aggregate(&models, &self.rsu_weights)?;
        if !next.is_finite() {
            return Err(FedError::NonFinite { round: round + 1, location: "cloud aggregation".into() });
        }
        self.cloud.global_params = next;
        self.cloud.round += 1;
        Ok(GlobalRoundReport { round: self.cloud.round, census, rsus: reports })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_label_skew, synth_dataset, Scenario};
    use crate::model::{init_params, ModelArchitecture};

    fn scalar(v: f64) -> ParamVector {
        let arch = ModelArchitecture::new(1, 1, 1).unwrap();
        ParamVector::from_values(arch, vec![v; 4]).unwrap()
    }

    #[test]
    fn weighted_mean_of_three() {
        let models: BTreeMap<AgentId, ParamVector> = [(0, scalar(1.0)), (1, scalar(2.0)), (2, scalar(3.0))].into_iter().collect();
        let sizes: BTreeMap<AgentId, usize> = [(0, 1), (1, 2), (2, 3)].into_iter().collect();
        let out = rsu_aggregate(&models, &SelectionSet::new(0, 0, &sizes)).unwrap();
        for v in out.as_slice() {
            assert!((v - 14.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_weights_give_midpoint() {
        let models: BTreeMap<AgentId, ParamVector> = [(3, scalar(-1.0)), (7, scalar(5.0))].into_iter().collect();
        let sizes: BTreeMap<AgentId, usize> = [(3, 10), (7, 10)].into_iter().collect();
        let out = rsu_aggregate(&models, &SelectionSet::new(0, 0, &sizes)).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn identical_models_are_a_fixed_point() {
        let arch = ModelArchitecture::new(4, 3, 2).unwrap();
        let m = init_params(arch, 1);
        let models: BTreeMap<AgentId, ParamVector> = (0..5).map(|i| (i, m.clone())).collect();
        let sizes: BTreeMap<AgentId, usize> = (0..5).map(|i| (i, i + 1)).collect();
        let out = rsu_aggregate(&models, &SelectionSet::new(0, 0, &sizes)).unwrap();
        for (a, b) in out.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn empty_selection_and_missing_models() {
        let models: BTreeMap<AgentId, ParamVector> = BTreeMap::new();
        let empty = SelectionSet::new(4, 9, &BTreeMap::new());
        assert!(matches!(rsu_aggregate(&models, &empty), Err(FedError::NoConnectedAgents { rsu: 4, round: 9 })));
        let sizes: BTreeMap<AgentId, usize> = [(1, 3)].into_iter().collect();
        assert!(matches!(rsu_aggregate(&models, &SelectionSet::new(0, 0, &sizes)), Err(FedError::MissingModel(1))));
    }

    #[test]
    fn cloud_passthrough_and_errors() {
        let one: BTreeMap<RsuId, ParamVector> = [(2, scalar(0.25))].into_iter().collect();
        let w: BTreeMap<RsuId, f64> = [(2, 1.0)].into_iter().collect();
        assert_eq!(cloud_aggregate(&one, &w).unwrap(), scalar(0.25));
        let empty: BTreeMap<RsuId, ParamVector> = BTreeMap::new();
        assert!(matches!(cloud_aggregate(&empty, &w), Err(FedError::EmptyAggregation)));
        let bad: BTreeMap<RsuId, f64> = [(2, 0.9)].into_iter().collect();
        assert!(matches!(cloud_aggregate(&one, &bad), Err(FedError::WeightSum(_))));
    }

    #[test]
    fn baseline_presets() {
        assert_eq!(make_baseline("FedAvg").unwrap(), FrameworkParams { mu1: 0.0, mu2: 0.0, lar: 1 });
        let prox = make_baseline("fedprox").unwrap();
        assert_eq!((prox.mu1, prox.lar), (0.0, 1));
        assert!(prox.mu2 > 0.0);
        let hier = make_baseline("HierFAVG").unwrap();
        assert_eq!((hier.mu1, hier.mu2), (0.0, 0.0));
        assert!(hier.lar > 1);
        let h2 = make_baseline("h2fed").unwrap();
        assert!(h2.mu1 > 0.0 && h2.mu2 > 0.0 && h2.lar > 1);
        assert!(matches!(make_baseline("fedsgd"), Err(FedError::UnknownBaseline(_))));
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
    }

    fn small_hierarchy(csr: f64, lar: usize, lr: f64) -> (LabeledDataset, Hierarchy) {
        let ds = synth_dataset(400, 2).unwrap();
        let plan = partition_label_skew(&ds, 8, 2, Scenario::ScenarioII, 5, 3).unwrap();
        let arch = ModelArchitecture::new(784, 8, 10).unwrap();
        let init = init_params(arch, 4);
        let het = HeterogeneityConfig::new(csr, 1, 1.0, lar).unwrap();
        let setups = (0..2).map(|k| (k, RsuSetup { het, prox: ProximalSpec::none() })).collect();
        let h = Hierarchy::new(&init, &plan, &setups, 1, SgdOptions { lr, batch_size: 16 }, 11).unwrap();
        (ds, h)
    }

    #[test]
    fn zero_rate_agent_returns_roadside_model() {
        let (ds, mut h) = small_hierarchy(1.0, 1, 0.0);
        let w_k = init_params(h.global().arch(), 99);
        let w = h.global().clone();
        let agent = h.agents.get_mut(&0).unwrap();
        let out = agent_round(agent, &ds, &w_k, &w, 1, 0).unwrap();
        assert_eq!(out, &w_k);
    }

    #[test]
    fn agent_round_is_deterministic() {
        let (ds, h) = small_hierarchy(1.0, 1, 0.05);
        let w = h.global().clone();
        let mut a = h.agents[&2].clone();
        let mut b = h.agents[&2].clone();
        let out_a = agent_round(&mut a, &ds, &w, &w, 5, 1).unwrap().clone();
        let out_b = agent_round(&mut b, &ds, &w, &w, 5, 1).unwrap().clone();
        assert_eq!(out_a, out_b);
        assert_ne!(out_a, w);
    }

    #[test]
    fn disconnected_rsu_is_stale() {
        let (ds, mut h) = small_hierarchy(0.0, 2, 0.05);
        let mut oracle = h.connectivity().unwrap();
        let before = h.global().clone();
        let report = h.global_round(&ds, &mut oracle).unwrap();
        assert_eq!(report.stale_rsus().len(), 2);
        assert_eq!(h.global(), &before);
        assert_eq!(report.round, 1);
        assert_eq!(h.cloud.round, 1);
    }

    #[test]
    fn local_rounds_multiply_training() {
        let (ds, mut one) = small_hierarchy(1.0, 1, 0.05);
        let (_, mut three) = small_hierarchy(1.0, 3, 0.05);
        let mut o1 = one.connectivity().unwrap();
        let mut o3 = three.connectivity().unwrap();
        let r1 = one.global_round(&ds, &mut o1).unwrap();
        let r3 = three.global_round(&ds, &mut o3).unwrap();
        let count = |r: &GlobalRoundReport| r.rsus.iter().map(|x| x.agent_trainings).sum::<usize>();
        assert_eq!(count(&r3), 3 * count(&r1));
        assert!(r3.rsus.iter().all(|x| x.local_rounds_aggregated == 3));
    }

    #[test]
    fn cloud_weights_follow_registered_sizes() {
        let (_, h) = small_hierarchy(0.5, 1, 0.05);
        let sum: f64 = h.rsu_weights.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(h.rsus[&0].agent_ids, vec![0, 1, 2, 3]);
    }
}
