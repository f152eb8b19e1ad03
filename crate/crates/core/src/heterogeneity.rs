//! Communication and computation heterogeneity.
//!
//! Each RSU owns an independent random stream. On every Stable Connection
//! Duration boundary each of its agents is redrawn as connected with
//! probability CSR; between boundaries the states hold. Agents that are
//! connected may still fall short of the requested epoch count with
//! probability `1 - FSR`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AgentId, RsuId};
use crate::seeds::{stream_seed, tag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeterogeneityError {
    #[error("csr must lie in [0, 1], got {0}")]
    Csr(f64),
    #[error("fsr must lie in (0, 1], got {0}")]
    Fsr(f64),
    #[error("scd_seconds must be at least 1")]
    Scd,
    #[error("lar must be at least 1")]
    Lar,
    #[error("requested epochs must be at least 1")]
    Epochs,
    #[error("unknown RSU {0}")]
    UnknownRsu(RsuId),
    #[error("unknown agent {agent} at RSU {rsu}")]
    UnknownAgent { rsu: RsuId, agent: AgentId },
    #[error("RSU {rsu} has {expected} agents, got {found} states")]
    StateCount { rsu: RsuId, expected: usize, found: usize },
}

/// Per-RSU heterogeneity knobs: connection success ratio, stable connection
/// duration in seconds (one global round per second), full-task success ratio
/// and local aggregation rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeterogeneityConfig {
    pub csr: f64,
    pub scd_seconds: u64,
    pub fsr: f64,
    pub lar: usize,
}

impl Default for HeterogeneityConfig {
    fn default() -> Self {
        Self { csr: 1.0, scd_seconds: 1, fsr: 1.0, lar: 1 }
    }
}

impl HeterogeneityConfig {
    pub fn new(csr: f64, scd_seconds: u64, fsr: f64, lar: usize) -> Result<Self, HeterogeneityError> {
        let cfg = Self { csr, scd_seconds, fsr, lar };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HeterogeneityError> {
        if !(0.0..=1.0).contains(&self.csr) {
            return Err(HeterogeneityError::Csr(self.csr));
        }
        if !(self.fsr > 0.0 && self.fsr <= 1.0) {
            return Err(HeterogeneityError::Fsr(self.fsr));
        }
        if self.scd_seconds == 0 {
            return Err(HeterogeneityError::Scd);
        }
        if self.lar == 0 {
            return Err(HeterogeneityError::Lar);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct RsuLink {
    cfg: HeterogeneityConfig,
    agents: Vec<AgentId>,
    connected: Vec<bool>,
    rng: ChaCha8Rng,
    drawn: bool,
}

/// Connected agents versus registered agents at one RSU for the current window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsuCensus {
    pub rsu_id: RsuId,
    pub connected: usize,
    pub registered: usize,
}

impl RsuCensus {
    pub fn csr(&self) -> f64 {
        if self.registered == 0 {
            0.0
        } else {
            self.connected as f64 / self.registered as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectivityOracle {
    seed: u64,
    links: BTreeMap<RsuId, RsuLink>,
}

impl ConnectivityOracle {
    /// Every agent starts disconnected until the first resample.
    pub fn new(
        seed: u64,
        rsus: impl IntoIterator<Item = (RsuId, HeterogeneityConfig, Vec<AgentId>)>,
    ) -> Result<Self, HeterogeneityError> {
        let mut links = BTreeMap::new();
        for (rsu, cfg, mut agents) in rsus {
            cfg.validate()?;
            agents.sort_unstable();
            let n = agents.len();
            let rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[tag::LINK, rsu as u64]));
            links.insert(rsu, RsuLink { cfg, agents, connected: vec![false; n], rng, drawn: false });
        }
        Ok(Self { seed, links })
    }

    fn link(&self, rsu: RsuId) -> Result<&RsuLink, HeterogeneityError> {
        self.links.get(&rsu).ok_or(HeterogeneityError::UnknownRsu(rsu))
    }

    pub fn config(&self, rsu: RsuId) -> Result<&HeterogeneityConfig, HeterogeneityError> {
        Ok(&self.link(rsu)?.cfg)
    }

    pub fn rsu_ids(&self) -> impl Iterator<Item = RsuId> + '_ {
        self.links.keys().copied()
    }

    /// Redraws connection states at RSUs whose window starts at `round`
    /// (0-based), and at any RSU not drawn yet.
    pub fn resample(&mut self, round: u64) {
        for link in self.links.values_mut() {
            if link.drawn && round % link.cfg.scd_seconds != 0 {
                continue;
            }
            let csr = link.cfg.csr;
            for state in link.connected.iter_mut() {
                *state = link.rng.gen::<f64>() < csr;
            }
            link.drawn = true;
        }
    }

    pub fn is_connected(&self, rsu: RsuId, agent: AgentId) -> Result<bool, HeterogeneityError> {
        let link = self.link(rsu)?;
        let pos = link.agents.binary_search(&agent).map_err(|_| HeterogeneityError::UnknownAgent { rsu, agent })?;
        Ok(link.connected[pos])
    }

    /// Connected agents at `rsu`, ascending.
    pub fn connected_agents(&self, rsu: RsuId) -> Result<Vec<AgentId>, HeterogeneityError> {
        let link = self.link(rsu)?;
        Ok(link.agents.iter().zip(&link.connected).filter(|(_, &c)| c).map(|(&a, _)| a).collect())
    }

    pub fn states(&self, rsu: RsuId) -> Result<&[bool], HeterogeneityError> {
        Ok(&self.link(rsu)?.connected)
    }

    /// Overrides the connection states of one RSU's agents (ascending agent
    /// order). Intended for tests and what-if runs.
    pub fn set_states(&mut self, rsu: RsuId, states: &[bool]) -> Result<(), HeterogeneityError> {
        let link = self.links.get_mut(&rsu).ok_or(HeterogeneityError::UnknownRsu(rsu))?;
        if states.len() != link.agents.len() {
            return Err(HeterogeneityError::StateCount { rsu, expected: link.agents.len(), found: states.len() });
        }
        link.connected.copy_from_slice(states);
        link.drawn = true;
        Ok(())
    }

    /// Epochs an agent completes this round: `requested` with probability FSR,
    /// otherwise uniform in `[1, requested - 1]`. Never zero.
    pub fn epoch_budget(&self, rsu: RsuId, agent: AgentId, requested: usize, round: u64) -> Result<usize, HeterogeneityError> {
        if requested < 1 {
            return Err(HeterogeneityError::Epochs);
        }
        let fsr = self.link(rsu)?.cfg.fsr;
        if requested == 1 || fsr >= 1.0 {
            return Ok(requested);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &[tag::BUDGET, rsu as u64, agent as u64, round]));
        if rng.gen::<f64>() < fsr {
            Ok(requested)
        } else {
            Ok(rng.gen_range(1..requested))
        }
    }

    pub fn census(&self) -> Vec<RsuCensus> {
        self.links
            .iter()
            .map(|(&rsu_id, link)| RsuCensus {
                rsu_id,
                connected: link.connected.iter().filter(|&&c| c).count(),
                registered: link.agents.len(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(csr: f64, scd: u64, n: usize) -> ConnectivityOracle {
        let cfg = HeterogeneityConfig::new(csr, scd, 1.0, 1).unwrap();
        ConnectivityOracle::new(42, [(0, cfg, (0..n).collect())]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(HeterogeneityConfig::new(1.1, 1, 1.0, 1).is_err());
        assert!(HeterogeneityConfig::new(-0.1, 1, 1.0, 1).is_err());
        assert!(HeterogeneityConfig::new(0.5, 0, 1.0, 1).is_err());
        assert!(HeterogeneityConfig::new(0.5, 1, 0.0, 1).is_err());
        assert!(HeterogeneityConfig::new(0.5, 1, 1.0, 0).is_err());
        assert!(HeterogeneityConfig::new(0.0, 1, 1.0, 1).is_ok());
    }

    #[test]
    fn extreme_csr() {
        let mut all = oracle(1.0, 1, 10);
        let mut none = oracle(0.0, 1, 10);
        for r in 0..20 {
            all.resample(r);
            none.resample(r);
            assert_eq!(all.connected_agents(0).unwrap().len(), 10);
            assert!(none.connected_agents(0).unwrap().is_empty());
        }
        assert_eq!(all.census()[0], RsuCensus { rsu_id: 0, connected: 10, registered: 10 });
    }

    #[test]
    fn states_hold_within_a_window() {
        let mut o = oracle(0.5, 4, 50);
        o.resample(0);
        let first = o.states(0).unwrap().to_vec();
        for r in 1..4 {
            o.resample(r);
            assert_eq!(o.states(0).unwrap(), first.as_slice());
        }
        o.resample(4);
        assert_ne!(o.states(0).unwrap(), first.as_slice());
    }

    #[test]
    fn forced_states_census() {
        let mut o = oracle(0.5, 1, 10);
        let mut states = [false; 10];
        states[..3].iter_mut().for_each(|s| *s = true);
        o.set_states(0, &states).unwrap();
        let c = o.census()[0];
        assert_eq!((c.connected, c.registered), (3, 10));
        assert!((c.csr() - 0.3).abs() < 1e-15);
        assert!(o.set_states(0, &[true]).is_err());
        assert!(o.set_states(3, &states).is_err());
    }

    #[test]
    fn budget_rules() {
        let cfg = HeterogeneityConfig::new(1.0, 1, 0.3, 1).unwrap();
        let o = ConnectivityOracle::new(1, [(0, cfg, vec![0, 1])]).unwrap();
        assert!(o.epoch_budget(0, 0, 0, 0).is_err());
        for r in 0..50 {
            assert_eq!(o.epoch_budget(0, 1, 1, r).unwrap(), 1);
            let b = o.epoch_budget(0, 1, 5, r).unwrap();
            assert!((1..=5).contains(&b));
        }
        let full = oracle(1.0, 1, 2);
        assert!((0..50).all(|r| full.epoch_budget(0, 0, 4, r).unwrap() == 4));
    }

    #[test]
    fn rsus_draw_from_separate_streams() {
        let a = HeterogeneityConfig::new(0.3, 1, 1.0, 1).unwrap();
        let b = HeterogeneityConfig::new(0.6, 1, 1.0, 1).unwrap();
        let a2 = HeterogeneityConfig::new(0.9, 2, 1.0, 1).unwrap();
        let mut o1 = ConnectivityOracle::new(5, [(0, a, (0..20).collect()), (1, b, (20..40).collect())]).unwrap();
        let mut o2 = ConnectivityOracle::new(5, [(0, a2, (0..20).collect()), (1, b, (20..40).collect())]).unwrap();
        for r in 0..30 {
            o1.resample(r);
            o2.resample(r);
            assert_eq!(o1.states(1).unwrap(), o2.states(1).unwrap());
        }
    }
}
